#include <cmath>

#include "doctest.h"
#include "dmo/archive.hpp"
#include "dmo/kernels.hpp"
#include "dmo/nn.hpp"
#include "dmo/rng.hpp"
#include "oracles.hpp"

using namespace dmo;

namespace {

std::vector<double> draws(CounterRng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

}  // namespace

TEST_CASE("vector backends agree with the scalar reference") {
  const auto& ref = kernels::table(kernels::Backend::scalar);
  CounterRng rng(1, StreamRole::test, 200);
  for (kernels::Backend b : kernels::available_backends()) {
    CAPTURE(kernels::backend_name(b));
    const auto& k = kernels::table(b);
    for (int trial = 0; trial < 40; ++trial) {
      const std::size_t m = 1 + rng.below(9);
      const std::size_t n = 1 + rng.below(9);
      const std::size_t kk = 1 + rng.below(9);
      const auto x = draws(rng, kk);
      const auto y = draws(rng, kk);
      CHECK(k.dot(x.data(), y.data(), kk) == doctest::Approx(ref.dot(x.data(), y.data(), kk)).epsilon(1e-13));

      auto y1 = y, y2 = y;
      k.axpy(0.7, x.data(), y1.data(), kk);
      ref.axpy(0.7, x.data(), y2.data(), kk);
      for (std::size_t i = 0; i < kk; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-14));

      const auto a_mk = draws(rng, m * kk);
      const auto b_kn = draws(rng, kk * n);
      const auto a_km = draws(rng, kk * m);
      const auto b_nk = draws(rng, n * kk);
      const auto c0 = draws(rng, m * n);
      for (bool acc : {false, true}) {
        auto c1 = c0, c2 = c0;
        k.gemm_nn(m, n, kk, a_mk.data(), b_kn.data(), c1.data(), acc);
        ref.gemm_nn(m, n, kk, a_mk.data(), b_kn.data(), c2.data(), acc);
        for (std::size_t i = 0; i < m * n; ++i) CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-13));
        c1 = c0, c2 = c0;
        k.gemm_tn(m, n, kk, a_km.data(), b_kn.data(), c1.data(), acc);
        ref.gemm_tn(m, n, kk, a_km.data(), b_kn.data(), c2.data(), acc);
        for (std::size_t i = 0; i < m * n; ++i) CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-13));
        c1 = c0, c2 = c0;
        k.gemm_nt(m, n, kk, a_mk.data(), b_nk.data(), c1.data(), acc);
        ref.gemm_nt(m, n, kk, a_mk.data(), b_nk.data(), c2.data(), acc);
        for (std::size_t i = 0; i < m * n; ++i) CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-13));
      }
    }
  }
}

TEST_CASE("scalar gemm matches a naive triple loop") {
  const auto& ref = kernels::table(kernels::Backend::scalar);
  CounterRng rng(2, StreamRole::test, 201);
  const std::size_t m = 3, n = 4, k = 5;
  const auto a = draws(rng, m * k);
  const auto b = draws(rng, k * n);
  std::vector<double> c(m * n);
  ref.gemm_nn(m, n, k, a.data(), b.data(), c.data(), false);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      CHECK(c[i * n + j] == doctest::Approx(s).epsilon(1e-14));
    }
  }
}

TEST_CASE("counter rng streams are pure functions of their key") {
  CounterRng a(7, StreamRole::reset, 3, 1);
  CounterRng b(7, StreamRole::reset, 3, 1);
  CounterRng c(7, StreamRole::reset, 3, 2);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs = differs || x != c.next_u64();
  }
  CHECK(differs);
}

TEST_CASE("uniform and normal draws have the right moments") {
  CounterRng rng(0, StreamRole::test, 202);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    CHECK_MESSAGE((u >= 0.0 && u < 1.0), "uniform out of range");
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(std::fabs(sn / n) < 0.01);
  CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));
  for (int i = 0; i < 1000; ++i) CHECK(rng.below(7) < 7);
}

TEST_CASE("adam with zero learning rate leaves parameters unchanged") {
  std::vector<Tensor> p{Tensor::vector({1, 2, 3})};
  const std::vector<Tensor> g{Tensor::vector({0.1, -0.2, 0.3})};
  Adam opt({}, p);
  opt.step(p, g, 0.0);
  CHECK(p[0] == Tensor::vector({1, 2, 3}));
}

TEST_CASE("adam first step moves each coordinate by about lr against the gradient sign") {
  std::vector<Tensor> p{Tensor::vector({1, 2})};
  const std::vector<Tensor> g{Tensor::vector({0.5, -3.0})};
  Adam opt({}, p);
  opt.step(p, g, 0.01);
  CHECK(p[0][0] == doctest::Approx(0.99).epsilon(1e-6));
  CHECK(p[0][1] == doctest::Approx(2.01).epsilon(1e-6));
}

TEST_CASE("global norm clipping") {
  std::vector<Tensor> g{Tensor::vector({3, 0}), Tensor::vector({4})};
  CHECK(clip_by_global_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(global_norm(g) == doctest::Approx(1.0));
  CHECK(g[0][0] == doctest::Approx(0.6));
  std::vector<Tensor> small{Tensor::vector({0.1})};
  clip_by_global_norm(small, 1.0);
  CHECK(small[0][0] == 0.1);
}

TEST_CASE("polyak update with tau 1 copies the online parameters") {
  std::vector<Tensor> target{Tensor::vector({0, 0})};
  const std::vector<Tensor> online{Tensor::vector({1, -2})};
  polyak_update(target, online, 0.25);
  CHECK(target[0][0] == doctest::Approx(0.25));
  polyak_update(target, online, 1.0);
  CHECK(target[0] == online[0]);
}

TEST_CASE("mlp evaluate matches the tape forward pass bitwise") {
  CounterRng rng(4, StreamRole::test, 203);
  Mlp net({3, {6, 5}, 2, Activation::elu}, rng);
  const Tensor x = dmo::testing::random_tensor(rng, {7, 3});
  Tape t;
  const auto bound = net.bind_constant(t);
  CHECK(bitwise_equal(t.value(net.forward(t, bound, t.constant(x))), net.evaluate(x)));
}

TEST_CASE("archive round trip") {
  Archive ar;
  ar.put("w", Tensor::matrix(2, 2, {1, 2, 3, 4.5}));
  ar.put_text("cfg", "gamma = 0.99\n");
  ar.put_u64("epoch", 12345678901234ULL);
  ar.put_tensors("net", {Tensor::vector({1}), Tensor::vector({2, 3})});
  const Archive back = Archive::deserialize(ar.serialize());
  CHECK(back.get("w") == ar.get("w"));
  CHECK(back.get_text("cfg") == "gamma = 0.99\n");
  CHECK(back.get_u64("epoch") == 12345678901234ULL);
  CHECK(back.get_tensors("net").size() == 2);
  CHECK(back.serialize().substr(0, 4) == "DMO1");
}

TEST_CASE("archive rejects corrupted bytes") {
  Archive ar;
  ar.put("w", Tensor::vector({1, 2}));
  std::string bytes = ar.serialize();
  bytes[0] = 'X';
  CHECK_THROWS(Archive::deserialize(bytes));
  CHECK_THROWS(Archive::deserialize(ar.serialize().substr(0, 10)));
}
