#pragma once

// Dense row-major inner loops used by the tape. Every kernel has a scalar
// reference implementation; vectorized variants are selected once at runtime
// from the host CPU (override with DMO_SIMD=scalar|avx2|neon).

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace dmo::kernels {

enum class Backend { scalar, avx2, neon };

std::string_view backend_name(Backend backend);

struct KernelTable {
  Backend backend;

  double (*dot)(const double* x, const double* y, std::size_t n);

  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);

  // C(m,n) (+)= A(m,k) * B(k,n)
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, bool accumulate);

  // C(m,n) (+)= A(k,m)^T * B(k,n)
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, bool accumulate);

  // C(m,n) (+)= A(m,k) * B(n,k)^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, bool accumulate);
};

// Backends that both compiled in and are supported by this CPU.
std::vector<Backend> available_backends();

const KernelTable& table(Backend backend);

// The process-wide table. Chosen on first use and fixed afterwards so that
// results are reproducible within a process.
const KernelTable& active();

namespace detail {
const KernelTable& scalar_table();
#if defined(__x86_64__) || defined(_M_X64)
const KernelTable& avx2_table();
#endif
#if defined(__aarch64__) && defined(__ARM_NEON)
const KernelTable& neon_table();
#endif
}  // namespace detail

}  // namespace dmo::kernels
