#include <cstdlib>
#include <stdexcept>
#include <string>

#include "dmo/kernels.hpp"

namespace dmo::kernels {

std::string_view backend_name(Backend backend) {
  switch (backend) {
    case Backend::scalar: return "scalar";
    case Backend::avx2: return "avx2";
    case Backend::neon: return "neon";
  }
  return "unknown";
}

namespace {

bool cpu_supports(Backend backend) {
  switch (backend) {
    case Backend::scalar: return true;
    case Backend::avx2:
#if defined(__x86_64__) || defined(_M_X64)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Backend::neon:
#if defined(__aarch64__) && defined(__ARM_NEON)
      return true;
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& choose() {
  if (const char* env = std::getenv("DMO_SIMD"); env != nullptr && *env != '\0') {
    const std::string want(env);
    for (Backend b : available_backends()) {
      if (backend_name(b) == want) return table(b);
    }
    // unknown or unsupported request falls back to the reference path
    return detail::scalar_table();
  }
  const auto backends = available_backends();
  return table(backends.back());
}

}  // namespace

std::vector<Backend> available_backends() {
  std::vector<Backend> out{Backend::scalar};
  for (Backend b : {Backend::avx2, Backend::neon}) {
    if (cpu_supports(b)) out.push_back(b);
  }
  return out;
}

const KernelTable& table(Backend backend) {
  if (!cpu_supports(backend)) {
    throw std::invalid_argument("kernel backend not available: " + std::string(backend_name(backend)));
  }
  switch (backend) {
    case Backend::scalar: return detail::scalar_table();
#if defined(__x86_64__) || defined(_M_X64)
    case Backend::avx2: return detail::avx2_table();
#endif
#if defined(__aarch64__) && defined(__ARM_NEON)
    case Backend::neon: return detail::neon_table();
#endif
    default: break;
  }
  return detail::scalar_table();
}

const KernelTable& active() {
  static const KernelTable& t = choose();
  return t;
}

}  // namespace dmo::kernels
