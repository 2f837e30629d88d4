#include <atomic>
#include <cstdlib>
#include <cstring>

#include "gliopipe/simd/kernels.hpp"

namespace gliopipe::simd {

namespace {

Isa initial_isa() {
  if (const char* env = std::getenv("GLIOPIPE_SIMD"); env != nullptr && std::strcmp(env, "scalar") == 0)
    return Isa::scalar;
  return detected_isa();
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

std::string_view to_string(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

Isa detected_isa() {
#if defined(GLIOPIPE_HAVE_AVX2)
  static const bool ok = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return ok ? Isa::avx2 : Isa::scalar;
#else
  return Isa::scalar;
#endif
}

Isa active_isa() { return active().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (isa == Isa::avx2 && detected_isa() != Isa::avx2) isa = Isa::scalar;
  active().store(isa, std::memory_order_relaxed);
}

#if defined(GLIOPIPE_HAVE_AVX2)
#define GLIOPIPE_DISPATCH(call)                   \
  if (active_isa() == Isa::avx2) return avx2::call; \
  return scalar::call
#else
#define GLIOPIPE_DISPATCH(call) return scalar::call
#endif

void sgemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha, const float* a,
           std::size_t lda, const float* b, std::size_t ldb, float beta, float* c, std::size_t ldc) {
  GLIOPIPE_DISPATCH(sgemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc));
}

void dgemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
           std::size_t lda, const double* b, std::size_t ldb, double beta, double* c, std::size_t ldc) {
  scalar::dgemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void saxpy(std::size_t n, float alpha, const float* x, float* y) { GLIOPIPE_DISPATCH(saxpy(n, alpha, x, y)); }

void sscale_shift(std::size_t n, const float* x, float scale, float shift, float* y) {
  GLIOPIPE_DISPATCH(sscale_shift(n, x, scale, shift, y));
}

void srelu(std::size_t n, const float* x, float* y) { GLIOPIPE_DISPATCH(srelu(n, x, y)); }

void ssum_sumsq(std::size_t n, const float* x, double& sum, double& sumsq) {
  GLIOPIPE_DISPATCH(ssum_sumsq(n, x, sum, sumsq));
}

#undef GLIOPIPE_DISPATCH

}  // namespace gliopipe::simd
