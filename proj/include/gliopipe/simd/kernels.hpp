#pragma once

#include <cstddef>
#include <string_view>

// Dense kernels behind the convolution and normalization layers. Every kernel
// has a portable scalar reference; x86-64 builds add an AVX2+FMA variant that
// is selected at runtime when the CPU supports it.

namespace gliopipe::simd {

enum class Isa { scalar, avx2 };

std::string_view to_string(Isa isa);

/// Best instruction set this CPU and build support.
Isa detected_isa();
/// Instruction set used by the dispatching entry points. Defaults to
/// detected_isa(); GLIOPIPE_SIMD=scalar in the environment forces the reference path.
Isa active_isa();
/// Overrides the dispatch choice; requesting an unsupported ISA falls back to scalar.
void set_active_isa(Isa isa);

// Row-major C[m x n] = alpha * op(A) * op(B) + beta * C, op(X) = X or X^T.
// With beta == 0, C is overwritten without being read.
void sgemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha, const float* a,
           std::size_t lda, const float* b, std::size_t ldb, float beta, float* c, std::size_t ldc);
void dgemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
           std::size_t lda, const double* b, std::size_t ldb, double beta, double* c, std::size_t ldc);

/// y += alpha * x
void saxpy(std::size_t n, float alpha, const float* x, float* y);
/// y = x * scale + shift
void sscale_shift(std::size_t n, const float* x, float scale, float shift, float* y);
/// y = max(x, 0)
void srelu(std::size_t n, const float* x, float* y);
/// sum of x, and sum of x^2, accumulated in double
void ssum_sumsq(std::size_t n, const float* x, double& sum, double& sumsq);

namespace scalar {

void sgemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha, const float* a,
           std::size_t lda, const float* b, std::size_t ldb, float beta, float* c, std::size_t ldc);
void dgemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
           std::size_t lda, const double* b, std::size_t ldb, double beta, double* c, std::size_t ldc);
void saxpy(std::size_t n, float alpha, const float* x, float* y);
void sscale_shift(std::size_t n, const float* x, float scale, float shift, float* y);
void srelu(std::size_t n, const float* x, float* y);
void ssum_sumsq(std::size_t n, const float* x, double& sum, double& sumsq);

}  // namespace scalar

#if defined(GLIOPIPE_HAVE_AVX2)
namespace avx2 {

void sgemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha, const float* a,
           std::size_t lda, const float* b, std::size_t ldb, float beta, float* c, std::size_t ldc);
void saxpy(std::size_t n, float alpha, const float* x, float* y);
void sscale_shift(std::size_t n, const float* x, float scale, float shift, float* y);
void srelu(std::size_t n, const float* x, float* y);
void ssum_sumsq(std::size_t n, const float* x, double& sum, double& sumsq);

}  // namespace avx2
#endif

}  // namespace gliopipe::simd
