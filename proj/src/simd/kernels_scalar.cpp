#include <algorithm>
#include <vector>

#include "gliopipe/simd/kernels.hpp"

namespace gliopipe::simd::scalar {

namespace {

template <typename T>
void gemm_ref(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
              std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc) {
  std::vector<T> row(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), T(0));
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = trans_a ? a[p * lda + i] : a[i * lda + p];
      if (aip == T(0)) continue;
      if (trans_b) {
        for (std::size_t j = 0; j < n; ++j) row[j] += aip * b[j * ldb + p];
      } else {
        const T* bp = b + p * ldb;
        for (std::size_t j = 0; j < n; ++j) row[j] += aip * bp[j];
      }
    }
    T* ci = c + i * ldc;
    if (beta == T(0)) {
      for (std::size_t j = 0; j < n; ++j) ci[j] = alpha * row[j];
    } else {
      for (std::size_t j = 0; j < n; ++j) ci[j] = alpha * row[j] + beta * ci[j];
    }
  }
}

}  // namespace

void sgemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha, const float* a,
           std::size_t lda, const float* b, std::size_t ldb, float beta, float* c, std::size_t ldc) {
  gemm_ref(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void dgemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
           std::size_t lda, const double* b, std::size_t ldb, double beta, double* c, std::size_t ldc) {
  gemm_ref(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void saxpy(std::size_t n, float alpha, const float* x, float* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void sscale_shift(std::size_t n, const float* x, float scale, float shift, float* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * scale + shift;
}

void srelu(std::size_t n, const float* x, float* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0F ? x[i] : 0.0F;
}

void ssum_sumsq(std::size_t n, const float* x, double& sum, double& sumsq) {
  double s = 0.0;
  double q = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    s += x[i];
    q += static_cast<double>(x[i]) * x[i];
  }
  sum = s;
  sumsq = q;
}

}  // namespace gliopipe::simd::scalar
