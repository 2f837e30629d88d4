// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include <immintrin.h>

#include <algorithm>
#include <vector>

#include "gliopipe/simd/kernels.hpp"

namespace gliopipe::simd::avx2 {

namespace {

constexpr std::size_t kMr = 6;
constexpr std::size_t kNr = 16;
constexpr std::size_t kKc = 256;
constexpr std::size_t kMc = 120;
constexpr std::size_t kNc = 3072;

struct Workspace {
  std::vector<float> a;
  std::vector<float> b;
};

Workspace& workspace() {
  thread_local Workspace ws;
  return ws;
}

// Packs op(A)[i0:i0+mc, p0:p0+kc] into kMr-row panels, p-major within a panel.
void pack_a(bool trans, const float* a, std::size_t lda, std::size_t i0, std::size_t mc, std::size_t p0,
            std::size_t kc, float* dst) {
  for (std::size_t ir = 0; ir < mc; ir += kMr) {
    const std::size_t rows = std::min(kMr, mc - ir);
    for (std::size_t p = 0; p < kc; ++p) {
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t i = i0 + ir + r;
        dst[r] = trans ? a[(p0 + p) * lda + i] : a[i * lda + p0 + p];
      }
      for (std::size_t r = rows; r < kMr; ++r) dst[r] = 0.0F;
      dst += kMr;
    }
  }
}

// Packs op(B)[p0:p0+kc, j0:j0+nc] into kNr-column panels.
void pack_b(bool trans, const float* b, std::size_t ldb, std::size_t p0, std::size_t kc, std::size_t j0,
            std::size_t nc, float* dst) {
  for (std::size_t jr = 0; jr < nc; jr += kNr) {
    const std::size_t cols = std::min(kNr, nc - jr);
    for (std::size_t p = 0; p < kc; ++p) {
      if (!trans && cols == kNr) {
        const float* src = b + (p0 + p) * ldb + j0 + jr;
        _mm256_storeu_ps(dst, _mm256_loadu_ps(src));
        _mm256_storeu_ps(dst + 8, _mm256_loadu_ps(src + 8));
      } else {
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t j = j0 + jr + c;
          dst[c] = trans ? b[j * ldb + p0 + p] : b[(p0 + p) * ldb + j];
        }
        for (std::size_t c = cols; c < kNr; ++c) dst[c] = 0.0F;
      }
      dst += kNr;
    }
  }
}

// acc[6][16] = sum_p A[p][r] * B[p][c]; then C = alpha * acc + beta * C on the valid mr x nr corner.
void micro_kernel(std::size_t kc, const float* ap, const float* bp, float* c, std::size_t ldc, float alpha,
                  float beta, std::size_t mr, std::size_t nr) {
  __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
  __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
  __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
  __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
  __m256 c40 = _mm256_setzero_ps(), c41 = _mm256_setzero_ps();
  __m256 c50 = _mm256_setzero_ps(), c51 = _mm256_setzero_ps();

  for (std::size_t p = 0; p < kc; ++p) {
    const __m256 b0 = _mm256_loadu_ps(bp);
    const __m256 b1 = _mm256_loadu_ps(bp + 8);
    __m256 a = _mm256_broadcast_ss(ap + 0);
    c00 = _mm256_fmadd_ps(a, b0, c00);
    c01 = _mm256_fmadd_ps(a, b1, c01);
    a = _mm256_broadcast_ss(ap + 1);
    c10 = _mm256_fmadd_ps(a, b0, c10);
    c11 = _mm256_fmadd_ps(a, b1, c11);
    a = _mm256_broadcast_ss(ap + 2);
    c20 = _mm256_fmadd_ps(a, b0, c20);
    c21 = _mm256_fmadd_ps(a, b1, c21);
    a = _mm256_broadcast_ss(ap + 3);
    c30 = _mm256_fmadd_ps(a, b0, c30);
    c31 = _mm256_fmadd_ps(a, b1, c31);
    a = _mm256_broadcast_ss(ap + 4);
    c40 = _mm256_fmadd_ps(a, b0, c40);
    c41 = _mm256_fmadd_ps(a, b1, c41);
    a = _mm256_broadcast_ss(ap + 5);
    c50 = _mm256_fmadd_ps(a, b0, c50);
    c51 = _mm256_fmadd_ps(a, b1, c51);
    ap += kMr;
    bp += kNr;
  }

  const __m256 va = _mm256_set1_ps(alpha);
  const __m256 acc[kMr][2] = {{c00, c01}, {c10, c11}, {c20, c21}, {c30, c31}, {c40, c41}, {c50, c51}};
  if (mr == kMr && nr == kNr) {
    const __m256 vb = _mm256_set1_ps(beta);
    for (std::size_t r = 0; r < kMr; ++r) {
      float* cr = c + r * ldc;
      for (int h = 0; h < 2; ++h) {
        __m256 v = _mm256_mul_ps(va, acc[r][h]);
        if (beta != 0.0F) v = _mm256_fmadd_ps(vb, _mm256_loadu_ps(cr + 8 * h), v);
        _mm256_storeu_ps(cr + 8 * h, v);
      }
    }
    return;
  }
  alignas(32) float tmp[kMr][kNr];
  for (std::size_t r = 0; r < kMr; ++r) {
    _mm256_store_ps(tmp[r], _mm256_mul_ps(va, acc[r][0]));
    _mm256_store_ps(tmp[r] + 8, _mm256_mul_ps(va, acc[r][1]));
  }
  for (std::size_t r = 0; r < mr; ++r) {
    float* cr = c + r * ldc;
    for (std::size_t j = 0; j < nr; ++j) cr[j] = beta == 0.0F ? tmp[r][j] : tmp[r][j] + beta * cr[j];
  }
}

}  // namespace

void sgemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha, const float* a,
           std::size_t lda, const float* b, std::size_t ldb, float beta, float* c, std::size_t ldc) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] = beta == 0.0F ? 0.0F : beta * c[i * ldc + j];
    return;
  }
  auto& ws = workspace();
  ws.a.resize(((kMc + kMr - 1) / kMr) * kMr * kKc);
  ws.b.resize(((kNc + kNr - 1) / kNr) * kNr * kKc);

  for (std::size_t jc = 0; jc < n; jc += kNc) {
    const std::size_t nc = std::min(kNc, n - jc);
    for (std::size_t pc = 0; pc < k; pc += kKc) {
      const std::size_t kc = std::min(kKc, k - pc);
      const float beta_eff = pc == 0 ? beta : 1.0F;
      pack_b(trans_b, b, ldb, pc, kc, jc, nc, ws.b.data());
      for (std::size_t ic = 0; ic < m; ic += kMc) {
        const std::size_t mc = std::min(kMc, m - ic);
        pack_a(trans_a, a, lda, ic, mc, pc, kc, ws.a.data());
        for (std::size_t jr = 0; jr < nc; jr += kNr) {
          const float* bp = ws.b.data() + (jr / kNr) * kNr * kc;
          for (std::size_t ir = 0; ir < mc; ir += kMr) {
            const float* ap = ws.a.data() + (ir / kMr) * kMr * kc;
            micro_kernel(kc, ap, bp, c + (ic + ir) * ldc + jc + jr, ldc, alpha, beta_eff, std::min(kMr, mc - ir),
                         std::min(kNr, nc - jr));
          }
        }
      }
    }
  }
}

void saxpy(std::size_t n, float alpha, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void sscale_shift(std::size_t n, const float* x, float scale, float shift, float* y) {
  const __m256 vs = _mm256_set1_ps(scale);
  const __m256 vt = _mm256_set1_ps(shift);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_fmadd_ps(_mm256_loadu_ps(x + i), vs, vt));
  for (; i < n; ++i) y[i] = x[i] * scale + shift;
}

void srelu(std::size_t n, const float* x, float* y) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
  for (; i < n; ++i) y[i] = x[i] > 0.0F ? x[i] : 0.0F;
}

void ssum_sumsq(std::size_t n, const float* x, double& sum, double& sumsq) {
  __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
  __m256d q0 = _mm256_setzero_pd(), q1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256d lo = _mm256_cvtps_pd(_mm256_castps256_ps128(v));
    const __m256d hi = _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1));
    s0 = _mm256_add_pd(s0, lo);
    s1 = _mm256_add_pd(s1, hi);
    q0 = _mm256_fmadd_pd(lo, lo, q0);
    q1 = _mm256_fmadd_pd(hi, hi, q1);
  }
  alignas(32) double bs[4], bq[4];
  _mm256_store_pd(bs, _mm256_add_pd(s0, s1));
  _mm256_store_pd(bq, _mm256_add_pd(q0, q1));
  double s = (bs[0] + bs[1]) + (bs[2] + bs[3]);
  double q = (bq[0] + bq[1]) + (bq[2] + bq[3]);
  for (; i < n; ++i) {
    s += x[i];
    q += static_cast<double>(x[i]) * x[i];
  }
  sum = s;
  sumsq = q;
}

}  // namespace gliopipe::simd::avx2
