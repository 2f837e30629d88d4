#include "gliopipe/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <type_traits>

#include "gliopipe/error.hpp"
#include "gliopipe/simd/kernels.hpp"

namespace gliopipe::nn {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.c) + "," + std::to_string(s.n) + "," + std::to_string(s.d) + "," +
         std::to_string(s.h) + "," + std::to_string(s.w) + ")";
}

template <>
void gemm<float>(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, float alpha, const float* a,
                 std::size_t lda, const float* b, std::size_t ldb, float beta, float* c, std::size_t ldc) {
  simd::sgemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <>
void gemm<double>(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
                  std::size_t lda, const double* b, std::size_t ldb, double beta, double* c, std::size_t ldc) {
  simd::dgemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

namespace {

std::size_t out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
  if (in + 2 * p < k) return 0;
  return (in + 2 * p - k) / s + 1;
}

// Upper bound on im2col buffer size; larger batches are processed in sample chunks.
constexpr std::size_t kColumnBudget = std::size_t{8} << 20;

}  // namespace

// ---------------------------------------------------------------- Conv

template <typename T>
Conv<T>::Conv(std::string name, std::size_t in_channels, std::size_t out_channels, Triple kernel, Triple stride,
              Triple pad, int dims)
    : in_c_(in_channels), out_c_(out_channels), k_(kernel), s_(stride), p_(pad) {
  weight.name = std::move(name);
  if (dims == 2)
    weight.shape = {out_channels, in_channels, kernel.h, kernel.w};
  else
    weight.shape = {out_channels, in_channels, kernel.d, kernel.h, kernel.w};
  const std::size_t count = out_channels * in_channels * kernel.d * kernel.h * kernel.w;
  weight.value.assign(count, T(0));
  weight.grad.assign(count, T(0));
}

template <typename T>
bool Conv<T>::pointwise() const {
  return k_.d == 1 && k_.h == 1 && k_.w == 1 && s_.d == 1 && s_.h == 1 && s_.w == 1 && p_.d == 0 && p_.h == 0 &&
         p_.w == 0;
}

template <typename T>
Shape Conv<T>::output_shape(const Shape& in) const {
  return Shape{out_c_, in.n, out_extent(in.d, k_.d, s_.d, p_.d), out_extent(in.h, k_.h, s_.h, p_.h),
               out_extent(in.w, k_.w, s_.w, p_.w)};
}

template <typename T>
void Conv<T>::init_he(RandomStream& rs) {
  const double fan_out = static_cast<double>(out_c_ * k_.d * k_.h * k_.w);
  const double stdev = std::sqrt(2.0 / fan_out);
  for (auto& v : weight.value) v = static_cast<T>(rs.normal() * stdev);
}

template <typename T>
static void im2col_chunk(const Tensor<T>& x, const Shape& out, Triple k, Triple s, Triple p, std::size_t n0,
                         std::size_t cn, T* col) {
  const Shape& in = x.shape;
  const std::size_t P = out.spatial();
  const std::size_t row_len = cn * P;
  const std::size_t plane = in.h * in.w;
  std::size_t r = 0;
  for (std::size_t c = 0; c < in.c; ++c)
    for (std::size_t kd = 0; kd < k.d; ++kd)
      for (std::size_t kh = 0; kh < k.h; ++kh)
        for (std::size_t kw = 0; kw < k.w; ++kw, ++r) {
          T* dst = col + r * row_len;
          for (std::size_t nn = 0; nn < cn; ++nn) {
            const T* src = x.data.data() + (c * in.n + n0 + nn) * in.spatial();
            for (std::size_t od = 0; od < out.d; ++od) {
              const std::ptrdiff_t id = static_cast<std::ptrdiff_t>(od * s.d + kd) - static_cast<std::ptrdiff_t>(p.d);
              if (id < 0 || id >= static_cast<std::ptrdiff_t>(in.d)) {
                std::fill(dst, dst + out.h * out.w, T(0));
                dst += out.h * out.w;
                continue;
              }
              for (std::size_t oh = 0; oh < out.h; ++oh) {
                const std::ptrdiff_t ih =
                    static_cast<std::ptrdiff_t>(oh * s.h + kh) - static_cast<std::ptrdiff_t>(p.h);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(in.h)) {
                  std::fill(dst, dst + out.w, T(0));
                  dst += out.w;
                  continue;
                }
                const T* row = src + static_cast<std::size_t>(id) * plane + static_cast<std::size_t>(ih) * in.w;
                for (std::size_t ow = 0; ow < out.w; ++ow) {
                  const std::ptrdiff_t iw =
                      static_cast<std::ptrdiff_t>(ow * s.w + kw) - static_cast<std::ptrdiff_t>(p.w);
                  *dst++ = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(in.w)) ? T(0) : row[iw];
                }
              }
            }
          }
        }
}

template <typename T>
static void col2im_chunk(const T* col, const Shape& out, Triple k, Triple s, Triple p, std::size_t n0,
                         std::size_t cn, Tensor<T>& dx) {
  const Shape& in = dx.shape;
  const std::size_t P = out.spatial();
  const std::size_t row_len = cn * P;
  const std::size_t plane = in.h * in.w;
  std::size_t r = 0;
  for (std::size_t c = 0; c < in.c; ++c)
    for (std::size_t kd = 0; kd < k.d; ++kd)
      for (std::size_t kh = 0; kh < k.h; ++kh)
        for (std::size_t kw = 0; kw < k.w; ++kw, ++r) {
          const T* src = col + r * row_len;
          for (std::size_t nn = 0; nn < cn; ++nn) {
            T* dst = dx.data.data() + (c * in.n + n0 + nn) * in.spatial();
            for (std::size_t od = 0; od < out.d; ++od) {
              const std::ptrdiff_t id = static_cast<std::ptrdiff_t>(od * s.d + kd) - static_cast<std::ptrdiff_t>(p.d);
              if (id < 0 || id >= static_cast<std::ptrdiff_t>(in.d)) {
                src += out.h * out.w;
                continue;
              }
              for (std::size_t oh = 0; oh < out.h; ++oh) {
                const std::ptrdiff_t ih =
                    static_cast<std::ptrdiff_t>(oh * s.h + kh) - static_cast<std::ptrdiff_t>(p.h);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(in.h)) {
                  src += out.w;
                  continue;
                }
                T* row = dst + static_cast<std::size_t>(id) * plane + static_cast<std::size_t>(ih) * in.w;
                for (std::size_t ow = 0; ow < out.w; ++ow, ++src) {
                  const std::ptrdiff_t iw =
                      static_cast<std::ptrdiff_t>(ow * s.w + kw) - static_cast<std::ptrdiff_t>(p.w);
                  if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(in.w)) row[iw] += *src;
                }
              }
            }
          }
        }
}

template <typename T>
Tensor<T> Conv<T>::forward(const Tensor<T>& x) {
  if (x.shape.c != in_c_)
    throw Error(weight.name + ": expected " + std::to_string(in_c_) + " input channels, got " +
                std::to_string(x.shape.c));
  const Shape out = output_shape(x.shape);
  if (out.spatial() == 0) throw Error(weight.name + ": input " + to_string(x.shape) + " too small for kernel");
  input_ = x;
  Tensor<T> y(out);
  const std::size_t K = in_c_ * k_.d * k_.h * k_.w;
  const std::size_t P = out.spatial();
  const std::size_t NP = out.n * P;
  if (pointwise()) {
    gemm<T>(false, false, out_c_, NP, K, T(1), weight.value.data(), K, x.data.data(), NP, T(0), y.data.data(), NP);
    return y;
  }
  const std::size_t chunk = std::max<std::size_t>(1, kColumnBudget / std::max<std::size_t>(1, K * P));
  std::vector<T> col;
  for (std::size_t n0 = 0; n0 < out.n; n0 += chunk) {
    const std::size_t cn = std::min(chunk, out.n - n0);
    col.resize(K * cn * P);
    im2col_chunk(x, out, k_, s_, p_, n0, cn, col.data());
    gemm<T>(false, false, out_c_, cn * P, K, T(1), weight.value.data(), K, col.data(), cn * P, T(0),
            y.data.data() + n0 * P, NP);
  }
  return y;
}

template <typename T>
Tensor<T> Conv<T>::backward(const Tensor<T>& dy, bool need_input_grad) {
  const Shape out = dy.shape;
  const std::size_t K = in_c_ * k_.d * k_.h * k_.w;
  const std::size_t P = out.spatial();
  const std::size_t NP = out.n * P;
  Tensor<T> dx;
  if (need_input_grad) dx = Tensor<T>(input_.shape);
  if (pointwise()) {
    gemm<T>(false, true, out_c_, K, NP, T(1), dy.data.data(), NP, input_.data.data(), NP, T(1), weight.grad.data(),
            K);
    if (need_input_grad)
      gemm<T>(true, false, K, NP, out_c_, T(1), weight.value.data(), K, dy.data.data(), NP, T(0), dx.data.data(),
              NP);
    return dx;
  }
  const std::size_t chunk = std::max<std::size_t>(1, kColumnBudget / std::max<std::size_t>(1, K * P));
  std::vector<T> col;
  for (std::size_t n0 = 0; n0 < out.n; n0 += chunk) {
    const std::size_t cn = std::min(chunk, out.n - n0);
    col.resize(K * cn * P);
    im2col_chunk(input_, out, k_, s_, p_, n0, cn, col.data());
    gemm<T>(false, true, out_c_, K, cn * P, T(1), dy.data.data() + n0 * P, NP, col.data(), cn * P, T(1),
            weight.grad.data(), K);
    if (need_input_grad) {
      gemm<T>(true, false, K, cn * P, out_c_, T(1), weight.value.data(), K, dy.data.data() + n0 * P, NP, T(0),
              col.data(), cn * P);
      col2im_chunk(col.data(), out, k_, s_, p_, n0, cn, dx);
    }
  }
  return dx;
}

// ---------------------------------------------------------------- BatchNorm

template <typename T>
BatchNorm<T>::BatchNorm(std::string name, std::size_t channels, bool zero_gamma) {
  gamma.name = name + ".weight";
  gamma.shape = {channels};
  gamma.value.assign(channels, zero_gamma ? T(0) : T(1));
  gamma.grad.assign(channels, T(0));
  gamma.decay = false;
  beta.name = name + ".bias";
  beta.shape = {channels};
  beta.value.assign(channels, T(0));
  beta.grad.assign(channels, T(0));
  beta.decay = false;
  running_mean.name = name + ".running_mean";
  running_mean.value.assign(channels, T(0));
  running_var.name = name + ".running_var";
  running_var.value.assign(channels, T(1));
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(const Tensor<T>& x, Mode mode) {
  const std::size_t C = x.shape.c;
  if (C != gamma.value.size()) throw Error(gamma.name + ": channel mismatch");
  const std::size_t M = x.shape.n * x.shape.spatial();
  shape_ = x.shape;
  Tensor<T> y(x.shape);
  xhat_.resize(x.data.size());
  inv_std_.resize(C);
  for (std::size_t c = 0; c < C; ++c) {
    const T* xc = x.channel(c);
    double mean;
    double var;
    if (mode == Mode::train) {
      double sum = 0.0;
      double sumsq = 0.0;
      if constexpr (std::is_same_v<T, float>) {
        simd::ssum_sumsq(M, xc, sum, sumsq);
        mean = sum / static_cast<double>(M);
        var = std::max(0.0, sumsq / static_cast<double>(M) - mean * mean);
      } else {
        for (std::size_t i = 0; i < M; ++i) sum += xc[i];
        mean = sum / static_cast<double>(M);
        for (std::size_t i = 0; i < M; ++i) sumsq += (xc[i] - mean) * (xc[i] - mean);
        var = sumsq / static_cast<double>(M);
      }
      const double unbiased = M > 1 ? var * static_cast<double>(M) / static_cast<double>(M - 1) : var;
      running_mean.value[c] =
          static_cast<T>((1.0 - kMomentum) * static_cast<double>(running_mean.value[c]) + kMomentum * mean);
      running_var.value[c] =
          static_cast<T>((1.0 - kMomentum) * static_cast<double>(running_var.value[c]) + kMomentum * unbiased);
    } else {
      mean = static_cast<double>(running_mean.value[c]);
      var = static_cast<double>(running_var.value[c]);
    }
    const double inv = 1.0 / std::sqrt(var + kEpsilon);
    inv_std_[c] = static_cast<T>(inv);
    T* xh = xhat_.data() + c * M;
    T* yc = y.channel(c);
    if constexpr (std::is_same_v<T, float>) {
      simd::sscale_shift(M, xc, static_cast<float>(inv), static_cast<float>(-mean * inv), xh);
      simd::sscale_shift(M, xh, gamma.value[c], beta.value[c], yc);
    } else {
      for (std::size_t i = 0; i < M; ++i) {
        xh[i] = (xc[i] - mean) * inv;
        yc[i] = gamma.value[c] * xh[i] + beta.value[c];
      }
    }
  }
  train_mode_ = mode == Mode::train;
  return y;
}

template <typename T>
Tensor<T> BatchNorm<T>::backward(const Tensor<T>& dy) {
  const std::size_t C = shape_.c;
  const std::size_t M = shape_.n * shape_.spatial();
  Tensor<T> dx(shape_);
  for (std::size_t c = 0; c < C; ++c) {
    const T* g = dy.channel(c);
    const T* xh = xhat_.data() + c * M;
    double dg = 0.0;
    double db = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
      dg += static_cast<double>(g[i]) * static_cast<double>(xh[i]);
      db += static_cast<double>(g[i]);
    }
    gamma.grad[c] += static_cast<T>(dg);
    beta.grad[c] += static_cast<T>(db);
    T* d = dx.channel(c);
    const double scale = static_cast<double>(gamma.value[c]) * static_cast<double>(inv_std_[c]);
    if (!train_mode_) {
      for (std::size_t i = 0; i < M; ++i) d[i] = static_cast<T>(scale * g[i]);
      continue;
    }
    const double m = static_cast<double>(M);
    const double mean_g = db / m;
    const double mean_gx = dg / m;
    for (std::size_t i = 0; i < M; ++i)
      d[i] = static_cast<T>(scale * (static_cast<double>(g[i]) - mean_g - static_cast<double>(xh[i]) * mean_gx));
  }
  return dx;
}

// ---------------------------------------------------------------- Relu

template <typename T>
Tensor<T> Relu<T>::forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape);
  if constexpr (std::is_same_v<T, float>)
    simd::srelu(x.data.size(), x.data.data(), y.data.data());
  else
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > 0 ? x.data[i] : T(0);
  out_ = y.data;
  return y;
}

template <typename T>
Tensor<T> Relu<T>::backward(const Tensor<T>& dy) const {
  Tensor<T> dx(dy.shape);
  for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[i] = out_[i] > 0 ? dy.data[i] : T(0);
  return dx;
}

// ---------------------------------------------------------------- MaxPool

template <typename T>
Shape MaxPool<T>::output_shape(const Shape& in) const {
  return Shape{in.c, in.n, out_extent(in.d, k_.d, s_.d, p_.d), out_extent(in.h, k_.h, s_.h, p_.h),
               out_extent(in.w, k_.w, s_.w, p_.w)};
}

template <typename T>
Tensor<T> MaxPool<T>::forward(const Tensor<T>& x) {
  in_shape_ = x.shape;
  const Shape out = output_shape(x.shape);
  Tensor<T> y(out);
  argmax_.assign(out.numel(), 0);
  const std::size_t planes = x.shape.c * x.shape.n;
  std::size_t o = 0;
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const std::size_t base = pl * x.shape.spatial();
    for (std::size_t od = 0; od < out.d; ++od)
      for (std::size_t oh = 0; oh < out.h; ++oh)
        for (std::size_t ow = 0; ow < out.w; ++ow, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t arg = base;
          for (std::size_t kd = 0; kd < k_.d; ++kd) {
            const std::ptrdiff_t id = static_cast<std::ptrdiff_t>(od * s_.d + kd) - static_cast<std::ptrdiff_t>(p_.d);
            if (id < 0 || id >= static_cast<std::ptrdiff_t>(x.shape.d)) continue;
            for (std::size_t kh = 0; kh < k_.h; ++kh) {
              const std::ptrdiff_t ih =
                  static_cast<std::ptrdiff_t>(oh * s_.h + kh) - static_cast<std::ptrdiff_t>(p_.h);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(x.shape.h)) continue;
              for (std::size_t kw = 0; kw < k_.w; ++kw) {
                const std::ptrdiff_t iw =
                    static_cast<std::ptrdiff_t>(ow * s_.w + kw) - static_cast<std::ptrdiff_t>(p_.w);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(x.shape.w)) continue;
                const std::size_t idx = base + (static_cast<std::size_t>(id) * x.shape.h + static_cast<std::size_t>(ih)) *
                                                   x.shape.w +
                                        static_cast<std::size_t>(iw);
                if (x.data[idx] > best) {
                  best = x.data[idx];
                  arg = idx;
                }
              }
            }
          }
          y.data[o] = best;
          argmax_[o] = static_cast<std::uint32_t>(arg);
        }
  }
  return y;
}

template <typename T>
Tensor<T> MaxPool<T>::backward(const Tensor<T>& dy) const {
  Tensor<T> dx(in_shape_);
  for (std::size_t o = 0; o < dy.data.size(); ++o) dx.data[argmax_[o]] += dy.data[o];
  return dx;
}

// ---------------------------------------------------------------- GlobalAvgPool

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x) {
  in_shape_ = x.shape;
  Tensor<T> y(Shape{x.shape.c, x.shape.n, 1, 1, 1});
  const std::size_t S = x.shape.spatial();
  for (std::size_t i = 0; i < x.shape.c * x.shape.n; ++i) {
    double sum = 0.0;
    const T* p = x.data.data() + i * S;
    for (std::size_t j = 0; j < S; ++j) sum += p[j];
    y.data[i] = static_cast<T>(sum / static_cast<double>(S));
  }
  return y;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& dy) const {
  Tensor<T> dx(in_shape_);
  const std::size_t S = in_shape_.spatial();
  const T inv = T(1) / static_cast<T>(S);
  for (std::size_t i = 0; i < in_shape_.c * in_shape_.n; ++i)
    std::fill(dx.data.begin() + static_cast<std::ptrdiff_t>(i * S),
              dx.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * S), dy.data[i] * inv);
  return dx;
}

// ---------------------------------------------------------------- Dropout

template <typename T>
Tensor<T> Dropout<T>::forward(const Tensor<T>& x, Mode mode, RandomStream* rs) {
  mask_.clear();
  if (mode == Mode::eval || p_ <= 0.0) return x;
  if (rs == nullptr) throw Error("dropout in training mode needs a random stream");
  mask_.resize(x.data.size());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p_));
  Tensor<T> y(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    mask_[i] = rs->uniform() < p_ ? T(0) : keep_scale;
    y.data[i] = x.data[i] * mask_[i];
  }
  return y;
}

template <typename T>
Tensor<T> Dropout<T>::backward(const Tensor<T>& dy) const {
  if (mask_.empty()) return dy;
  Tensor<T> dx(dy.shape);
  for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[i] = dy.data[i] * mask_[i];
  return dx;
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(std::string name, std::size_t in_features) {
  weight.name = name + ".weight";
  weight.shape = {1, in_features};
  weight.value.assign(in_features, T(0));
  weight.grad.assign(in_features, T(0));
  bias.name = name + ".bias";
  bias.shape = {1};
  bias.value.assign(1, T(0));
  bias.grad.assign(1, T(0));
  bias.decay = false;
}

template <typename T>
void Linear<T>::init_default(RandomStream& rs) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(weight.value.size()));
  for (auto& v : weight.value) v = static_cast<T>(rs.uniform(-bound, bound));
  bias.value[0] = T(0);
}

template <typename T>
std::vector<T> Linear<T>::forward(const Tensor<T>& x) {
  if (x.shape.c != weight.value.size() || x.shape.spatial() != 1) throw Error(weight.name + ": feature mismatch");
  input_ = x;
  const std::size_t N = x.shape.n;
  std::vector<T> out(N, bias.value[0]);
  for (std::size_t c = 0; c < x.shape.c; ++c)
    for (std::size_t n = 0; n < N; ++n) out[n] += weight.value[c] * x.data[c * N + n];
  return out;
}

template <typename T>
Tensor<T> Linear<T>::backward(const std::vector<T>& dl) {
  const std::size_t N = input_.shape.n;
  Tensor<T> dx(input_.shape);
  for (std::size_t n = 0; n < N; ++n) bias.grad[0] += dl[n];
  for (std::size_t c = 0; c < input_.shape.c; ++c)
    for (std::size_t n = 0; n < N; ++n) {
      weight.grad[c] += dl[n] * input_.data[c * N + n];
      dx.data[c * N + n] = weight.value[c] * dl[n];
    }
  return dx;
}

template class Conv<float>;
template class Conv<double>;
template class BatchNorm<float>;
template class BatchNorm<double>;
template class Relu<float>;
template class Relu<double>;
template class MaxPool<float>;
template class MaxPool<double>;
template class GlobalAvgPool<float>;
template class GlobalAvgPool<double>;
template class Dropout<float>;
template class Dropout<double>;
template class Linear<float>;
template class Linear<double>;

}  // namespace gliopipe::nn
