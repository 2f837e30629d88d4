#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gliopipe/nn/tensor.hpp"
#include "gliopipe/random.hpp"

namespace gliopipe::nn {

/// Bias-free convolution lowered to im2col + GEMM.
template <typename T>
class Conv {
 public:
  Conv(std::string name, std::size_t in_channels, std::size_t out_channels, Triple kernel, Triple stride, Triple pad,
       int dims);

  Shape output_shape(const Shape& in) const;
  Tensor<T> forward(const Tensor<T>& x);
  /// Accumulates the weight gradient; returns dL/dx unless `need_input_grad` is false.
  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad = true);
  void init_he(RandomStream& rs);

  Parameter<T> weight;
  std::size_t in_channels() const { return in_c_; }
  std::size_t out_channels() const { return out_c_; }

 private:
  bool pointwise() const;

  std::size_t in_c_;
  std::size_t out_c_;
  Triple k_, s_, p_;
  Tensor<T> input_;
};

template <typename T>
class BatchNorm {
 public:
  BatchNorm(std::string name, std::size_t channels, bool zero_gamma = false);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy);

  Parameter<T> gamma;
  Parameter<T> beta;
  Buffer<T> running_mean;
  Buffer<T> running_var;
  static constexpr double kMomentum = 0.1;
  static constexpr double kEpsilon = 1e-5;

 private:
  std::vector<T> xhat_;
  std::vector<T> inv_std_;
  Shape shape_;
  bool train_mode_ = true;
};

template <typename T>
class Relu {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  std::vector<T> out_;
};

template <typename T>
class MaxPool {
 public:
  MaxPool(Triple kernel, Triple stride, Triple pad) : k_(kernel), s_(stride), p_(pad) {}

  Shape output_shape(const Shape& in) const;
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  Triple k_, s_, p_;
  Shape in_shape_;
  std::vector<std::uint32_t> argmax_;
};

/// (C, N, spatial) -> (C, N, 1, 1, 1)
template <typename T>
class GlobalAvgPool {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  Shape in_shape_;
};

template <typename T>
class Dropout {
 public:
  explicit Dropout(double p) : p_(p) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode, RandomStream* rs);
  Tensor<T> backward(const Tensor<T>& dy) const;
  double p() const { return p_; }

 private:
  double p_;
  std::vector<T> mask_;
};

/// Single-output affine head over (C, N) features.
template <typename T>
class Linear {
 public:
  Linear(std::string name, std::size_t in_features);

  std::vector<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const std::vector<T>& dlogits);
  void init_default(RandomStream& rs);

  Parameter<T> weight;
  Parameter<T> bias;

 private:
  Tensor<T> input_;
};

/// Matrix product used by the layers: float goes through the SIMD dispatcher,
/// double through the scalar reference.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
          std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc);

}  // namespace gliopipe::nn
