#pragma once

#include <cstdint>
#include <vector>

#include "gliopipe/nn/tensor.hpp"

namespace gliopipe::nn {

/// Adam with decoupled weight decay. Decay applies only to parameters whose
/// `decay` flag is set (convolution and linear weights).
class AdamW {
 public:
  struct Options {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;
  };

  AdamW(std::vector<Parameter<float>*> params, Options options);

  void step();
  void set_lr(double lr) { opt_.lr = lr; }
  double lr() const { return opt_.lr; }
  const Options& options() const { return opt_; }

  std::uint64_t step_count() const { return t_; }
  std::vector<std::vector<float>>& first_moments() { return m_; }
  std::vector<std::vector<float>>& second_moments() { return v_; }
  void set_step_count(std::uint64_t t) { t_ = t; }

 private:
  std::vector<Parameter<float>*> params_;
  Options opt_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
};

}  // namespace gliopipe::nn
