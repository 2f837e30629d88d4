#include "gliopipe/nn/optim.hpp"

#include <cmath>

namespace gliopipe::nn {

AdamW::AdamW(std::vector<Parameter<float>*> params, Options options) : params_(std::move(params)), opt_(options) {
  for (const Parameter<float>* p : params_) {
    m_.emplace_back(p->count(), 0.0f);
    v_.emplace_back(p->count(), 0.0f);
  }
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  const float b1 = static_cast<float>(opt_.beta1);
  const float b2 = static_cast<float>(opt_.beta2);
  const float step = static_cast<float>(opt_.lr / bc1);
  const float inv_bc2 = static_cast<float>(1.0 / bc2);
  const float eps = static_cast<float>(opt_.eps);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter<float>& p = *params_[k];
    std::vector<float>& m = m_[k];
    std::vector<float>& v = v_[k];
    const float shrink = p.decay ? static_cast<float>(1.0 - opt_.lr * opt_.weight_decay) : 1.0f;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const float g = p.grad[i];
      m[i] = b1 * m[i] + (1.0f - b1) * g;
      v[i] = b2 * v[i] + (1.0f - b2) * g * g;
      p.value[i] = p.value[i] * shrink - step * m[i] / (std::sqrt(v[i] * inv_bc2) + eps);
    }
  }
}

}  // namespace gliopipe::nn
