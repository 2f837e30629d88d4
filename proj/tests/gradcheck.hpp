#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gliopipe/nn/resnet.hpp"
#include "gliopipe/random.hpp"

namespace gradcheck {

struct Result {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double median_rel_error = 0.0;
  std::size_t over_tolerance = 0;
  std::string worst;  // parameter name, analytic and numeric values of the worst entry
};

// Analytic vs central-difference gradients of L = sum_i c_i * logit_i for a
// double-precision network in training mode (batch statistics, no dropout).
inline Result run(int dim, int depth, int width, std::size_t extent, std::size_t n_params, double step,
                  double tolerance, std::uint64_t seed) {
  using namespace gliopipe;
  using namespace gliopipe::nn;
  ResNet<double> net(ResNetSpec::canonical(dim, depth, width, 0.0), seed);
  RandomStream rs(mix_key(seed, 0x6C));

  // Zero-initialized gammas would hide whole branches from the check.
  for (Parameter<double>* p : net.parameters()) {
    const bool is_bn = p->shape.size() == 1 && p->name.find("fc") == std::string::npos;
    for (double& v : p->value) {
      if (is_bn && p->name.ends_with(".weight"))
        v = rs.uniform(0.5, 1.5);
      else if (is_bn)
        v = rs.uniform(-0.2, 0.2);
      else if (p->name.starts_with("fc"))
        v = rs.uniform(-1.0, 1.0);
    }
  }

  const std::size_t batch = 4;
  Shape s{1, batch, dim == 3 ? extent : 1, extent, extent};
  Tensor<double> x(s);
  for (double& v : x.data) v = rs.uniform(0.0, 1.0);
  std::vector<double> c(batch);
  for (double& v : c) v = rs.uniform(-1.0, 1.0);

  auto loss = [&]() {
    const auto z = net.forward(x, Mode::train, nullptr);
    double l = 0;
    for (std::size_t i = 0; i < batch; ++i) l += c[i] * z[i];
    return l;
  };

  net.zero_grad();
  loss();
  net.backward(c);

  // Sample (parameter, index) pairs uniformly over all scalars.
  std::vector<std::pair<Parameter<double>*, std::size_t>> all;
  for (Parameter<double>* p : net.parameters())
    for (std::size_t i = 0; i < p->count(); ++i) all.emplace_back(p, i);
  std::vector<double> errors;
  Result r;
  for (std::size_t k = 0; k < n_params; ++k) {
    auto [p, i] = all[rs.below(all.size())];
    const double analytic = p->grad[i];
    const double saved = p->value[i];
    p->value[i] = saved + step;
    const double lp = loss();
    p->value[i] = saved - step;
    const double lm = loss();
    p->value[i] = saved;
    const double numeric = (lp - lm) / (2 * step);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    const double err = std::abs(analytic - numeric) / denom;
    errors.push_back(err);
    if (err > r.max_rel_error)
      r.worst = p->name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic) + " numeric " +
                std::to_string(numeric);
    r.max_rel_error = std::max(r.max_rel_error, err);
    if (err > tolerance) ++r.over_tolerance;
  }
  r.checked = errors.size();
  std::sort(errors.begin(), errors.end());
  r.median_rel_error = errors[errors.size() / 2];
  return r;
}

}  // namespace gradcheck
