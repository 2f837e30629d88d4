#include "gliopipe/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "gliopipe/error.hpp"
#include "gliopipe/util.hpp"

namespace gliopipe {

ViewScoreMatrix join_view_scores(const std::array<PredictionTable, 3>& per_view) {
  std::array<std::map<std::string, const Prediction*>, 3> index;
  for (int v = 0; v < 3; ++v)
    for (const auto& row : per_view[static_cast<std::size_t>(v)].rows) {
      if (!index[static_cast<std::size_t>(v)].emplace(row.patient_id, &row).second)
        throw DataError("duplicate patient " + row.patient_id + " in " +
                        std::string(to_string(kAllViews[static_cast<std::size_t>(v)])) + " scores");
    }
  ViewScoreMatrix m;
  bool labeled = true;
  for (const auto& row : per_view[0].rows) {
    std::array<double, 3> s{};
    int label = row.label;
    for (int v = 0; v < 3; ++v) {
      const auto it = index[static_cast<std::size_t>(v)].find(row.patient_id);
      if (it == index[static_cast<std::size_t>(v)].end())
        throw DataError("patient " + row.patient_id + " has no " +
                        std::string(to_string(kAllViews[static_cast<std::size_t>(v)])) + " score");
      s[static_cast<std::size_t>(v)] = it->second->score;
      if (it->second->label != label) throw DataError("patient " + row.patient_id + " has inconsistent labels");
    }
    m.patient_ids.push_back(row.patient_id);
    m.scores.push_back(s);
    m.labels.push_back(label);
    labeled = labeled && label >= 0;
  }
  for (int v = 1; v < 3; ++v)
    if (per_view[static_cast<std::size_t>(v)].rows.size() != per_view[0].rows.size())
      throw DataError("view score tables cover different patients");
  if (!labeled) m.labels.clear();
  return m;
}

double clipped_logit(double p) {
  const double q = std::clamp(p, kScoreClip, 1.0 - kScoreClip);
  return std::log(q / (1.0 - q));
}

namespace {

double log1pexp(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigm(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

using Vec4 = std::array<double, 4>;  // (w_ax, w_co, w_sa, b)

double objective(const std::vector<std::array<double, 3>>& x, const std::vector<int>& y, const Vec4& t,
                 double lambda) {
  double f = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double z = t[0] * x[i][0] + t[1] * x[i][1] + t[2] * x[i][2] + t[3];
    f += y[i] == 1 ? log1pexp(-z) : log1pexp(z);
  }
  return f + lambda * (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]);
}

// Solves the symmetric positive-definite 4x4 system H d = g by Cholesky.
bool solve4(std::array<std::array<double, 4>, 4> h, Vec4 g, Vec4& d) {
  std::array<std::array<double, 4>, 4> l{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j <= i; ++j) {
      double s = h[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      for (int k = 0; k < j; ++k)
        s -= l[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] *
             l[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
      if (i == j) {
        if (!(s > 0.0)) return false;
        l[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = std::sqrt(s);
      } else {
        l[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
            s / l[static_cast<std::size_t>(j)][static_cast<std::size_t>(j)];
      }
    }
  for (int i = 0; i < 4; ++i) {
    double s = g[static_cast<std::size_t>(i)];
    for (int k = 0; k < i; ++k) s -= l[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] * g[static_cast<std::size_t>(k)];
    g[static_cast<std::size_t>(i)] = s / l[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
  }
  for (int i = 3; i >= 0; --i) {
    double s = g[static_cast<std::size_t>(i)];
    for (int k = i + 1; k < 4; ++k) s -= l[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)] * d[static_cast<std::size_t>(k)];
    d[static_cast<std::size_t>(i)] = s / l[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
  }
  return true;
}

}  // namespace

LRCombiner fit_combiner(const ViewScoreMatrix& m, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("combiner lambda must be a finite value >= 0");
  if (m.labels.size() != m.size() || m.size() == 0) throw DataError("combiner fit needs labeled scores");
  std::size_t pos = 0;
  for (int y : m.labels) {
    if (y != 0 && y != 1) throw DataError("combiner fit needs labels in {0,1}");
    pos += static_cast<std::size_t>(y);
  }
  if (pos == 0 || pos == m.size()) throw DataError("combiner fit needs both classes");

  std::vector<std::array<double, 3>> x(m.size());
  for (std::size_t i = 0; i < m.size(); ++i)
    for (int v = 0; v < 3; ++v) x[i][static_cast<std::size_t>(v)] = clipped_logit(m.scores[i][static_cast<std::size_t>(v)]);

  constexpr int kMaxIterations = 200;
  constexpr double kTolerance = 1e-8;
  LRCombiner c;
  c.lambda = lambda;
  Vec4 t{0.0, 0.0, 0.0, 0.0};
  double f = objective(x, m.labels, t, lambda);
  c.objective_trace.push_back(f);
  for (int it = 0;; ++it) {
    Vec4 g{};
    std::array<std::array<double, 4>, 4> h{};
    for (std::size_t i = 0; i < x.size(); ++i) {
      const Vec4 xi{x[i][0], x[i][1], x[i][2], 1.0};
      const double z = t[0] * xi[0] + t[1] * xi[1] + t[2] * xi[2] + t[3];
      const double p = sigm(z);
      const double r = p - static_cast<double>(m.labels[i]);
      const double wgt = p * (1.0 - p);
      for (std::size_t a = 0; a < 4; ++a) {
        g[a] += r * xi[a];
        for (std::size_t b = 0; b < 4; ++b) h[a][b] += wgt * xi[a] * xi[b];
      }
    }
    for (std::size_t a = 0; a < 3; ++a) {
      g[a] += 2.0 * lambda * t[a];
      h[a][a] += 2.0 * lambda;
    }
    const double gnorm = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + g[3] * g[3]);
    c.gradient_norm = gnorm;
    c.iterations = it;
    if (gnorm <= kTolerance) {
      c.converged = true;
      break;
    }
    if (it >= kMaxIterations) break;

    // Levenberg damping keeps the step defined when the Hessian is near singular.
    Vec4 d{};
    double mu = 0.0;
    while (true) {
      auto hd = h;
      for (std::size_t a = 0; a < 4; ++a) hd[a][a] += mu;
      if (solve4(hd, g, d)) break;
      mu = mu == 0.0 ? 1e-10 : mu * 10.0;
      if (mu > 1e10) throw NumericalError("combiner fit: Hessian is not positive definite");
    }
    // Backtracking line search: accept only non-increasing objective values.
    double step = 1.0;
    bool accepted = false;
    for (int k = 0; k < 60; ++k, step *= 0.5) {
      Vec4 cand;
      for (std::size_t a = 0; a < 4; ++a) cand[a] = t[a] - step * d[a];
      const double fc = objective(x, m.labels, cand, lambda);
      if (std::isfinite(fc) && fc <= f) {
        t = cand;
        f = fc;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    c.objective_trace.push_back(f);
  }
  for (std::size_t a = 0; a < 4; ++a)
    if (!std::isfinite(t[a])) throw NumericalError("combiner fit diverged");
  c.w = {t[0], t[1], t[2]};
  c.b = t[3];
  return c;
}

double predict_combined(const LRCombiner& c, const std::array<double, 3>& s) {
  const double z = c.w[0] * clipped_logit(s[0]) + c.w[1] * clipped_logit(s[1]) + c.w[2] * clipped_logit(s[2]) + c.b;
  return sigm(z);
}

std::vector<double> predict_combined(const LRCombiner& c, const ViewScoreMatrix& m) {
  std::vector<double> out;
  out.reserve(m.size());
  for (const auto& s : m.scores) out.push_back(predict_combined(c, s));
  return out;
}

std::string serialize_combiner(const LRCombiner& c) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g", c.w[0], c.w[1], c.w[2], c.b, c.lambda);
  return std::string("w_ax,w_co,w_sa,b,lambda,provenance\n") + buf + "," + c.provenance + "\n";
}

LRCombiner parse_combiner(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string header, line;
  std::getline(in, header);
  if (trim(header).rfind("w_ax,w_co,w_sa,b,lambda", 0) != 0) throw DataError("combiner record: bad header");
  std::getline(in, line);
  const auto cells = split_csv_line(trim(line));
  if (cells.size() < 5) throw DataError("combiner record: expected at least 5 fields");
  LRCombiner c;
  try {
    c.w = {std::stod(cells[0]), std::stod(cells[1]), std::stod(cells[2])};
    c.b = std::stod(cells[3]);
    c.lambda = std::stod(cells[4]);
  } catch (const std::exception&) {
    throw DataError("combiner record: malformed number");
  }
  if (cells.size() > 5) c.provenance = cells[5];
  c.converged = true;
  return c;
}

void write_combiner(const LRCombiner& c, const std::filesystem::path& path) {
  write_text_file(path, serialize_combiner(c));
}

LRCombiner read_combiner(const std::filesystem::path& path) { return parse_combiner(read_text_file(path)); }

}  // namespace gliopipe
