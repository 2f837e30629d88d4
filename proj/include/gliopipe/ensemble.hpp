#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "gliopipe/evaluate.hpp"

namespace gliopipe {

/// Rows are patients; columns are the axial, coronal and sagittal model scores.
struct ViewScoreMatrix {
  std::vector<std::string> patient_ids;
  std::vector<std::array<double, 3>> scores;
  std::vector<int> labels;  // empty when unlabeled

  std::size_t size() const { return scores.size(); }
};

/// Joins three per-view prediction tables on patient id. Every patient must
/// appear in all three; labels are carried over when present and consistent.
ViewScoreMatrix join_view_scores(const std::array<PredictionTable, 3>& per_view);

struct LRCombiner {
  std::array<double, 3> w{0.0, 0.0, 0.0};
  double b = 0.0;
  double lambda = 1e-4;
  int iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
  /// Hash of the three source checkpoints.
  std::string provenance;
  /// Penalized objective after each accepted Newton step (index 0 = start).
  std::vector<double> objective_trace;
};

inline constexpr double kScoreClip = 1e-6;

/// log(p / (1 - p)) after clipping p to [1e-6, 1 - 1e-6].
double clipped_logit(double p);

/// L2-penalized (lambda * |w|^2, bias free) logistic regression on logit
/// features, fit by damped Newton iterations.
LRCombiner fit_combiner(const ViewScoreMatrix& tune_scores, double lambda = 1e-4);

double predict_combined(const LRCombiner& c, const std::array<double, 3>& scores);
std::vector<double> predict_combined(const LRCombiner& c, const ViewScoreMatrix& m);

/// Text record: header `w_ax,w_co,w_sa,b,lambda,provenance` then one data line.
std::string serialize_combiner(const LRCombiner& c);
LRCombiner parse_combiner(std::string_view text);
void write_combiner(const LRCombiner& c, const std::filesystem::path& path);
LRCombiner read_combiner(const std::filesystem::path& path);

}  // namespace gliopipe
