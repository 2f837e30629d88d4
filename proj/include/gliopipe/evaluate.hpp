#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gliopipe/dataset.hpp"
#include "gliopipe/preprocess.hpp"

namespace gliopipe {

struct Prediction {
  std::string patient_id;
  double score = 0.5;
  int label = -1;  // -1 when the label has not been attached
};

struct PredictionTable {
  std::vector<Prediction> rows;

  std::vector<double> scores() const;
  std::vector<int> labels() const;
};

/// CSV `patient_id,score,label`; an empty label field means unlabeled.
std::string serialize_predictions(const PredictionTable& table);
PredictionTable parse_predictions(std::string_view text);
void write_predictions(const PredictionTable& table, const std::filesystem::path& path);
PredictionTable read_predictions(const std::filesystem::path& path);

/// Ties count half. Throws DataError("AUROC undefined ...") unless both classes are present.
double auroc(std::span<const double> scores, std::span<const int> labels);

struct RocResult {
  std::vector<double> thresholds;  // +inf sentinel, then unique scores descending
  std::vector<double> fpr;
  std::vector<double> tpr;
  double auroc = 0.0;
};

RocResult roc_curve(std::span<const double> scores, std::span<const int> labels);

/// Trapezoidal area under an arbitrary polyline.
double trapezoid_area(std::span<const double> x, std::span<const double> y);

struct TrendLine {
  double slope = 0.0;
  double intercept = 0.0;
  double r = 0.0;
};

/// Ordinary least squares of AUROC on nominal depth.
TrendLine complexity_trend(const std::vector<std::pair<double, double>>& points);

/// One cell of the experiment grid. `view` is empty for 3D models;
/// `ensemble_test_auroc` is set for 2D rows.
struct ResultRow {
  int dim = 2;
  int depth = 10;
  Task task = Task::idh;
  Sequence sequence = Sequence::t1;
  std::optional<View> view;
  double tune_auroc = 0.0;
  double test_auroc = 0.0;
  std::optional<double> ensemble_test_auroc;

  std::string model_label() const;
};

struct ReportGrid {
  Task task = Task::idh;
  std::vector<Sequence> sequences;
  std::vector<int> depths_2d;
  std::vector<int> depths_3d;
};

struct Stat {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::size_t n = 0;
};

Stat summarize_values(std::span<const double> values);

/// Aggregates mirroring the reported results: per-view 2D test AUROC, 2D
/// ensemble, 3D, both methods combined, per-sequence means, and trend lines.
struct ReportSummary {
  std::map<std::string, Stat> groups;
  std::map<std::string, TrendLine> trends;

  nlohmann::json to_json() const;
};

ReportSummary summarize_results(const std::vector<ResultRow>& rows);

/// Table-shaped CSV for one dimensionality.
std::string report_csv(const std::vector<ResultRow>& rows, int dim);
/// Parses report_csv output back into rows.
std::vector<ResultRow> parse_report_csv(std::string_view text);
/// Test AUROC vs depth per sequence with its regression line.
std::string report_svg(const std::vector<ResultRow>& rows, int dim);

struct ReportFiles {
  std::vector<std::filesystem::path> csv;
  std::vector<std::filesystem::path> svg;
  std::filesystem::path summary;
};

/// Checks that the grid is complete (throws DataError naming the missing
/// model, sequence and view) and writes report_{2d,3d}.csv, auroc_{2d,3d}.svg
/// and summary.json under `out_dir`.
ReportFiles emit_report(const std::vector<ResultRow>& rows, const ReportGrid& grid,
                        const std::filesystem::path& out_dir);

/// The only code path that reads test labels.
class EvaluationStage {
 public:
  EvaluationStage(const TaskLabeling& labeling, const SplitAssignment& split) : labeling_(labeling), split_(split) {}

  /// Attaches ground truth to test-partition scores; rejects non-test patients.
  PredictionTable label_test_predictions(const PredictionTable& scores) const;
  double test_auroc(const PredictionTable& scores) const;

 private:
  const TaskLabeling& labeling_;
  const SplitAssignment& split_;
};

}  // namespace gliopipe
