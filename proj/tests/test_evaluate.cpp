#include <doctest.h>

#include <cmath>
#include <algorithm>

#include "auroc_oracle.hpp"
#include "gliopipe/error.hpp"
#include "gliopipe/evaluate.hpp"
#include "gliopipe/random.hpp"
#include "gliopipe/util.hpp"
#include "test_support.hpp"

using namespace gliopipe;

namespace {

std::vector<ResultRow> reference_rows() {
  auto rows = parse_report_csv(read_text_file(std::filesystem::path(GLIOPIPE_TEST_DATA) / "reference_2d.csv"));
  for (const auto& r : parse_report_csv(read_text_file(std::filesystem::path(GLIOPIPE_TEST_DATA) / "reference_3d.csv")))
    rows.push_back(r);
  return rows;
}

}  // namespace

TEST_CASE("AUROC examples") {
  const std::vector<double> perfect{0.9, 0.8, 0.2, 0.1};
  const std::vector<int> pl{1, 1, 0, 0};
  CHECK(auroc(perfect, pl) == 1.0);
  const std::vector<double> same(6, 0.3);
  CHECK(auroc(same, std::vector<int>{0, 1, 0, 1, 1, 0}) == 0.5);
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  CHECK(auroc(s, y) == 0.75);
  CHECK(auroc_oracle::pairwise(s, y) == 0.75);
  CHECK_THROWS_WITH_AS(auroc(s, std::vector<int>{1, 1, 1, 1}), doctest::Contains("AUROC undefined"), DataError);
}

TEST_CASE("ROC curve") {
  const std::vector<double> s{0.9, 0.8, 0.2, 0.1};
  const RocResult r = roc_curve(s, std::vector<int>{1, 1, 0, 0});
  CHECK(std::isinf(r.thresholds.front()));
  bool through_01 = false;
  for (std::size_t i = 0; i < r.fpr.size(); ++i) through_01 |= r.fpr[i] == 0.0 && r.tpr[i] == 1.0;
  CHECK(through_01);
  CHECK(r.auroc == 1.0);

  const RocResult anti = roc_curve(s, std::vector<int>{0, 0, 1, 1});
  CHECK(anti.auroc == 0.0);
  bool through_10 = false;
  for (std::size_t i = 0; i < anti.fpr.size(); ++i) through_10 |= anti.fpr[i] == 1.0 && anti.tpr[i] == 0.0;
  CHECK(through_10);

  const RocResult four = roc_curve(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1});
  CHECK(four.auroc == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(trapezoid_area(four.fpr, four.tpr) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(four.fpr.front() == 0.0);
  CHECK(four.tpr.back() == 1.0);
}

TEST_CASE("AUROC properties on random instances with ties") {
  RandomStream rs(2718);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto in = auroc_oracle::random_instance(rs);
    const double a = auroc(in.scores, in.labels);
    CHECK(std::abs(a - auroc_oracle::pairwise(in.scores, in.labels)) <= 1e-9);
    CHECK(std::abs(roc_curve(in.scores, in.labels).auroc - a) <= 1e-9);

    std::vector<int> flipped(in.labels.size());
    for (std::size_t i = 0; i < flipped.size(); ++i) flipped[i] = 1 - in.labels[i];
    CHECK(a + auroc(in.scores, flipped) == 1.0);

    std::vector<double> cube(in.scores.size()), squash(in.scores.size());
    for (std::size_t i = 0; i < cube.size(); ++i) {
      const double v = in.scores[i] - 0.5;
      cube[i] = v * v * v;
      squash[i] = 1.0 / (1.0 + std::exp(-5 * in.scores[i]));
    }
    CHECK(auroc(cube, in.labels) == a);
    CHECK(auroc(squash, in.labels) == a);
  }
}

TEST_CASE("trend lines") {
  const TrendLine t = complexity_trend({{10, 0.8}, {34, 0.9}});
  CHECK(t.slope == doctest::Approx(0.1 / 24).epsilon(1e-12));
  CHECK(t.intercept == doctest::Approx(0.7583).epsilon(1e-4));
  const TrendLine flat = complexity_trend({{10, 0.7}, {18, 0.7}, {34, 0.7}});
  CHECK(std::abs(flat.slope) <= 1e-15);
  CHECK(std::abs(flat.r) <= 1e-12);
  CHECK_THROWS_WITH_AS(complexity_trend({{18, 0.7}, {18, 0.8}}), doctest::Contains("degenerate abscissa"), DataError);
  CHECK(complexity_trend({{10, 0.8700}, {18, 0.8944}, {34, 0.8999}}).slope > 0);

  RandomStream rs(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<double, double>> pts;
    for (int d : {10, 18, 34, 50, 101, 152}) pts.push_back({double(d), rs.uniform(0.4, 1.0)});
    const TrendLine l = complexity_trend(pts);
    double sr = 0, sxr = 0;
    for (auto [x, y] : pts) {
      const double res = y - (l.intercept + l.slope * x);
      sr += res;
      sxr += x * res;
    }
    CHECK(std::abs(sr) <= 1e-10);
    CHECK(std::abs(sxr) <= 1e-10);
  }
}

TEST_CASE("aggregates over the reference tables") {
  const auto rows = reference_rows();
  CHECK(rows.size() == 63);
  const ReportSummary s = summarize_results(rows);
  CHECK(s.groups.at("2d_ensemble").n == 18);
  CHECK(std::abs(s.groups.at("2d_ensemble").mean - 0.8782) <= 1e-4);
  CHECK(s.groups.at("2d_ensemble").min == doctest::Approx(0.8199));
  CHECK(s.groups.at("2d_ensemble").max == doctest::Approx(0.9096));
  CHECK(std::abs(s.groups.at("3d").mean - 0.8586) <= 1e-4);
  CHECK(s.groups.at("overall").n == 27);
  CHECK(std::abs(s.groups.at("overall").mean - 0.8717) <= 1e-4);
  CHECK(s.trends.at("3d_T1c").slope > 0);
}

TEST_CASE("report files") {
  const auto rows = reference_rows();
  std::vector<ResultRow> one_seq;
  for (const auto& r : rows)
    if (r.dim == 2 && r.sequence == Sequence::t1) one_seq.push_back(r);
  const std::string csv = report_csv(one_seq, 2);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 6 * 3);
  CHECK(csv.starts_with("Model,Gene,Modality,View,Val AUROC,Test AUROC,Ensemble test AUROC\n"));

  // CSV survives a round trip through the parser.
  const auto back = parse_report_csv(report_csv(rows, 2));
  CHECK(back.size() == 54);
  CHECK(report_csv(back, 2) == report_csv(rows, 2));

  CHECK(report_svg(rows, 2) == report_svg(rows, 2));
  CHECK(report_svg(rows, 3).find("<svg") != std::string::npos);

  TempDir dir("report");
  ReportGrid grid;
  grid.sequences = {Sequence::t1, Sequence::t1c, Sequence::flair};
  grid.depths_2d = {10, 18, 34, 50, 101, 152};
  grid.depths_3d = {10, 18, 34};
  const ReportFiles f = emit_report(rows, grid, dir.path);
  CHECK(f.csv.size() == 2);
  CHECK(f.svg.size() == 2);
  CHECK(std::filesystem::exists(f.summary));
  const std::string first = read_text_file(f.svg[0]);
  emit_report(rows, grid, dir.path);
  CHECK(read_text_file(f.svg[0]) == first);

  std::vector<ResultRow> missing;
  for (const auto& r : rows)
    if (!(r.dim == 2 && r.depth == 34 && r.sequence == Sequence::flair && r.view == View::coronal)) missing.push_back(r);
  CHECK_THROWS_WITH_AS(emit_report(missing, grid, dir.path), doctest::Contains("ResNet34 2D, FLAIR, coronal"),
                       DataError);
}

TEST_CASE("prediction files") {
  PredictionTable t;
  t.rows = {{"A", 0.123456789012345678, 1}, {"B", 1e-9, 0}, {"C", 0.5, -1}};
  const PredictionTable back = parse_predictions(serialize_predictions(t));
  REQUIRE(back.rows.size() == 3);
  CHECK(back.rows[0].score == t.rows[0].score);
  CHECK(back.rows[1].score == t.rows[1].score);
  CHECK(back.rows[2].label == -1);
}

TEST_CASE("evaluation stage only labels test patients") {
  Manifest m;
  for (int i = 0; i < 20; ++i) {
    PatientRecord r;
    r.patient_id = "P" + std::to_string(i);
    r.idh_status = i % 2 ? IdhStatus::mutated : IdhStatus::wildtype;
    m.records.push_back(r);
  }
  const TaskLabeling l = build_task_labeling(m, Task::idh);
  const SplitAssignment s = split_patients(l, {}, 3);
  const EvaluationStage ev(l, s);
  PredictionTable test;
  for (const auto& id : s.members(Partition::test)) test.rows.push_back({id, 0.5, -1});
  const PredictionTable labeled = ev.label_test_predictions(test);
  for (const auto& r : labeled.rows) CHECK(r.label == (l.label_of(r.patient_id) == Label::positive ? 1 : 0));
  PredictionTable leak = test;
  leak.rows.push_back({s.members(Partition::train).front(), 0.5, -1});
  CHECK_THROWS_AS(ev.label_test_predictions(leak), DataError);
}
