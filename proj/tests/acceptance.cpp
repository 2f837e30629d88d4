// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <iostream>
#include <map>
#include <sstream>

#include "auroc_oracle.hpp"
#include "gliopipe/error.hpp"
#include "gliopipe/evaluate.hpp"
#include "gliopipe/phantom.hpp"
#include "gliopipe/pipeline.hpp"
#include "gliopipe/util.hpp"
#include "gradcheck.hpp"
#include "phantom_samples.hpp"
#include "test_support.hpp"

using namespace gliopipe;

namespace {

// Tolerances and thresholds.
constexpr double kSignal2dMin = 0.85;
constexpr double kSignal3dMin = 0.80;
constexpr double kNullLo = 0.35;
constexpr double kNullHi = 0.65;
constexpr double kParityMax = 0.10;
constexpr double kOracleTol = 1e-9;
constexpr double kGradTol = 1e-4;
// Larger steps straddle ReLU and max-pool kinks in the reduced network.
constexpr double kGradStep = 1e-6;
constexpr std::size_t kGradParams = 120;
constexpr double kBceTol = 1e-9;
constexpr double kBceLargeTol = 1e-6;
constexpr double kEncodingTol = 1e-6;
constexpr double kOverfitTarget = 0.01;
constexpr int kOverfitSteps = 200;
constexpr double kAggregateTol = 1e-4;

// Phantom experiment settings.
constexpr std::size_t kCohort = 240;
constexpr std::size_t kGrid = 64;
constexpr std::uint64_t kParitySeeds[3] = {1, 2, 3};

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  if (!pass) ++failures;
}

template <typename F>
void guarded(const std::string& name, F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    report(name, false, std::string("exception: ") + e.what());
  }
}

std::string fx(double v, int d = 4) { return format_fixed(v, d); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ------------------------------------------------------------------ phantom runs

ExperimentConfig phantom_config(const std::filesystem::path& manifest, const std::filesystem::path& out, Task task,
                                int dim, std::uint64_t seed) {
  ExperimentConfig c;
  c.task = task;
  c.sequences = {Sequence::t1c};
  c.dims = {dim};
  c.depths_2d = {10};
  c.depths_3d = {10};
  c.preprocess.size_2d = 64;
  c.preprocess.size_3d = 32;
  c.train.learning_rate = 1e-3;
  c.train.batch_size = 16;
  c.train.max_epochs = 20;
  c.train.early_stop_patience = 6;
  c.train.plateau_patience = 3;
  c.train.seed = seed;
  c.split_seed = seed;
  c.augment.master_seed = seed;
  c.manifest = manifest;
  c.output = out;
  return c;
}

struct PhantomOutcome {
  double auroc = 0.0;
  double seconds = 0.0;
};

// Test AUROC of the 2D ensemble (dim 2) or the 3D model (dim 3).
PhantomOutcome phantom_run(const TempDir& dir, bool null_task, int dim, std::uint64_t seed) {
  PhantomConfig pc;
  pc.n_patients = kCohort;
  pc.grid = kGrid;
  pc.null_task = null_task;
  pc.seed = seed;
  const std::string tag = std::string(null_task ? "null" : "signal") + std::to_string(seed);
  const auto cohort_dir = dir / ("cohort_" + tag);
  std::filesystem::path manifest = cohort_dir / "manifest.csv";
  if (!std::filesystem::exists(manifest)) manifest = generate_cohort(pc, cohort_dir).manifest_path;
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig c = phantom_config(manifest, dir / ("runs_" + tag), null_task ? Task::mgmt : Task::idh, dim, seed);
  c.cache = dir / ("cache_" + tag);
  const RunResult r = run_full(c);
  PhantomOutcome o;
  o.seconds = seconds_since(t0);
  for (const auto& row : r.rows)
    if (row.dim == dim) o.auroc = dim == 2 ? *row.ensemble_test_auroc : row.test_auroc;
  const auto sz = read_split(r.run_dir / "data" / "split.csv").sizes();
  if (sz[0] != 144 || sz[1] != 48 || sz[2] != 48) throw DataError("unexpected phantom split sizes");
  return o;
}

void phantom_criteria() {
  TempDir dir("acceptance");
  std::map<std::uint64_t, std::pair<double, double>> by_seed;

  guarded("phantom signal 2D", [&] {
    const auto o = phantom_run(dir, false, 2, kParitySeeds[0]);
    by_seed[kParitySeeds[0]].first = o.auroc;
    report("phantom signal 2D", o.auroc >= kSignal2dMin,
           "ResNet10 three-view ensemble, 64x64, test AUROC " + fx(o.auroc) + " (>= " + fx(kSignal2dMin, 2) + "), " +
               fx(o.seconds, 0) + " s");
  });
  guarded("phantom signal 3D", [&] {
    const auto o = phantom_run(dir, false, 3, kParitySeeds[0]);
    by_seed[kParitySeeds[0]].second = o.auroc;
    report("phantom signal 3D", o.auroc >= kSignal3dMin,
           "ResNet10 3D, 32^3, test AUROC " + fx(o.auroc) + " (>= " + fx(kSignal3dMin, 2) + "), " + fx(o.seconds, 0) +
               " s");
  });
  guarded("phantom null", [&] {
    const auto o = phantom_run(dir, true, 2, kParitySeeds[0]);
    report("phantom null", o.auroc >= kNullLo && o.auroc <= kNullHi,
           "ResNet10 three-view ensemble on the null cohort, test AUROC " + fx(o.auroc) + " (in [" + fx(kNullLo, 2) +
               ", " + fx(kNullHi, 2) + "]), " + fx(o.seconds, 0) + " s");
  });
  guarded("2D vs 3D parity", [&] {
    std::string detail;
    bool pass = true;
    for (std::uint64_t s : kParitySeeds) {
      if (!by_seed.count(s) || s != kParitySeeds[0])
        by_seed[s] = {phantom_run(dir, false, 2, s).auroc, phantom_run(dir, false, 3, s).auroc};
      const auto [a2, a3] = by_seed[s];
      const double gap = std::abs(a2 - a3);
      pass = pass && gap <= kParityMax;
      detail += "seed " + std::to_string(s) + ": 2D " + fx(a2) + " 3D " + fx(a3) + " gap " + fx(gap) + "; ";
    }
    report("2D vs 3D parity", pass, detail + "max gap " + fx(kParityMax, 2));
  });
}

// ------------------------------------------------------------------ unit-level criteria

void auroc_criterion() {
  RandomStream rs(90210);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto in = auroc_oracle::random_instance(rs);
    worst = std::max(worst, std::abs(auroc(in.scores, in.labels) - auroc_oracle::pairwise(in.scores, in.labels)));
  }
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  const double fixture = auroc(s, y);
  report("AUROC oracle", worst <= kOracleTol && fixture == 0.75,
         "max deviation over 1000 tied instances " + std::to_string(worst) + ", fixture " + fx(fixture));
}

void gradient_criterion() {
  const auto r = gradcheck::run(2, 10, 4, 32, kGradParams, kGradStep, kGradTol, 17);
  report("gradient check", r.checked >= 100 && r.max_rel_error <= kGradTol,
         std::to_string(r.checked) + " parameters, max relative error " + std::to_string(r.max_rel_error) +
             ", median " + std::to_string(r.median_rel_error));
}

void bce_criterion() {
  const double a = weighted_bce(0.0, 1, 1.0, 1.0);
  const double b = weighted_bce(0.0, 1, 2.0, 1.0);
  const double c = weighted_bce(-100.0, 1, 1.0, 1.0);
  const bool pass = std::abs(a - std::log(2.0)) <= kBceTol && std::abs(b - 2 * std::log(2.0)) <= kBceTol &&
                    std::isfinite(c) && std::abs(c - 100.0) <= kBceLargeTol;
  report("weighted BCE", pass, "L(0,1,1)=" + fx(a, 12) + " L(0,1,2)=" + fx(b, 12) + " L(-100,1)=" + fx(c, 9));
}

void split_criterion() {
  std::string csv = "patient_id,path_t1,path_t1c,path_flair,path_seg,idh_status,mgmt_index\n";
  for (int i = 0; i < 495; ++i) {
    const std::string id = "U" + std::to_string(i);
    csv += id + ",a,b,c,d," + (i % 5 == 0 ? "mutated" : "wildtype") + ",\n";
  }
  const TaskLabeling l = build_task_labeling(parse_manifest(csv), Task::idh);
  const SplitAssignment s = split_patients(l, {}, 42);
  const SplitAssignment again = split_patients(l, {}, 42);
  const auto sz = s.sizes();
  bool stratified = true;
  const double pos_rate = static_cast<double>(l.positive_count) / static_cast<double>(l.size());
  for (Partition p : kAllPartitions) {
    std::size_t pos = 0, n = 0;
    for (const auto& id : s.members(p)) {
      ++n;
      pos += l.label_of(id) == Label::positive;
    }
    stratified = stratified && std::abs(static_cast<double>(pos) - pos_rate * static_cast<double>(n)) <= 1.0 + 1e-9;
  }
  report("split arithmetic", sz[0] == 297 && sz[1] == 99 && sz[2] == 99 && stratified && s.assignment == again.assignment,
         std::to_string(sz[0]) + "/" + std::to_string(sz[1]) + "/" + std::to_string(sz[2]) +
             (stratified ? ", stratified within one patient" : ", stratification off"));
}

std::size_t brute_argmax(const SegmentationMask& m, int axis) {
  std::size_t best = 0, best_count = 0;
  for (std::size_t s = 0; s < m.shape[axis]; ++s) {
    std::size_t c = 0;
    for (std::size_t z = 0; z < m.shape[2]; ++z)
      for (std::size_t y = 0; y < m.shape[1]; ++y)
        for (std::size_t x = 0; x < m.shape[0]; ++x) {
          const std::size_t p[3] = {x, y, z};
          if (p[axis] == s && m.at(x, y, z) != 0) ++c;
        }
    if (c > best_count) {
      best_count = c;
      best = s;
    }
  }
  return best;
}

void largest_slice_criterion() {
  RandomStream rs(7);
  const View views[3] = {View::sagittal, View::coronal, View::axial};
  int agree = 0, ties = 0;
  for (int trial = 0; trial < 200; ++trial) {
    SegmentationMask m({4 + rs.below(8), 4 + rs.below(8), 4 + rs.below(8)});
    for (auto& l : m.labels) l = rs.bernoulli(0.25) ? static_cast<std::uint8_t>(1 + rs.below(3)) : 0;
    m.labels[rs.below(m.labels.size())] = 1;
    if (trial % 5 == 0) {
      for (std::size_t y = 0; y < m.shape[1]; ++y)
        for (std::size_t x = 0; x < m.shape[0]; ++x) m.at(x, y, m.shape[2] - 1) = m.at(x, y, 0);
      ++ties;
    }
    for (int axis = 0; axis < 3; ++axis) agree += largest_slice_index(m, views[axis]) == brute_argmax(m, axis);
  }
  report("largest slice", agree == 600, std::to_string(agree) + "/600 agree with brute force, " +
                                            std::to_string(ties) + " masks with forced ties");
}

void encoding_criterion() {
  VolumeGrid vol({4, 1, 1});
  SegmentationMask mask({4, 1, 1});
  vol.values = {10, 20, 15, 999};
  mask.labels = {1, 1, 1, 0};
  const auto e = encode_subregions(vol, mask).grid.values;
  const bool pass = std::abs(e[0] - 1.0 / 24) <= kEncodingTol && std::abs(e[1] - 8.0 / 24) <= kEncodingTol &&
                    std::abs(e[2] - 4.5 / 24) <= kEncodingTol && e[3] == 0.0F;
  report("subregion encoding", pass, "{10,20,15} -> {" + fx(e[0], 6) + "," + fx(e[1], 6) + "," + fx(e[2], 6) +
                                         "}, background " + fx(e[3], 1));
}

void controller_criterion() {
  TrainConfig c;
  EpochController sel(c);
  for (double l : {0.9, 0.7, 0.8, 0.65, 0.66, 0.70, 0.69}) sel.observe(l);
  const bool argmin = sel.best_epoch() == 3;

  TrainConfig es;
  es.early_stop_patience = 3;
  es.plateau_patience = 100;
  EpochController stop(es);
  int stopped_at = -1;
  for (int i = 0; i < 10 && stopped_at < 0; ++i)
    if (stop.observe(i == 0 ? 0.5 : 0.6).stop) stopped_at = i;

  TrainConfig pl;
  pl.plateau_patience = 2;
  EpochController plateau(pl);
  int reduced_at = -1;
  for (int i = 0; i < 6 && reduced_at < 0; ++i)
    if (plateau.observe(i == 0 ? 0.5 : 0.6).lr_reduced) reduced_at = i;

  report("checkpoint selection", argmin && stopped_at == 3 && reduced_at == 2,
         "best epoch " + std::to_string(sel.best_epoch()) + ", early stop at epoch " + std::to_string(stopped_at) +
             ", plateau at epoch " + std::to_string(reduced_at));
}

template <typename T>
void put(std::vector<std::uint8_t>& b, std::size_t off, T v, bool big) {
  std::uint8_t tmp[sizeof(T)];
  std::memcpy(tmp, &v, sizeof(T));
  if (big) std::reverse(tmp, tmp + sizeof(T));
  std::memcpy(b.data() + off, tmp, sizeof(T));
}

std::vector<std::uint8_t> nifti_fixture(bool big, float slope, float inter, const char* magic) {
  std::vector<std::uint8_t> b(384, 0);
  put<std::int32_t>(b, 0, 348, big);
  const std::int16_t dim[8] = {3, 2, 2, 2, 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) put<std::int16_t>(b, 40 + 2 * i, dim[i], big);
  put<std::int16_t>(b, 70, 16, big);
  put<std::int16_t>(b, 72, 32, big);
  for (int i = 0; i < 8; ++i) put<float>(b, 76 + 4 * i, 1.0F, big);
  put<float>(b, 108, 352.0F, big);
  put<float>(b, 112, slope, big);
  put<float>(b, 116, inter, big);
  std::memcpy(b.data() + 344, magic, 4);
  for (int i = 0; i < 8; ++i) put<float>(b, 352 + 4 * i, static_cast<float>(i), big);
  return b;
}

void nifti_criterion() {
  const VolumeGrid le = parse_nifti(nifti_fixture(false, 0, 0, "n+1"));
  const VolumeGrid be = parse_nifti(nifti_fixture(true, 0, 0, "n+1"));
  const VolumeGrid sc = parse_nifti(nifti_fixture(false, 2, 1, "n+1"));
  bool scaled = true;
  for (int i = 0; i < 8; ++i) scaled = scaled && sc.values[i] == static_cast<float>(2 * i + 1);
  bool rejected = false;
  try {
    parse_nifti(nifti_fixture(false, 0, 0, "xyz"));
  } catch (const DataError&) {
    rejected = true;
  }
  report("NIfTI parsing", le.values == be.values && le.values[7] == 7.0F && scaled && rejected,
         std::string("LE/BE ") + (le.values == be.values ? "identical" : "differ") + ", scl " +
             (scaled ? "exact" : "wrong") + ", bad magic " + (rejected ? "rejected" : "accepted"));
}

void overfit_criterion() {
  PhantomConfig pc;
  pc.seed = 9;
  std::string detail;
  bool pass = true;
  const std::pair<int, int> specs[] = {{2, 10}, {2, 18}, {2, 34}, {2, 50}, {3, 10}, {3, 18}};
  for (auto [dim, depth] : specs) {
    const auto t0 = std::chrono::steady_clock::now();
    const SampleSet s = phantom_samples::make(pc, 0, 8, Sequence::t1c, dim, View::axial, 32);
    const auto r = phantom_samples::overfit(nn::ResNetSpec::canonical(dim, depth), s, 1e-3, kOverfitSteps,
                                            kOverfitTarget, 1);
    pass = pass && r.reached;
    detail += std::to_string(dim) + "D-" + std::to_string(depth) + " " +
              (r.reached ? std::to_string(r.steps) + " steps" : "loss " + fx(r.final_loss)) + " (" +
              fx(seconds_since(t0), 0) + " s); ";
  }
  report("one-batch overfit", pass, detail);
}

void trend_criterion() {
  const TrendLine t = complexity_trend({{10, 0.8700}, {18, 0.8944}, {34, 0.8999}});
  report("trend line", t.slope > 0, "slope " + std::to_string(t.slope) + " per layer, r " + fx(t.r));
}

void aggregation_criterion() {
  const std::filesystem::path data(GLIOPIPE_TEST_DATA);
  auto rows = parse_report_csv(read_text_file(data / "reference_2d.csv"));
  for (const auto& r : parse_report_csv(read_text_file(data / "reference_3d.csv"))) rows.push_back(r);
  const ReportSummary s = summarize_results(rows);
  const double ens = s.groups.at("2d_ensemble").mean;
  const double all = s.groups.at("overall").mean;
  report("report aggregation", std::abs(ens - 0.8782) <= kAggregateTol && std::abs(all - 0.8717) <= kAggregateTol,
         "2D ensemble mean " + fx(ens, 5) + ", overall mean " + fx(all, 5));
}

}  // namespace

int main(int argc, char** argv) {
  // --quick skips the phantom training runs.
  const bool quick = argc > 1 && std::strcmp(argv[1], "--quick") == 0;
  guarded("AUROC oracle", auroc_criterion);
  guarded("gradient check", gradient_criterion);
  guarded("weighted BCE", bce_criterion);
  guarded("split arithmetic", split_criterion);
  guarded("largest slice", largest_slice_criterion);
  guarded("subregion encoding", encoding_criterion);
  guarded("checkpoint selection", controller_criterion);
  guarded("NIfTI parsing", nifti_criterion);
  guarded("trend line", trend_criterion);
  guarded("report aggregation", aggregation_criterion);
  guarded("one-batch overfit", overfit_criterion);
  if (!quick) phantom_criteria();
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
