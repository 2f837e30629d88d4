#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "gliopipe/augment.hpp"
#include "gliopipe/dataset.hpp"
#include "gliopipe/ensemble.hpp"
#include "gliopipe/evaluate.hpp"
#include "gliopipe/preprocess.hpp"
#include "gliopipe/train.hpp"

namespace gliopipe {

inline constexpr int kConfigSchemaVersion = 1;

struct ExperimentConfig {
  Task task = Task::idh;
  std::vector<Sequence> sequences{Sequence::t1, Sequence::t1c, Sequence::flair};
  std::vector<int> dims{2, 3};
  std::vector<int> depths_2d{10, 18, 34, 50, 101, 152};
  std::vector<int> depths_3d{10, 18, 34};
  int base_width = 64;
  double dropout_p = 0.2;
  PreprocessConfig preprocess;
  AugmentConfig augment;
  TrainConfig train;
  std::uint64_t split_seed = 0;
  SplitFractions fractions;
  double ensemble_lambda = 1e-4;
  std::filesystem::path manifest;
  std::filesystem::path cache;
  std::filesystem::path output = "runs";
  int jobs = 1;

  /// Throws ConfigError on any invalid field (including 3D depths outside {10, 18, 34}).
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys take defaults; unknown keys and schema mismatches are ConfigErrors.
  static ExperimentConfig from_json(const nlohmann::json& j);
  /// Everything that determines results; paths.output, paths.cache and jobs are excluded.
  nlohmann::json semantic_json() const;
  /// FNV-1a over the key-sorted semantic JSON.
  std::string hash() const;
  bool has_dim(int d) const;
  const std::vector<int>& depths(int dim) const { return dim == 2 ? depths_2d : depths_3d; }
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// One trained network in the grid: a 2D per-view model or a 3D volume model.
struct Cell {
  int dim = 2;
  int depth = 10;
  Sequence sequence = Sequence::t1;
  std::optional<View> view;

  std::string name() const;  // e.g. "2d_r10_T1_axial", "3d_r18_FLAIR"
  std::uint64_t seed(std::uint64_t base) const;
};

/// Network inputs for one sequence across the labeled cohort.
struct SequenceInputs {
  std::vector<std::string> patient_ids;
  std::vector<std::array<ImageTensor, 3>> views;
  std::vector<ImageTensor> volumes;
  std::size_t cache_hits = 0;
  std::size_t cache_misses = 0;
};

SequenceInputs load_sequence_inputs(const Manifest& manifest, const TaskLabeling& labeling, Sequence seq,
                                    const PreprocessConfig& config, bool want_views, bool want_volume,
                                    PreprocessCache& cache);

/// Samples of one partition for a cell. Train and tune samples carry labels;
/// test samples never do.
SampleSet partition_samples(const SequenceInputs& inputs, const TaskLabeling& labeling, const SplitAssignment& split,
                            Partition partition, const Cell& cell);

struct RunOptions {
  std::ostream* log = nullptr;  // progress lines
};

struct RunResult {
  std::filesystem::path run_dir;
  std::string config_hash;
  std::vector<ResultRow> rows;
  ReportFiles report;
  std::size_t cache_hits = 0;
  std::size_t cache_misses = 0;
  std::size_t checkpoints_reused = 0;
};

/// split -> preprocess -> train -> combine -> predict -> evaluate -> report,
/// under <output>/<config hash>/. Existing checkpoints with a matching hash are reused.
RunResult run_full(const ExperimentConfig& config, const RunOptions& options = {});

/// Hex digest of the bytes of the given files, in order.
std::string files_digest(const std::vector<std::filesystem::path>& files);

}  // namespace gliopipe
