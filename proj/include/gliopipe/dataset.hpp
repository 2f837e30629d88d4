#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gliopipe {

enum class Sequence { t1, t1c, flair };
enum class Task { idh, mgmt };
enum class IdhStatus { mutated, wildtype, unknown };
enum class Label { negative = 0, positive = 1, unknown = 2 };
enum class Partition { train, tune, test };

inline constexpr std::array<Sequence, 3> kAllSequences{Sequence::t1, Sequence::t1c, Sequence::flair};
inline constexpr std::array<Partition, 3> kAllPartitions{Partition::train, Partition::tune, Partition::test};

std::string_view to_string(Sequence s);
std::string_view to_string(Task t);
std::string_view to_string(Partition p);
std::string_view to_string(Label l);
Sequence parse_sequence(std::string_view s);
Task parse_task(std::string_view s);
Partition parse_partition(std::string_view s);

struct PatientRecord {
  std::string patient_id;
  std::filesystem::path path_t1;
  std::filesystem::path path_t1c;
  std::filesystem::path path_flair;
  std::filesystem::path path_seg;
  IdhStatus idh_status = IdhStatus::unknown;
  std::optional<int> mgmt_index;
  /// Passthrough columns (age, sex, grade, survival...), never modeled.
  std::map<std::string, std::string> extra_metadata;

  const std::filesystem::path& sequence_path(Sequence s) const;
};

struct ExcludedRecord {
  PatientRecord record;
  std::string reason;
};

struct Manifest {
  std::vector<PatientRecord> records;
  std::vector<ExcludedRecord> excluded;

  const PatientRecord& at(std::string_view patient_id) const;
};

/// Parses the cohort CSV. Relative paths are resolved against the manifest's directory.
Manifest load_manifest(const std::filesystem::path& path);
Manifest parse_manifest(std::string_view csv_text, const std::filesystem::path& base_dir = {});
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// 0 -> negative, 1..17 -> positive, absent -> unknown.
Label derive_mgmt_label(std::optional<int> mgmt_index);

struct LabeledPatient {
  std::string patient_id;
  Label label;
};

struct TaskLabeling {
  Task task = Task::idh;
  std::vector<LabeledPatient> labels;  // manifest order, known labels only
  std::size_t positive_count = 0;
  std::size_t negative_count = 0;

  Label label_of(std::string_view patient_id) const;
  std::size_t size() const { return labels.size(); }
};

TaskLabeling build_task_labeling(const Manifest& manifest, Task task);

struct SplitFractions {
  double train = 0.6;
  double tune = 0.2;
  double test = 0.2;
};

struct SplitAssignment {
  Task task = Task::idh;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, Partition>> assignment;  // labeling order

  Partition partition_of(std::string_view patient_id) const;
  std::vector<std::string> members(Partition p) const;
  std::array<std::size_t, 3> sizes() const;
};

/// Stratified, seeded patient-level split with largest-remainder rounding.
SplitAssignment split_patients(const TaskLabeling& labeling, const SplitFractions& fractions,
                               std::uint64_t seed);

/// Largest-remainder apportionment of n items by the fractions.
std::array<std::size_t, 3> apportion(std::size_t n, const SplitFractions& fractions);

std::string serialize_split(const SplitAssignment& split);
SplitAssignment parse_split(std::string_view text);
void write_split(const SplitAssignment& split, const std::filesystem::path& path);
SplitAssignment read_split(const std::filesystem::path& path);

struct ClassWeights {
  double positive = 1.0;
  double negative = 1.0;
};

/// w_c = n_total / (2 n_c).
ClassWeights class_weights(std::size_t n_positive, std::size_t n_negative);
/// Inverse-frequency weights over one partition (the training partition in practice).
ClassWeights class_weights(const TaskLabeling& labeling, const SplitAssignment& split,
                           Partition restricted_to = Partition::train);

class EvaluationStage;

/// Capability required to read test-partition labels. Only the evaluation
/// stage can mint one, so training-side code cannot reach test labels.
class TestLabelToken {
  TestLabelToken() = default;
  friend class EvaluationStage;
};

/// Labels for the train or tune partition. Asking for the test partition throws.
std::vector<LabeledPatient> partition_labels(const TaskLabeling& labeling, const SplitAssignment& split,
                                             Partition p);
std::vector<LabeledPatient> test_partition_labels(const TaskLabeling& labeling,
                                                  const SplitAssignment& split, const TestLabelToken&);

}  // namespace gliopipe
