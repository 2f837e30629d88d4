#include "gliopipe/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "gliopipe/error.hpp"
#include "gliopipe/random.hpp"
#include "gliopipe/util.hpp"

namespace gliopipe {

std::string_view to_string(Sequence s) {
  switch (s) {
    case Sequence::t1: return "T1";
    case Sequence::t1c: return "T1c";
    case Sequence::flair: return "FLAIR";
  }
  return "?";
}

std::string_view to_string(Task t) { return t == Task::idh ? "IDH" : "MGMT"; }

std::string_view to_string(Partition p) {
  switch (p) {
    case Partition::train: return "train";
    case Partition::tune: return "tune";
    case Partition::test: return "test";
  }
  return "?";
}

std::string_view to_string(Label l) {
  switch (l) {
    case Label::negative: return "negative";
    case Label::positive: return "positive";
    case Label::unknown: return "unknown";
  }
  return "?";
}

Sequence parse_sequence(std::string_view s) {
  const auto v = to_lower(trim(s));
  if (v == "t1") return Sequence::t1;
  if (v == "t1c" || v == "t1ce" || v == "t1gd") return Sequence::t1c;
  if (v == "flair") return Sequence::flair;
  throw ConfigError("unknown sequence '" + std::string(s) + "'");
}

Task parse_task(std::string_view s) {
  const auto v = to_lower(trim(s));
  if (v == "idh") return Task::idh;
  if (v == "mgmt") return Task::mgmt;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

Partition parse_partition(std::string_view s) {
  const auto v = to_lower(trim(s));
  if (v == "train") return Partition::train;
  if (v == "tune") return Partition::tune;
  if (v == "test") return Partition::test;
  throw DataError("unknown partition '" + std::string(s) + "'");
}

const std::filesystem::path& PatientRecord::sequence_path(Sequence s) const {
  switch (s) {
    case Sequence::t1: return path_t1;
    case Sequence::t1c: return path_t1c;
    case Sequence::flair: return path_flair;
  }
  return path_t1;
}

const PatientRecord& Manifest::at(std::string_view patient_id) const {
  for (const auto& r : records)
    if (r.patient_id == patient_id) return r;
  throw DataError("patient '" + std::string(patient_id) + "' not in manifest");
}

namespace {

const std::vector<std::string> kRequiredColumns{"patient_id", "path_t1",     "path_t1c",  "path_flair",
                                                "path_seg",   "idh_status", "mgmt_index"};

IdhStatus parse_idh(std::string_view cell, std::size_t row) {
  const auto v = to_lower(trim(cell));
  if (v.empty() || v == "unknown" || v == "na") return IdhStatus::unknown;
  if (v == "mutated" || v == "mutant" || v == "1") return IdhStatus::mutated;
  if (v == "wildtype" || v == "wild-type" || v == "wt" || v == "0") return IdhStatus::wildtype;
  throw DataError("row " + std::to_string(row) + ": malformed idh_status '" + std::string(cell) + "'");
}

std::optional<int> parse_mgmt(std::string_view cell, std::size_t row) {
  const auto v = trim(cell);
  if (v.empty()) return std::nullopt;
  int value = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), value);
  if (ec != std::errc{} || ptr != v.data() + v.size())
    throw DataError("row " + std::to_string(row) + ": malformed mgmt_index '" + v + "'");
  if (value < 0 || value > 17)
    throw DataError("row " + std::to_string(row) + ": mgmt_index " + v + " outside [0, 17]");
  return value;
}

std::filesystem::path resolve(std::string_view cell, const std::filesystem::path& base) {
  const auto v = trim(cell);
  if (v.empty()) return {};
  std::filesystem::path p(v);
  if (p.is_relative() && !base.empty()) p = base / p;
  return p;
}

}  // namespace

Manifest parse_manifest(std::string_view csv_text, const std::filesystem::path& base_dir) {
  std::istringstream in{std::string(csv_text)};
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_csv_line(line);
      break;
    }
  }
  if (header.empty()) throw DataError("manifest is empty");
  if (!header.empty() && header[0].starts_with("\xEF\xBB\xBF")) header[0].erase(0, 3);
  for (auto& h : header) h = trim(h);

  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const auto& req : kRequiredColumns)
    if (!col.contains(req)) throw DataError("manifest missing column '" + req + "'");

  Manifest m;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    cells.resize(std::max(cells.size(), header.size()));
    PatientRecord r;
    r.patient_id = trim(cells[col["patient_id"]]);
    if (r.patient_id.empty()) throw DataError("row " + std::to_string(line_no) + ": empty patient_id");
    if (!seen.insert(r.patient_id).second)
      throw DataError("duplicate patient_id '" + r.patient_id + "' at row " + std::to_string(line_no));
    r.path_t1 = resolve(cells[col["path_t1"]], base_dir);
    r.path_t1c = resolve(cells[col["path_t1c"]], base_dir);
    r.path_flair = resolve(cells[col["path_flair"]], base_dir);
    r.path_seg = resolve(cells[col["path_seg"]], base_dir);
    r.idh_status = parse_idh(cells[col["idh_status"]], line_no);
    r.mgmt_index = parse_mgmt(cells[col["mgmt_index"]], line_no);
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (std::find(kRequiredColumns.begin(), kRequiredColumns.end(), header[i]) != kRequiredColumns.end())
        continue;
      r.extra_metadata[header[i]] = cells[i];
    }

    std::string reason;
    if (r.path_t1.empty() || r.path_t1c.empty() || r.path_flair.empty())
      reason = "missing sequence";
    else if (r.path_seg.empty())
      reason = "missing segmentation";
    if (reason.empty())
      m.records.push_back(std::move(r));
    else
      m.excluded.push_back({std::move(r), reason});
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_text_file(path), path.parent_path());
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::set<std::string> extra_keys;
  for (const auto& r : manifest.records)
    for (const auto& [k, v] : r.extra_metadata) extra_keys.insert(k);

  std::ostringstream out;
  out << "patient_id,path_t1,path_t1c,path_flair,path_seg,idh_status,mgmt_index";
  for (const auto& k : extra_keys) out << ',' << csv_escape(k);
  out << '\n';
  const auto base = path.parent_path();
  auto rel = [&](const std::filesystem::path& p) {
    if (p.empty()) return std::string();
    if (!base.empty() && p.is_absolute()) return csv_escape(p.lexically_relative(base).generic_string());
    return csv_escape(p.generic_string());
  };
  for (const auto& r : manifest.records) {
    out << csv_escape(r.patient_id) << ',' << rel(r.path_t1) << ',' << rel(r.path_t1c) << ','
        << rel(r.path_flair) << ',' << rel(r.path_seg) << ',';
    if (r.idh_status == IdhStatus::mutated) out << "mutated";
    if (r.idh_status == IdhStatus::wildtype) out << "wildtype";
    out << ',';
    if (r.mgmt_index) out << *r.mgmt_index;
    for (const auto& k : extra_keys) {
      out << ',';
      if (auto it = r.extra_metadata.find(k); it != r.extra_metadata.end()) out << csv_escape(it->second);
    }
    out << '\n';
  }
  write_text_file(path, out.str());
}

Label derive_mgmt_label(std::optional<int> mgmt_index) {
  if (!mgmt_index) return Label::unknown;
  if (*mgmt_index < 0 || *mgmt_index > 17)
    throw DataError("mgmt_index " + std::to_string(*mgmt_index) + " outside [0, 17]");
  return *mgmt_index == 0 ? Label::negative : Label::positive;
}

Label TaskLabeling::label_of(std::string_view patient_id) const {
  for (const auto& lp : labels)
    if (lp.patient_id == patient_id) return lp.label;
  return Label::unknown;
}

TaskLabeling build_task_labeling(const Manifest& manifest, Task task) {
  TaskLabeling out;
  out.task = task;
  for (const auto& r : manifest.records) {
    Label l = Label::unknown;
    if (task == Task::idh) {
      if (r.idh_status == IdhStatus::mutated) l = Label::positive;
      if (r.idh_status == IdhStatus::wildtype) l = Label::negative;
    } else {
      l = derive_mgmt_label(r.mgmt_index);
    }
    if (l == Label::unknown) continue;
    out.labels.push_back({r.patient_id, l});
    (l == Label::positive ? out.positive_count : out.negative_count)++;
  }
  if (out.labels.empty())
    throw DataError("no patients with a known " + std::string(to_string(task)) + " label");
  return out;
}

namespace {

constexpr double kFloorGuard = 1e-9;

void validate_fractions(const SplitFractions& f) {
  if (!(f.train > 0 && f.tune > 0 && f.test > 0))
    throw ConfigError("split fractions must be positive");
  if (std::abs(f.train + f.tune + f.test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
}

}  // namespace

std::array<std::size_t, 3> apportion(std::size_t n, const SplitFractions& fractions) {
  validate_fractions(fractions);
  const std::array<double, 3> f{fractions.train, fractions.tune, fractions.test};
  std::array<std::size_t, 3> out{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int p = 0; p < 3; ++p) {
    const double q = static_cast<double>(n) * f[p];
    out[p] = static_cast<std::size_t>(std::floor(q + kFloorGuard));
    rem[p] = q - static_cast<double>(out[p]);
    assigned += out[p];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) out[order[k % 3]]++;
  return out;
}

SplitAssignment split_patients(const TaskLabeling& labeling, const SplitFractions& fractions,
                               std::uint64_t seed) {
  validate_fractions(fractions);
  const std::array<double, 3> f{fractions.train, fractions.tune, fractions.test};
  const std::array<Label, 2> classes{Label::positive, Label::negative};

  std::array<std::vector<std::string>, 2> members;
  for (const auto& lp : labeling.labels) members[lp.label == Label::positive ? 0 : 1].push_back(lp.patient_id);
  for (int c = 0; c < 2; ++c) {
    if (members[c].size() < 3)
      throw DataError("class '" + std::string(to_string(classes[c])) + "' has " +
                      std::to_string(members[c].size()) + " patients; at least 3 are needed to populate all partitions");
    RandomStream rs(mix_key(seed, 0x5EED5EEDULL, static_cast<std::uint64_t>(c)));
    auto& v = members[c];
    for (std::size_t i = v.size() - 1; i > 0; --i) std::swap(v[i], v[rs.below(i + 1)]);
  }

  // Per-class counts: floors plus one extra unit in selected cells so that row
  // sums match class sizes and column sums match the overall apportionment.
  const auto totals = apportion(labeling.size(), fractions);
  std::array<std::array<std::size_t, 3>, 2> counts{};
  std::array<std::array<double, 3>, 2> frac{};
  std::array<std::size_t, 2> row_need{};
  std::array<std::ptrdiff_t, 3> col_need{};
  for (int p = 0; p < 3; ++p) col_need[p] = static_cast<std::ptrdiff_t>(totals[p]);
  for (int c = 0; c < 2; ++c) {
    std::size_t sum = 0;
    for (int p = 0; p < 3; ++p) {
      const double q = static_cast<double>(members[c].size()) * f[p];
      counts[c][p] = static_cast<std::size_t>(std::floor(q + kFloorGuard));
      frac[c][p] = q - static_cast<double>(counts[c][p]);
      sum += counts[c][p];
      col_need[p] -= static_cast<std::ptrdiff_t>(counts[c][p]);
    }
    row_need[c] = members[c].size() - sum;
  }
  std::array<int, 2> row_order{0, 1};
  std::stable_sort(row_order.begin(), row_order.end(), [&](int a, int b) { return row_need[a] > row_need[b]; });
  for (int c : row_order) {
    for (std::size_t k = 0; k < row_need[c]; ++k) {
      int best = -1;
      for (int p = 0; p < 3; ++p) {
        if (counts[c][p] > static_cast<std::size_t>(std::floor(static_cast<double>(members[c].size()) * f[p] + kFloorGuard)))
          continue;  // already received its extra unit
        if (best < 0 || col_need[p] > col_need[best] ||
            (col_need[p] == col_need[best] && frac[c][p] > frac[c][best]))
          best = p;
      }
      counts[c][best]++;
      col_need[best]--;
    }
  }

  SplitAssignment out;
  out.task = labeling.task;
  out.seed = seed;
  std::map<std::string, Partition> lookup;
  for (int c = 0; c < 2; ++c) {
    std::size_t i = 0;
    for (int p = 0; p < 3; ++p)
      for (std::size_t k = 0; k < counts[c][p]; ++k) lookup[members[c][i++]] = kAllPartitions[p];
  }
  for (const auto& lp : labeling.labels) out.assignment.emplace_back(lp.patient_id, lookup.at(lp.patient_id));
  return out;
}

Partition SplitAssignment::partition_of(std::string_view patient_id) const {
  for (const auto& [id, p] : assignment)
    if (id == patient_id) return p;
  throw DataError("patient '" + std::string(patient_id) + "' not in split");
}

std::vector<std::string> SplitAssignment::members(Partition p) const {
  std::vector<std::string> out;
  for (const auto& [id, q] : assignment)
    if (q == p) out.push_back(id);
  return out;
}

std::array<std::size_t, 3> SplitAssignment::sizes() const {
  std::array<std::size_t, 3> s{};
  for (const auto& [id, p] : assignment) s[static_cast<int>(p)]++;
  return s;
}

std::string serialize_split(const SplitAssignment& split) {
  std::ostringstream out;
  out << "# seed=" << split.seed << " task=" << to_string(split.task) << '\n';
  out << "patient_id,partition\n";
  for (const auto& [id, p] : split.assignment) out << csv_escape(id) << ',' << to_string(p) << '\n';
  return out.str();
}

SplitAssignment parse_split(std::string_view text) {
  SplitAssignment out;
  std::istringstream in{std::string(text)};
  std::string line;
  bool have_meta = false;
  bool have_header = false;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty()) continue;
    if (t.starts_with("#")) {
      std::istringstream meta(t.substr(1));
      std::string tok;
      while (meta >> tok) {
        if (tok.starts_with("seed=")) out.seed = std::stoull(tok.substr(5));
        if (tok.starts_with("task=")) out.task = parse_task(tok.substr(5));
      }
      have_meta = true;
      continue;
    }
    if (!have_header) {
      have_header = true;
      continue;
    }
    auto cells = split_csv_line(t);
    if (cells.size() < 2) throw DataError("malformed split row '" + t + "'");
    out.assignment.emplace_back(trim(cells[0]), parse_partition(cells[1]));
  }
  if (!have_meta) throw DataError("split file lacks the '# seed=... task=...' line");
  return out;
}

void write_split(const SplitAssignment& split, const std::filesystem::path& path) {
  write_text_file(path, serialize_split(split));
}

SplitAssignment read_split(const std::filesystem::path& path) { return parse_split(read_text_file(path)); }

ClassWeights class_weights(std::size_t n_positive, std::size_t n_negative) {
  if (n_positive == 0 || n_negative == 0) throw DataError("class weights need both classes present");
  const double total = static_cast<double>(n_positive + n_negative);
  return {total / (2.0 * static_cast<double>(n_positive)), total / (2.0 * static_cast<double>(n_negative))};
}

ClassWeights class_weights(const TaskLabeling& labeling, const SplitAssignment& split, Partition restricted_to) {
  std::size_t pos = 0;
  std::size_t neg = 0;
  for (const auto& [id, p] : split.assignment) {
    if (p != restricted_to) continue;
    const Label l = labeling.label_of(id);
    if (l == Label::positive) ++pos;
    if (l == Label::negative) ++neg;
  }
  if (pos == 0 || neg == 0)
    throw DataError("partition '" + std::string(to_string(restricted_to)) + "' lacks one class");
  return class_weights(pos, neg);
}

namespace {

std::vector<LabeledPatient> labels_in(const TaskLabeling& labeling, const SplitAssignment& split, Partition p) {
  std::vector<LabeledPatient> out;
  for (const auto& [id, q] : split.assignment) {
    if (q != p) continue;
    const Label l = labeling.label_of(id);
    if (l == Label::unknown) throw DataError("patient '" + id + "' has no label for this task");
    out.push_back({id, l});
  }
  return out;
}

}  // namespace

std::vector<LabeledPatient> partition_labels(const TaskLabeling& labeling, const SplitAssignment& split,
                                             Partition p) {
  if (p == Partition::test) throw ConfigError("test-partition labels are reserved for the evaluation stage");
  return labels_in(labeling, split, p);
}

std::vector<LabeledPatient> test_partition_labels(const TaskLabeling& labeling, const SplitAssignment& split,
                                                  const TestLabelToken&) {
  return labels_in(labeling, split, Partition::test);
}

}  // namespace gliopipe
