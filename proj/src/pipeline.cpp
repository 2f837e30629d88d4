#include "gliopipe/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <thread>

#include "gliopipe/error.hpp"
#include "gliopipe/nn/checkpoint.hpp"
#include "gliopipe/util.hpp"
#include "gliopipe/volume_io.hpp"

namespace gliopipe {

using nlohmann::json;

// ---------------------------------------------------------------- config

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError("unknown config key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + where + "." + key + "' has the wrong type");
  }
}

json transform_json(const TransformSpec& t) {
  return {{"enabled", t.enabled}, {"probability", t.probability}, {"lo", t.lo}, {"hi", t.hi}};
}

void read_transform(const json& j, const char* key, TransformSpec& t) {
  if (!j.contains(key)) return;
  const std::string where = std::string("augment.") + key;
  check_keys(j.at(key), {"enabled", "probability", "lo", "hi"}, where);
  read_opt(j.at(key), "enabled", t.enabled, where);
  read_opt(j.at(key), "probability", t.probability, where);
  read_opt(j.at(key), "lo", t.lo, where);
  read_opt(j.at(key), "hi", t.hi, where);
}

struct NamedTransform {
  const char* name;
  TransformSpec AugmentConfig::*member;
};

constexpr NamedTransform kTransforms[] = {
    {"flip", &AugmentConfig::flip},
    {"rotation", &AugmentConfig::rotation},
    {"rotation_3d", &AugmentConfig::rotation_3d},
    {"zoom", &AugmentConfig::zoom},
    {"intensity_shift", &AugmentConfig::intensity_shift},
    {"intensity_scale", &AugmentConfig::intensity_scale},
    {"gaussian_noise", &AugmentConfig::gaussian_noise},
    {"contrast", &AugmentConfig::contrast},
    {"gaussian_smooth", &AugmentConfig::gaussian_smooth},
    {"elastic", &AugmentConfig::elastic},
    {"grid_distortion", &AugmentConfig::grid_distortion},
    {"histogram_shift", &AugmentConfig::histogram_shift},
};

std::string dim_name(int d) { return std::to_string(d) + "D"; }

int parse_dim(const json& v) {
  if (v.is_number_integer()) return v.get<int>();
  if (v.is_string()) {
    const auto s = to_lower(v.get<std::string>());
    if (s == "2d" || s == "2") return 2;
    if (s == "3d" || s == "3") return 3;
  }
  throw ConfigError("dims entries must be \"2D\" or \"3D\"");
}

}  // namespace

bool ExperimentConfig::has_dim(int d) const { return std::find(dims.begin(), dims.end(), d) != dims.end(); }

void ExperimentConfig::validate() const {
  if (sequences.empty()) throw ConfigError("config: sequences must not be empty");
  if (dims.empty()) throw ConfigError("config: dims must not be empty");
  for (int d : dims)
    if (d != 2 && d != 3) throw ConfigError("config: dims must be 2D or 3D");
  for (int d : depths_2d) nn::ResNetSpec::canonical(2, d, std::max(1, base_width), 0.0);
  for (int d : depths_3d) {
    if (d != 10 && d != 18 && d != 34)
      throw ConfigError("config: 3D depth " + std::to_string(d) + " not supported (3D depths are 10, 18, 34)");
  }
  if (has_dim(2) && depths_2d.empty()) throw ConfigError("config: 2D requested without depths");
  if (has_dim(3) && depths_3d.empty()) throw ConfigError("config: 3D requested without depths");
  if (base_width < 1) throw ConfigError("config: base_width must be positive");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("config: dropout_p must lie in [0,1)");
  preprocess.ranges.validate();
  if (preprocess.size_2d < 32 || preprocess.size_3d < 32) throw ConfigError("config: input sizes must be >= 32");
  augment.validate();
  train.validate();
  const double total = fractions.train + fractions.tune + fractions.test;
  if (fractions.train <= 0 || fractions.tune <= 0 || fractions.test <= 0 || std::abs(total - 1.0) > 1e-9)
    throw ConfigError("config: split fractions must be positive and sum to 1");
  if (!(ensemble_lambda >= 0.0)) throw ConfigError("config: ensemble lambda must be >= 0");
  if (jobs < 1) throw ConfigError("config: jobs must be >= 1");
}

json ExperimentConfig::to_json() const {
  json j = semantic_json();
  j["paths"]["cache"] = cache.generic_string();
  j["paths"]["output"] = output.generic_string();
  j["jobs"] = jobs;
  return j;
}

json ExperimentConfig::semantic_json() const {
  json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["task"] = std::string(to_string(task));
  j["sequences"] = json::array();
  for (Sequence s : sequences) j["sequences"].push_back(std::string(to_string(s)));
  j["dims"] = json::array();
  for (int d : dims) j["dims"].push_back(dim_name(d));
  j["depths_2d"] = depths_2d;
  j["depths_3d"] = depths_3d;
  j["model"] = {{"base_width", base_width}, {"dropout_p", dropout_p}};

  json ranges = json::array();
  for (const auto& r : preprocess.ranges.ranges) ranges.push_back({r.lo, r.hi});
  json labels = json::object();
  for (const auto& [k, v] : preprocess.label_map) labels[std::to_string(k)] = v;
  j["preprocess"] = {{"size_2d", preprocess.size_2d},
                     {"size_3d", preprocess.size_3d},
                     {"margin", preprocess.margin},
                     {"ranges", ranges},
                     {"label_map", labels},
                     {"nan_policy", preprocess.nan_policy == NanPolicy::zero ? "zero" : "reject"}};

  json aug = json::object();
  for (const auto& t : kTransforms) aug[t.name] = transform_json(augment.*(t.member));
  aug["elastic_grid_nodes"] = augment.elastic_grid_nodes;
  aug["grid_cells"] = augment.grid_cells;
  aug["histogram_points"] = augment.histogram_points;
  aug["master_seed"] = augment.master_seed;
  j["augment"] = aug;

  j["train"] = {{"learning_rate", train.learning_rate},
                {"batch_size", train.batch_size},
                {"max_epochs", train.max_epochs},
                {"early_stop_patience", train.early_stop_patience},
                {"plateau_factor", train.plateau_factor},
                {"plateau_patience", train.plateau_patience},
                {"min_lr", train.min_lr},
                {"weight_decay", train.weight_decay},
                {"seed", train.seed}};
  j["split"] = {{"seed", split_seed}, {"fractions", {fractions.train, fractions.tune, fractions.test}}};
  j["ensemble"] = {{"lambda", ensemble_lambda}};
  j["paths"] = {{"manifest", manifest.generic_string()}};
  return j;
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a64(semantic_json().dump())); }

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  check_keys(j, {"schema_version", "task", "sequences", "dims", "depths_2d", "depths_3d", "model", "preprocess",
                 "augment", "train", "split", "ensemble", "paths", "jobs"},
             "");
  ExperimentConfig c;
  int version = kConfigSchemaVersion;
  read_opt(j, "schema_version", version, "");
  if (version != kConfigSchemaVersion)
    throw ConfigError("config schema_version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kConfigSchemaVersion) + ")");
  if (j.contains("task")) c.task = parse_task(j.at("task").get<std::string>());
  if (j.contains("sequences")) {
    c.sequences.clear();
    for (const auto& s : j.at("sequences")) c.sequences.push_back(parse_sequence(s.get<std::string>()));
  }
  if (j.contains("dims")) {
    c.dims.clear();
    for (const auto& d : j.at("dims")) c.dims.push_back(parse_dim(d));
  }
  read_opt(j, "depths_2d", c.depths_2d, "");
  read_opt(j, "depths_3d", c.depths_3d, "");
  if (j.contains("model")) {
    const auto& m = j.at("model");
    check_keys(m, {"base_width", "dropout_p"}, "model");
    read_opt(m, "base_width", c.base_width, "model");
    read_opt(m, "dropout_p", c.dropout_p, "model");
  }
  if (j.contains("preprocess")) {
    const auto& p = j.at("preprocess");
    check_keys(p, {"size_2d", "size_3d", "margin", "ranges", "label_map", "nan_policy"}, "preprocess");
    read_opt(p, "size_2d", c.preprocess.size_2d, "preprocess");
    read_opt(p, "size_3d", c.preprocess.size_3d, "preprocess");
    read_opt(p, "margin", c.preprocess.margin, "preprocess");
    if (p.contains("ranges")) {
      const auto& r = p.at("ranges");
      if (!r.is_array() || r.size() != 3) throw ConfigError("preprocess.ranges must list three [lo, hi] pairs");
      for (std::size_t i = 0; i < 3; ++i)
        c.preprocess.ranges.ranges[i] = {r[i].at(0).get<float>(), r[i].at(1).get<float>()};
    }
    if (p.contains("label_map")) {
      c.preprocess.label_map.clear();
      for (const auto& [k, v] : p.at("label_map").items()) c.preprocess.label_map[std::stoi(k)] = v.get<int>();
    }
    if (p.contains("nan_policy")) {
      const auto s = to_lower(p.at("nan_policy").get<std::string>());
      if (s == "zero")
        c.preprocess.nan_policy = NanPolicy::zero;
      else if (s == "reject")
        c.preprocess.nan_policy = NanPolicy::reject;
      else
        throw ConfigError("preprocess.nan_policy must be 'reject' or 'zero'");
    }
  }
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    check_keys(a, {"flip", "rotation", "rotation_3d", "zoom", "intensity_shift", "intensity_scale", "gaussian_noise",
                   "contrast", "gaussian_smooth", "elastic", "grid_distortion", "histogram_shift",
                   "elastic_grid_nodes", "grid_cells", "histogram_points", "master_seed"},
               "augment");
    for (const auto& t : kTransforms) read_transform(a, t.name, c.augment.*(t.member));
    read_opt(a, "elastic_grid_nodes", c.augment.elastic_grid_nodes, "augment");
    read_opt(a, "grid_cells", c.augment.grid_cells, "augment");
    read_opt(a, "histogram_points", c.augment.histogram_points, "augment");
    read_opt(a, "master_seed", c.augment.master_seed, "augment");
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, {"learning_rate", "batch_size", "max_epochs", "early_stop_patience", "plateau_factor",
                   "plateau_patience", "min_lr", "weight_decay", "seed"},
               "train");
    read_opt(t, "learning_rate", c.train.learning_rate, "train");
    read_opt(t, "batch_size", c.train.batch_size, "train");
    read_opt(t, "max_epochs", c.train.max_epochs, "train");
    read_opt(t, "early_stop_patience", c.train.early_stop_patience, "train");
    read_opt(t, "plateau_factor", c.train.plateau_factor, "train");
    read_opt(t, "plateau_patience", c.train.plateau_patience, "train");
    read_opt(t, "min_lr", c.train.min_lr, "train");
    read_opt(t, "weight_decay", c.train.weight_decay, "train");
    read_opt(t, "seed", c.train.seed, "train");
  }
  if (j.contains("split")) {
    const auto& s = j.at("split");
    check_keys(s, {"seed", "fractions"}, "split");
    read_opt(s, "seed", c.split_seed, "split");
    if (s.contains("fractions")) {
      const auto f = s.at("fractions").get<std::vector<double>>();
      if (f.size() != 3) throw ConfigError("split.fractions must have three entries");
      c.fractions = {f[0], f[1], f[2]};
    }
  }
  if (j.contains("ensemble")) {
    check_keys(j.at("ensemble"), {"lambda"}, "ensemble");
    read_opt(j.at("ensemble"), "lambda", c.ensemble_lambda, "ensemble");
  }
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    check_keys(p, {"manifest", "cache", "output"}, "paths");
    std::string s;
    if (p.contains("manifest")) c.manifest = p.at("manifest").get<std::string>();
    if (p.contains("cache")) c.cache = p.at("cache").get<std::string>();
    if (p.contains("output")) c.output = p.at("output").get<std::string>();
  }
  read_opt(j, "jobs", c.jobs, "");
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  }
  ExperimentConfig c = ExperimentConfig::from_json(j);
  // Relative paths in a config file are relative to the file.
  const auto base = path.parent_path();
  auto rebase = [&](std::filesystem::path& p) {
    if (!p.empty() && p.is_relative()) p = base / p;
  };
  rebase(c.manifest);
  return c;
}

// ---------------------------------------------------------------- cells and inputs

std::string Cell::name() const {
  std::string s = std::to_string(dim) + "d_r" + std::to_string(depth) + "_" + std::string(to_string(sequence));
  if (view) s += "_" + std::string(to_string(*view));
  return s;
}

std::uint64_t Cell::seed(std::uint64_t base) const { return mix_key(base, fnv1a64(name())); }

SequenceInputs load_sequence_inputs(const Manifest& manifest, const TaskLabeling& labeling, Sequence seq,
                                    const PreprocessConfig& config, bool want_views, bool want_volume,
                                    PreprocessCache& cache) {
  SequenceInputs in;
  for (const auto& lp : labeling.labels) {
    const PatientRecord& rec = manifest.at(lp.patient_id);
    PatientInputs p;
    try {
      p = prepare_patient_inputs(rec, seq, config, want_views, want_volume, cache);
    } catch (const DataError& e) {
      throw DataError("patient " + lp.patient_id + " " + std::string(to_string(seq)) + ": " + e.what());
    }
    in.patient_ids.push_back(lp.patient_id);
    if (p.views) in.views.push_back(std::move(*p.views));
    if (p.volume) in.volumes.push_back(std::move(*p.volume));
    in.cache_hits += p.cache_hits;
    in.cache_misses += p.cache_misses;
  }
  return in;
}

SampleSet partition_samples(const SequenceInputs& inputs, const TaskLabeling& labeling, const SplitAssignment& split,
                            Partition partition, const Cell& cell) {
  std::map<std::string, int> labels;
  if (partition != Partition::test)
    for (const auto& lp : partition_labels(labeling, split, partition))
      labels[lp.patient_id] = lp.label == Label::positive ? 1 : 0;
  SampleSet out;
  for (std::size_t i = 0; i < inputs.patient_ids.size(); ++i) {
    const auto& id = inputs.patient_ids[i];
    if (split.partition_of(id) != partition) continue;
    Sample s;
    s.patient_id = id;
    if (cell.dim == 2) {
      if (inputs.views.size() != inputs.patient_ids.size()) throw Error("2D inputs were not prepared");
      s.image = inputs.views[i][static_cast<std::size_t>(*cell.view)];
    } else {
      if (inputs.volumes.size() != inputs.patient_ids.size()) throw Error("3D inputs were not prepared");
      s.image = inputs.volumes[i];
    }
    s.label = partition == Partition::test ? -1 : labels.at(id);
    out.push_back(std::move(s));
  }
  return out;
}

std::string files_digest(const std::vector<std::filesystem::path>& files) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& f : files) {
    const auto bytes = read_binary_file(f);
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), h);
  }
  return hex64(h);
}

// ---------------------------------------------------------------- run

namespace {

class StageLog {
 public:
  StageLog(std::filesystem::path path, std::string hash, std::ostream* echo)
      : path_(std::move(path)), hash_(std::move(hash)), echo_(echo) {
    if (std::filesystem::exists(path_)) {
      std::ifstream in(path_);
      std::string line;
      while (std::getline(in, line))
        if (line.find("stage=start") != std::string::npos) ++run_;
    }
    ++run_;
  }

  void write(const std::string& stage, const std::string& detail) {
    const std::string line =
        "run=" + std::to_string(run_) + " stage=" + stage + " config=" + hash_ + (detail.empty() ? "" : " " + detail);
    std::lock_guard<std::mutex> lock(mu_);
    std::ofstream out(path_, std::ios::app);
    out << line << '\n';
    if (echo_ != nullptr) *echo_ << line << std::endl;
  }

  void progress(const std::string& text) {
    std::lock_guard<std::mutex> lock(mu_);
    if (echo_ != nullptr) *echo_ << text << std::endl;
  }

 private:
  std::filesystem::path path_;
  std::string hash_;
  std::ostream* echo_;
  int run_ = 0;
  std::mutex mu_;
};

template <typename F>
auto in_stage(const std::string& stage, const std::string& hash, F&& f) -> decltype(f()) {
  const std::string prefix = "stage " + stage + " [config " + hash + "]: ";
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const DataError& e) {
    throw DataError(prefix + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(prefix + e.what());
  } catch (const Error& e) {
    throw Error(prefix + e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    throw DataError(prefix + e.what());
  }
}

struct CellOutcome {
  Cell cell;
  std::filesystem::path checkpoint;
  PredictionTable tune;
  PredictionTable test;
  bool reused = false;
};

}  // namespace

RunResult run_full(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  RunResult result;
  result.config_hash = config.hash();
  const std::string& hash = result.config_hash;
  result.run_dir = config.output / hash;
  const auto& run_dir = result.run_dir;
  std::filesystem::create_directories(run_dir);
  write_text_file(run_dir / "config.json", config.to_json().dump(2) + "\n");
  StageLog log(run_dir / "stage_log.txt", hash, options.log);
  log.write("start", "task=" + std::string(to_string(config.task)));

  // split
  Manifest manifest;
  TaskLabeling labeling;
  SplitAssignment split;
  ClassWeights weights;
  in_stage("split", hash, [&] {
    if (config.manifest.empty()) throw ConfigError("paths.manifest is not set");
    manifest = load_manifest(config.manifest);
    labeling = build_task_labeling(manifest, config.task);
    split = split_patients(labeling, config.fractions, config.split_seed);
    write_split(split, run_dir / "data" / "split.csv");
    weights = class_weights(labeling, split, Partition::train);
    const auto sz = split.sizes();
    log.write("split", "train=" + std::to_string(sz[0]) + " tune=" + std::to_string(sz[1]) +
                           " test=" + std::to_string(sz[2]) + " excluded=" + std::to_string(manifest.excluded.size()));
  });

  PreprocessCache cache(config.cache.empty() ? PreprocessCache::root_from_env(run_dir / "cache") : config.cache);
  const EvaluationStage evaluation(labeling, split);

  for (Sequence seq : config.sequences) {
    const std::string seq_name(to_string(seq));
    SequenceInputs inputs = in_stage("preprocess", hash, [&] {
      auto in = load_sequence_inputs(manifest, labeling, seq, config.preprocess, config.has_dim(2), config.has_dim(3),
                                     cache);
      log.write("preprocess", "sequence=" + seq_name + " hits=" + std::to_string(in.cache_hits) +
                                  " misses=" + std::to_string(in.cache_misses));
      return in;
    });
    result.cache_hits += inputs.cache_hits;
    result.cache_misses += inputs.cache_misses;

    std::vector<Cell> cells;
    for (int dim : {2, 3}) {
      if (!config.has_dim(dim)) continue;
      for (int depth : config.depths(dim)) {
        if (dim == 2)
          for (View v : kAllViews) cells.push_back({2, depth, seq, v});
        else
          cells.push_back({3, depth, seq, std::nullopt});
      }
    }

    std::vector<CellOutcome> outcomes(cells.size());
    auto run_cell = [&](std::size_t k) {
      const Cell& cell = cells[k];
      CellOutcome& out = outcomes[k];
      out.cell = cell;
      out.checkpoint = run_dir / ("model_" + cell.name() + ".ckpt");
      const SampleSet train_set = partition_samples(inputs, labeling, split, Partition::train, cell);
      const SampleSet tune_set = partition_samples(inputs, labeling, split, Partition::tune, cell);
      const SampleSet test_set = partition_samples(inputs, labeling, split, Partition::test, cell);
      const auto spec = nn::ResNetSpec::canonical(cell.dim, cell.depth, config.base_width, config.dropout_p);
      nn::ResNet<float> model(spec, cell.seed(config.train.seed));

      in_stage("train", hash, [&] {
        if (std::filesystem::exists(out.checkpoint)) {
          const nn::Checkpoint ckpt = nn::read_checkpoint(out.checkpoint);
          if (ckpt.config_hash == hash) {
            nn::restore(ckpt, model);
            out.reused = true;
            log.write("train", "cell=" + cell.name() + " reused=1 best_epoch=" + std::to_string(ckpt.epoch));
            return;
          }
        }
        TrainConfig tc = config.train;
        tc.seed = cell.seed(config.train.seed);
        TrainOptions to;
        to.augment = config.augment;
        to.config_hash = hash;
        to.checkpoint_path = out.checkpoint;
        to.on_epoch = [&](const EpochRecord& r) {
          log.progress("  " + cell.name() + " epoch " + std::to_string(r.epoch) + " train_loss=" +
                       format_fixed(r.train_loss, 4) + " tune_loss=" + format_fixed(r.tune_loss, 4) +
                       " tune_auroc=" + format_fixed(r.tune_auroc, 4));
        };
        const TrainResult tr = train_model(model, train_set, tune_set, weights, tc, to);
        write_text_file(run_dir / "histories" / (cell.name() + ".csv"), tr.history.to_csv());
        log.write("train", "cell=" + cell.name() + " reused=0 best_epoch=" + std::to_string(tr.best.epoch) +
                               " epochs=" + std::to_string(tr.history.records.size()));
      });
      in_stage("predict", hash, [&] {
        out.tune = predict(model, tune_set);
        out.test = predict(model, test_set);
        write_predictions(out.tune, run_dir / "predictions" / (cell.name() + "_tune.csv"));
        write_predictions(out.test, run_dir / "predictions" / (cell.name() + "_test.csv"));
      });
    };

    if (config.jobs <= 1) {
      for (std::size_t k = 0; k < cells.size(); ++k) run_cell(k);
    } else {
      std::atomic<std::size_t> next{0};
      std::exception_ptr failure;
      std::mutex failure_mu;
      std::vector<std::thread> pool;
      for (int t = 0; t < config.jobs; ++t)
        pool.emplace_back([&] {
          for (std::size_t k = next++; k < cells.size(); k = next++) {
            try {
              run_cell(k);
            } catch (...) {
              std::lock_guard<std::mutex> lock(failure_mu);
              if (!failure) failure = std::current_exception();
            }
          }
        });
      for (auto& th : pool) th.join();
      if (failure) std::rethrow_exception(failure);
    }

    // combine views, then evaluate on the test partition
    in_stage("evaluate", hash, [&] {
      std::map<int, std::array<const CellOutcome*, 3>> views_by_depth;
      for (const auto& o : outcomes) {
        if (o.reused) ++result.checkpoints_reused;
        if (o.cell.dim == 2) views_by_depth[o.cell.depth][static_cast<std::size_t>(*o.cell.view)] = &o;
      }
      for (const auto& [depth, views] : views_by_depth) {
        const std::array<PredictionTable, 3> tune{views[0]->tune, views[1]->tune, views[2]->tune};
        const std::array<PredictionTable, 3> test{views[0]->test, views[1]->test, views[2]->test};
        LRCombiner combiner = fit_combiner(join_view_scores(tune), config.ensemble_lambda);
        combiner.provenance = files_digest({views[0]->checkpoint, views[1]->checkpoint, views[2]->checkpoint});
        const std::string stem = "2d_r" + std::to_string(depth) + "_" + seq_name;
        write_combiner(combiner, run_dir / ("ensemble_" + stem + ".combiner"));
        const ViewScoreMatrix test_matrix = join_view_scores(test);
        PredictionTable fused;
        const auto fused_scores = predict_combined(combiner, test_matrix);
        for (std::size_t i = 0; i < test_matrix.size(); ++i)
          fused.rows.push_back({test_matrix.patient_ids[i], fused_scores[i], -1});
        write_predictions(fused, run_dir / "predictions" / (stem + "_ensemble_test.csv"));
        const double ensemble_auc = evaluation.test_auroc(fused);
        for (const CellOutcome* o : views) {
          ResultRow row;
          row.dim = 2;
          row.depth = depth;
          row.task = config.task;
          row.sequence = seq;
          row.view = o->cell.view;
          row.tune_auroc = auroc(o->tune.scores(), o->tune.labels());
          row.test_auroc = evaluation.test_auroc(o->test);
          row.ensemble_test_auroc = ensemble_auc;
          result.rows.push_back(row);
        }
        log.write("ensemble", "model=" + stem + " w=" + format_fixed(combiner.w[0], 4) + "," +
                                  format_fixed(combiner.w[1], 4) + "," + format_fixed(combiner.w[2], 4) +
                                  " converged=" + (combiner.converged ? "1" : "0") +
                                  " test_auroc=" + format_fixed(ensemble_auc, 4));
      }
      for (const auto& o : outcomes) {
        if (o.cell.dim != 3) continue;
        ResultRow row;
        row.dim = 3;
        row.depth = o.cell.depth;
        row.task = config.task;
        row.sequence = seq;
        row.tune_auroc = auroc(o.tune.scores(), o.tune.labels());
        row.test_auroc = evaluation.test_auroc(o.test);
        result.rows.push_back(row);
        log.write("evaluate", "model=" + o.cell.name() + " test_auroc=" + format_fixed(row.test_auroc, 4));
      }
    });
  }

  in_stage("report", hash, [&] {
    ReportGrid grid;
    grid.task = config.task;
    grid.sequences = config.sequences;
    if (config.has_dim(2)) grid.depths_2d = config.depths_2d;
    if (config.has_dim(3)) grid.depths_3d = config.depths_3d;
    result.report = emit_report(result.rows, grid, run_dir);
    log.write("report", "rows=" + std::to_string(result.rows.size()));
  });
  return result;
}

}  // namespace gliopipe
