// gliopipe command line: one subcommand per pipeline stage plus `run`.
#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gliopipe/error.hpp"
#include "gliopipe/phantom.hpp"
#include "gliopipe/pipeline.hpp"
#include "gliopipe/util.hpp"

using namespace gliopipe;
namespace fs = std::filesystem;

namespace {

// Flags shared by the stage subcommands; each one overrides the config file value.
struct Overrides {
  std::string config;
  std::string manifest;
  std::string task;
  std::vector<std::string> seqs;
  std::vector<std::string> dims;
  std::vector<int> depths;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string cache;
  std::optional<int> jobs;
  std::string nan;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<std::size_t> batch;
  std::optional<std::size_t> size;
  std::optional<int> width;

  void attach(CLI::App* app, bool with_out = true) {
    app->add_option("--config", config, "experiment config (JSON)");
    app->add_option("--manifest", manifest, "cohort manifest CSV");
    app->add_option("--task", task, "IDH or MGMT");
    app->add_option("--seq", seqs, "sequences (T1, T1c, FLAIR)")->delimiter(',');
    app->add_option("--dim", dims, "2D and/or 3D")->delimiter(',');
    app->add_option("--depth", depths, "ResNet depths")->delimiter(',');
    app->add_option("--seed", seed, "seed");
    if (with_out) app->add_option("--out", out, "output path");
    app->add_option("--cache", cache, "preprocess cache root");
    app->add_option("--jobs", jobs, "parallel training cells");
    app->add_option("--nan", nan, "NaN policy: reject or zero");
    app->add_option("--epochs", epochs, "maximum epochs");
    app->add_option("--lr", lr, "initial learning rate");
    app->add_option("--batch", batch, "batch size");
    app->add_option("--size", size, "input edge length (2D and 3D)");
    app->add_option("--width", width, "base channel width");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c = config.empty() ? ExperimentConfig{} : load_experiment_config(config);
    if (!manifest.empty()) c.manifest = manifest;
    if (!task.empty()) c.task = parse_task(task);
    if (!seqs.empty()) {
      c.sequences.clear();
      for (const auto& s : seqs) c.sequences.push_back(parse_sequence(s));
    }
    if (!dims.empty()) {
      c.dims.clear();
      for (const auto& d : dims) {
        const auto s = to_lower(d);
        if (s == "2d" || s == "2")
          c.dims.push_back(2);
        else if (s == "3d" || s == "3")
          c.dims.push_back(3);
        else
          throw ConfigError("--dim must be 2D or 3D, got '" + d + "'");
      }
    }
    if (!depths.empty()) {
      if (c.has_dim(2)) c.depths_2d = depths;
      if (c.has_dim(3)) c.depths_3d = depths;
    }
    if (seed) {
      c.split_seed = *seed;
      c.train.seed = *seed;
    }
    if (!cache.empty()) c.cache = cache;
    if (jobs) c.jobs = *jobs;
    if (!nan.empty()) {
      const auto s = to_lower(nan);
      if (s == "zero")
        c.preprocess.nan_policy = NanPolicy::zero;
      else if (s == "reject")
        c.preprocess.nan_policy = NanPolicy::reject;
      else
        throw ConfigError("--nan must be 'reject' or 'zero'");
    }
    if (epochs) c.train.max_epochs = *epochs;
    if (lr) c.train.learning_rate = *lr;
    if (batch) c.train.batch_size = *batch;
    if (size) c.preprocess.size_2d = c.preprocess.size_3d = *size;
    if (width) c.base_width = *width;
    c.validate();
    return c;
  }
};

Manifest require_manifest(const ExperimentConfig& c) {
  if (c.manifest.empty()) throw ConfigError("a manifest is required (--manifest or paths.manifest)");
  return load_manifest(c.manifest);
}

SplitAssignment split_for(const ExperimentConfig& c, const TaskLabeling& labeling, const std::string& split_path) {
  if (!split_path.empty()) {
    SplitAssignment s = read_split(split_path);
    if (s.task != c.task) throw ConfigError("split file was made for a different task");
    return s;
  }
  return split_patients(labeling, c.fractions, c.split_seed);
}

Cell single_cell(const ExperimentConfig& c, const std::string& view) {
  if (c.sequences.size() != 1 || c.dims.size() != 1) throw ConfigError("exactly one --seq and one --dim are required");
  Cell cell;
  cell.dim = c.dims[0];
  const auto& depths = c.depths(cell.dim);
  if (depths.size() != 1) throw ConfigError("exactly one --depth is required");
  cell.depth = depths[0];
  cell.sequence = c.sequences[0];
  if (cell.dim == 2) {
    if (view.empty()) throw ConfigError("--view is required for 2D models");
    cell.view = parse_view(view);
  }
  return cell;
}

SequenceInputs inputs_for(const ExperimentConfig& c, const Manifest& m, const TaskLabeling& labeling,
                          const Cell& cell) {
  PreprocessCache cache(c.cache.empty() ? PreprocessCache::root_from_env() : c.cache);
  return load_sequence_inputs(m, labeling, cell.sequence, c.preprocess, cell.dim == 2, cell.dim == 3, cache);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out = split_csv_line(s);
  for (auto& x : out) x = trim(x);
  return out;
}

std::array<PredictionTable, 3> read_three(const std::string& list) {
  const auto files = split_list(list);
  if (files.size() != 3) throw ConfigError("expected three comma-separated prediction files (axial,coronal,sagittal)");
  return {read_predictions(files[0]), read_predictions(files[1]), read_predictions(files[2])};
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) != nullptr) return 2;
  if (dynamic_cast<const DataError*>(&e) != nullptr) return 3;
  if (dynamic_cast<const NumericalError*>(&e) != nullptr) return 4;
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e) != nullptr) return 3;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gliopipe: MRI glioma genotype classification pipeline"};
  app.require_subcommand(1);

  // synth
  PhantomConfig phantom;
  std::string synth_out = "phantom";
  auto* synth = app.add_subcommand("synth", "generate a phantom cohort");
  synth->add_option("--n", phantom.n_patients, "patients");
  synth->add_option("--grid", phantom.grid, "volume edge length");
  synth->add_option("--balance", phantom.class_balance, "positive fraction");
  synth->add_option("--seed", phantom.seed, "seed");
  synth->add_flag("--null-task", phantom.null_task, "decouple images from recorded labels");
  synth->add_option("--out", synth_out, "output directory");

  // split
  Overrides split_o;
  auto* split = app.add_subcommand("split", "stratified patient split");
  split_o.attach(split);

  // preprocess
  Overrides pre_o;
  auto* pre = app.add_subcommand("preprocess", "fill the preprocess cache");
  pre_o.attach(pre, false);

  // train
  Overrides train_o;
  std::string train_split, train_view;
  auto* train = app.add_subcommand("train", "train one model");
  train_o.attach(train);
  train->add_option("--split", train_split, "split CSV");
  train->add_option("--view", train_view, "axial, coronal or sagittal (2D)");

  // predict
  Overrides pred_o;
  std::string pred_split, pred_view, pred_ckpt, pred_partition = "test";
  auto* predict_cmd = app.add_subcommand("predict", "score one partition with a checkpoint");
  pred_o.attach(predict_cmd);
  predict_cmd->add_option("--split", pred_split, "split CSV");
  predict_cmd->add_option("--view", pred_view, "axial, coronal or sagittal (2D)");
  predict_cmd->add_option("--ckpt", pred_ckpt, "checkpoint")->required();
  predict_cmd->add_option("--partition", pred_partition, "tune or test");

  // ensemble
  std::string ens_tune, ens_test, ens_out = "ensemble.combiner", ens_pred, ens_ckpts;
  double ens_lambda = 1e-4;
  auto* ens = app.add_subcommand("ensemble", "fit the view combiner on tuning scores");
  ens->add_option("--tune", ens_tune, "axial,coronal,sagittal tuning predictions")->required();
  ens->add_option("--test", ens_test, "axial,coronal,sagittal test predictions");
  ens->add_option("--lambda", ens_lambda, "L2 penalty");
  ens->add_option("--ckpts", ens_ckpts, "axial,coronal,sagittal checkpoints (provenance)");
  ens->add_option("--out", ens_out, "combiner file");
  ens->add_option("--pred-out", ens_pred, "fused test predictions");

  // evaluate
  std::string eval_pred, eval_manifest, eval_split, eval_task = "IDH";
  auto* eval = app.add_subcommand("evaluate", "AUROC of a prediction file");
  eval->add_option("--pred", eval_pred, "predictions CSV")->required();
  eval->add_option("--manifest", eval_manifest, "manifest (to label test predictions)");
  eval->add_option("--split", eval_split, "split CSV (to label test predictions)");
  eval->add_option("--task", eval_task, "IDH or MGMT");

  // report
  std::vector<std::string> report_in;
  std::string report_out = "report";
  auto* report = app.add_subcommand("report", "regenerate report files from result CSVs");
  report->add_option("--results", report_in, "report_2d.csv / report_3d.csv files")->required()->delimiter(',');
  report->add_option("--out", report_out, "output directory");

  // run
  Overrides run_o;
  auto* run = app.add_subcommand("run", "full grid: split, preprocess, train, ensemble, evaluate, report");
  run_o.attach(run);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) {
      const GeneratedCohort cohort = generate_cohort(phantom, synth_out);
      std::cout << cohort.manifest_path.string() << " patients=" << cohort.manifest.records.size() << '\n';
    } else if (split->parsed()) {
      const ExperimentConfig c = split_o.resolve();
      const Manifest m = require_manifest(c);
      const TaskLabeling labeling = build_task_labeling(m, c.task);
      const SplitAssignment s = split_patients(labeling, c.fractions, c.split_seed);
      if (split_o.out.empty())
        std::cout << serialize_split(s);
      else
        write_split(s, split_o.out);
      const auto sz = s.sizes();
      std::cerr << "train=" << sz[0] << " tune=" << sz[1] << " test=" << sz[2] << '\n';
    } else if (pre->parsed()) {
      const ExperimentConfig c = pre_o.resolve();
      const Manifest m = require_manifest(c);
      const TaskLabeling labeling = build_task_labeling(m, c.task);
      PreprocessCache cache(c.cache.empty() ? PreprocessCache::root_from_env() : c.cache);
      if (!cache.enabled()) throw ConfigError("preprocess needs a cache root (--cache or GLIOPIPE_CACHE)");
      for (Sequence seq : c.sequences) {
        const auto in = load_sequence_inputs(m, labeling, seq, c.preprocess, c.has_dim(2), c.has_dim(3), cache);
        std::cout << to_string(seq) << " patients=" << in.patient_ids.size() << " hits=" << in.cache_hits
                  << " misses=" << in.cache_misses << '\n';
      }
    } else if (train->parsed()) {
      const ExperimentConfig c = train_o.resolve();
      const Cell cell = single_cell(c, train_view);
      const Manifest m = require_manifest(c);
      const TaskLabeling labeling = build_task_labeling(m, c.task);
      const SplitAssignment s = split_for(c, labeling, train_split);
      const SequenceInputs in = inputs_for(c, m, labeling, cell);
      const auto spec = nn::ResNetSpec::canonical(cell.dim, cell.depth, c.base_width, c.dropout_p);
      nn::ResNet<float> model(spec, cell.seed(c.train.seed));
      TrainConfig tc = c.train;
      tc.seed = cell.seed(c.train.seed);
      TrainOptions to;
      to.augment = c.augment;
      to.config_hash = c.hash();
      to.checkpoint_path = train_o.out.empty() ? fs::path("model_" + cell.name() + ".ckpt") : fs::path(train_o.out);
      to.on_epoch = [](const EpochRecord& r) {
        std::cerr << "epoch " << r.epoch << " train_loss=" << format_fixed(r.train_loss, 4)
                  << " tune_loss=" << format_fixed(r.tune_loss, 4) << " tune_auroc=" << format_fixed(r.tune_auroc, 4)
                  << " lr=" << r.lr << '\n';
      };
      const TrainResult r =
          train_model(model, partition_samples(in, labeling, s, Partition::train, cell),
                      partition_samples(in, labeling, s, Partition::tune, cell), class_weights(labeling, s), tc, to);
      write_text_file(fs::path(to.checkpoint_path).replace_extension(".history.csv"), r.history.to_csv());
      std::cout << to.checkpoint_path.string() << " best_epoch=" << r.best.epoch
                << " tune_loss=" << format_fixed(r.best.tune_loss, 6) << '\n';
    } else if (predict_cmd->parsed()) {
      const ExperimentConfig c = pred_o.resolve();
      const Cell cell = single_cell(c, pred_view);
      const Manifest m = require_manifest(c);
      const TaskLabeling labeling = build_task_labeling(m, c.task);
      const SplitAssignment s = split_for(c, labeling, pred_split);
      const nn::Checkpoint ckpt = nn::read_checkpoint(pred_ckpt);
      nn::ResNet<float> model(ckpt.spec, 0);
      nn::restore(ckpt, model);
      const SequenceInputs in = inputs_for(c, m, labeling, cell);
      const Partition part = parse_partition(pred_partition);
      const PredictionTable t = predict(model, partition_samples(in, labeling, s, part, cell));
      if (pred_o.out.empty())
        std::cout << serialize_predictions(t);
      else
        write_predictions(t, pred_o.out);
    } else if (ens->parsed()) {
      LRCombiner comb = fit_combiner(join_view_scores(read_three(ens_tune)), ens_lambda);
      if (!ens_ckpts.empty()) {
        std::vector<fs::path> files;
        for (const auto& f : split_list(ens_ckpts)) files.emplace_back(f);
        comb.provenance = files_digest(files);
      }
      write_combiner(comb, ens_out);
      std::cout << "w=" << format_fixed(comb.w[0], 4) << "," << format_fixed(comb.w[1], 4) << ","
                << format_fixed(comb.w[2], 4) << " b=" << format_fixed(comb.b, 4)
                << " converged=" << (comb.converged ? 1 : 0) << '\n';
      if (!ens_test.empty()) {
        const ViewScoreMatrix mt = join_view_scores(read_three(ens_test));
        const auto fused = predict_combined(comb, mt);
        PredictionTable t;
        for (std::size_t i = 0; i < mt.size(); ++i)
          t.rows.push_back({mt.patient_ids[i], fused[i], mt.labels.empty() ? -1 : mt.labels[i]});
        if (ens_pred.empty())
          std::cout << serialize_predictions(t);
        else
          write_predictions(t, ens_pred);
      }
    } else if (eval->parsed()) {
      PredictionTable t = read_predictions(eval_pred);
      const bool labeled = std::all_of(t.rows.begin(), t.rows.end(), [](const Prediction& p) { return p.label >= 0; });
      double a = 0.0;
      if (labeled) {
        a = auroc(t.scores(), t.labels());
      } else {
        if (eval_manifest.empty() || eval_split.empty())
          throw ConfigError("unlabeled predictions need --manifest and --split");
        const TaskLabeling labeling = build_task_labeling(load_manifest(eval_manifest), parse_task(eval_task));
        const SplitAssignment s = read_split(eval_split);
        a = EvaluationStage(labeling, s).test_auroc(t);
      }
      std::cout << format_fixed(a, 4) << '\n';
    } else if (report->parsed()) {
      std::vector<ResultRow> rows;
      ReportGrid grid;
      std::vector<Sequence> seqs;
      for (const auto& f : report_in) {
        for (const ResultRow& r : parse_report_csv(read_text_file(f))) {
          rows.push_back(r);
          grid.task = r.task;
          auto& depths = r.dim == 2 ? grid.depths_2d : grid.depths_3d;
          if (std::find(depths.begin(), depths.end(), r.depth) == depths.end()) depths.push_back(r.depth);
          if (std::find(seqs.begin(), seqs.end(), r.sequence) == seqs.end()) seqs.push_back(r.sequence);
        }
      }
      grid.sequences = seqs;
      const ReportFiles files = emit_report(rows, grid, report_out);
      for (const auto& p : files.csv) std::cout << p.string() << '\n';
      for (const auto& p : files.svg) std::cout << p.string() << '\n';
      std::cout << files.summary.string() << '\n';
    } else if (run->parsed()) {
      ExperimentConfig c = run_o.resolve();
      if (!run_o.out.empty()) c.output = run_o.out;
      RunOptions opts;
      opts.log = &std::cerr;
      const RunResult r = run_full(c, opts);
      std::cout << r.run_dir.string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 0;
}
