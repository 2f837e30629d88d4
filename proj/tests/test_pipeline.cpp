#include <doctest.h>

#include <sstream>

#include "gliopipe/error.hpp"
#include "gliopipe/phantom.hpp"
#include "gliopipe/pipeline.hpp"
#include "gliopipe/util.hpp"
#include "test_support.hpp"

using namespace gliopipe;
using nlohmann::json;

namespace {

ExperimentConfig small_config(const std::filesystem::path& manifest, const std::filesystem::path& out) {
  ExperimentConfig c;
  c.sequences = {Sequence::t1};
  c.dims = {2};
  c.depths_2d = {10};
  c.base_width = 4;
  c.preprocess.size_2d = 32;
  c.train.max_epochs = 2;
  c.train.batch_size = 4;
  c.train.learning_rate = 1e-3;
  c.split_seed = 4;
  c.manifest = manifest;
  c.output = out;
  return c;
}

std::size_t count_lines(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (line.find(needle) != std::string::npos) ++n;
  return n;
}

}  // namespace

TEST_CASE("config hash ignores key order and output paths") {
  ExperimentConfig c;
  c.manifest = "m.csv";
  const json j = c.to_json();
  const std::string text = j.dump();
  // Rebuild the object with keys inserted in reverse order.
  json reversed = json::object();
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  for (auto it = keys.rbegin(); it != keys.rend(); ++it) reversed[*it] = j.at(*it);
  CHECK(ExperimentConfig::from_json(json::parse(reversed.dump())).hash() == c.hash());
  CHECK(ExperimentConfig::from_json(json::parse(text)).hash() == c.hash());

  ExperimentConfig d = c;
  d.output = "elsewhere";
  d.jobs = 3;
  CHECK(d.hash() == c.hash());
  d.train.learning_rate = 2e-4;
  CHECK(d.hash() != c.hash());
}

TEST_CASE("config validation") {
  ExperimentConfig c;
  json j = c.to_json();
  j["depths_3d"] = {10, 50};
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(j), doctest::Contains("3D depth 50"), ConfigError);

  j = c.to_json();
  j["train"]["momentum"] = 0.9;
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(j), doctest::Contains("train.momentum"), ConfigError);

  j = c.to_json();
  j["schema_version"] = 99;
  CHECK_THROWS_WITH_AS(ExperimentConfig::from_json(j), doctest::Contains("schema_version"), ConfigError);

  j = c.to_json();
  j["split"]["fractions"] = {0.5, 0.5, 0.5};
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

  j = json::object();
  const ExperimentConfig defaults = ExperimentConfig::from_json(j);
  CHECK(defaults.depths_2d == std::vector<int>{10, 18, 34, 50, 101, 152});
  CHECK(defaults.depths_3d == std::vector<int>{10, 18, 34});
}

TEST_CASE("config files resolve the manifest relative to themselves") {
  TempDir dir("cfg");
  std::filesystem::create_directories(dir / "sub");
  write_text_file(dir / "sub" / "exp.json", R"({"paths": {"manifest": "cohort/manifest.csv"}})");
  const ExperimentConfig c = load_experiment_config(dir / "sub" / "exp.json");
  CHECK(c.manifest == dir / "sub" / "cohort" / "manifest.csv");
  write_text_file(dir / "bad.json", "{ not json");
  CHECK_THROWS_AS(load_experiment_config(dir / "bad.json"), ConfigError);
}

TEST_CASE("cell names and seeds") {
  const Cell a{2, 10, Sequence::t1, View::axial};
  const Cell b{3, 18, Sequence::flair, std::nullopt};
  CHECK(a.name() == "2d_r10_T1_axial");
  CHECK(b.name() == "3d_r18_FLAIR");
  CHECK(a.seed(1) != b.seed(1));
  CHECK(a.seed(1) == Cell{2, 10, Sequence::t1, View::axial}.seed(1));
}

TEST_CASE("small end-to-end run and rerun") {
  TempDir dir("run");
  PhantomConfig pc;
  pc.n_patients = 20;
  pc.grid = 40;
  pc.seed = 2;
  const auto cohort = generate_cohort(pc, dir / "cohort");
  ExperimentConfig c = small_config(cohort.manifest_path, dir / "out");

  const RunResult r1 = run_full(c);
  CHECK(r1.run_dir == dir / "out" / c.hash());
  for (const char* v : {"axial", "coronal", "sagittal"})
    CHECK(std::filesystem::exists(r1.run_dir / (std::string("model_2d_r10_T1_") + v + ".ckpt")));
  CHECK(std::filesystem::exists(r1.run_dir / "ensemble_2d_r10_T1.combiner"));
  CHECK(std::filesystem::exists(r1.run_dir / "data" / "split.csv"));
  REQUIRE(r1.report.csv.size() == 1);
  REQUIRE(r1.report.svg.size() == 1);
  CHECK(std::filesystem::exists(r1.report.csv[0]));
  CHECK(std::filesystem::exists(r1.report.svg[0]));
  CHECK(std::filesystem::exists(r1.report.summary));
  CHECK(r1.rows.size() == 3);
  CHECK(r1.cache_misses == 60);  // three views per patient
  CHECK(r1.checkpoints_reused == 0);
  const auto combiner = read_combiner(r1.run_dir / "ensemble_2d_r10_T1.combiner");
  CHECK(combiner.provenance ==
        files_digest({r1.run_dir / "model_2d_r10_T1_axial.ckpt", r1.run_dir / "model_2d_r10_T1_coronal.ckpt",
                      r1.run_dir / "model_2d_r10_T1_sagittal.ckpt"}));

  const RunResult r2 = run_full(c);
  CHECK(r2.cache_misses == 0);
  CHECK(r2.cache_hits == 60);
  CHECK(r2.checkpoints_reused == 3);
  for (std::size_t i = 0; i < r1.rows.size(); ++i) CHECK(r2.rows[i].test_auroc == r1.rows[i].test_auroc);

  const std::string log = read_text_file(r1.run_dir / "stage_log.txt");
  CHECK(count_lines(log, "run=2 stage=preprocess") == 1);
  CHECK(count_lines(log, "run=2 stage=preprocess config=" + c.hash() + " sequence=T1 hits=60 misses=0") == 1);
  CHECK(count_lines(log, "run=2 stage=train") == 3);
  CHECK(count_lines(log, "reused=1") == 3);
}

TEST_CASE("stage failures name the stage and config") {
  TempDir dir("fail");
  ExperimentConfig c = small_config(dir / "missing.csv", dir / "out");
  try {
    run_full(c);
    FAIL("expected a failure");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).starts_with("stage split [config " + c.hash() + "]: "));
  }
}
