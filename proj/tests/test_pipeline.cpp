#include <fstream>
#include <sstream>

#include "doctest.h"
#include "memtraj/errors.h"
#include "memtraj/hashing.h"
#include "memtraj/pipeline.h"
#include "test_util.h"

using namespace memtraj;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Tiny but complete configuration over a synthetic split in `dir`.
Config tiny_config(const fs::path& dir) {
  KeyValues kv{{"out_dir", (dir / "run").string()},
               {"synth_train", "60"},
               {"synth_val", "0"},
               {"synth_test", "10"},
               {"d_past", "16"},
               {"d_int", "8"},
               {"d_addr", "16"},
               {"hidden", "16"},
               {"embed_dim", "8"},
               {"epochs_features", "2"},
               {"epochs_addresser", "2"},
               {"epochs_fulfill", "2"},
               {"anchors", "12"},
               {"modes", "3"},
               {"d_threshold", "1.0"},
               {"seed", "5"}};
  Config c = config_from_kv(kv);
  const auto synth = run_synth(c);
  c.manifests["train"] = (synth.artifact / "manifest_train.txt").string();
  c.manifests["test"] = (synth.artifact / "manifest_test.txt").string();
  return c;
}

void run_all_stages(const Config& c) {
  stage1_train_features(c);
  stage2_build_memory(c);
  stage3_train_addresser(c);
  stage4_train_fulfillment(c);
}

}  // namespace

TEST_CASE("config parsing") {
  const Config def = config_from_kv({});
  CHECK(def.t_past == 8);
  CHECK(def.t_future == 12);
  CHECK(def.theta_past == 0.02);
  CHECK(def.anchors == 320);
  CHECK(def.modes == 20);
  CHECK(def.alpha == 1.0);
  CHECK(def.beta == 1.0);
  CHECK(def.d_threshold == doctest::Approx(0.1));
  CHECK(def.lr_features == 1e-3);
  CHECK(def.lr_addresser == 1e-4);
  CHECK(def.lr_finetune == 1e-6);

  const Config px = config_from_kv({{"scale", "pixel"}});
  CHECK(px.theta_int == 1.0);
  CHECK(px.anchors == 120);
  CHECK(px.d_threshold == 5.0);
  CHECK(px.units() == "px");

  const Config m = config_from_kv({{"manifest_train", "a.txt"}, {"decode_mode", "stored"}, {"finetune", "true"}});
  CHECK(m.manifests.at("train") == "a.txt");
  CHECK(m.decode_mode == DecodeMode::Stored);
  CHECK(m.finetune);

  CHECK_THROWS_AS(config_from_kv({{"colour", "red"}}), ConfigError);
  CHECK_THROWS_AS(config_from_kv({{"t_past", "-3"}}), ConfigError);
  CHECK_THROWS_AS(config_from_kv({{"t_past", "0"}}), ConfigError);
  CHECK_THROWS_AS(config_from_kv({{"alpha", "abc"}}), ConfigError);
  CHECK_THROWS_AS(config_from_kv({{"modes", "30"}, {"anchors", "20"}}), ConfigError);
  CHECK_THROWS_AS(config_from_kv({{"scale", "furlong"}}), ConfigError);
  try {
    config_from_kv({{"lr_features", "0"}});
    FAIL("expected config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("lr_features") != std::string::npos);
  }
}

TEST_CASE("config files") {
  testutil::TempDir dir("cfg");
  {
    std::ofstream f(dir.path() / "c.txt");
    f << "# comment\n\nseed = 9\nmanifest_train = data/train.txt\n";
  }
  const Config c = load_config(dir.path() / "c.txt");
  CHECK(c.seed == 9);
  CHECK(fs::path(c.manifests.at("train")) == (dir.path() / "data" / "train.txt").lexically_normal());
  CHECK_THROWS_AS(load_config(dir.path() / "missing.txt"), ConfigError);
  {
    std::ofstream f(dir.path() / "bad.txt");
    f << "no equals sign here\n";
  }
  CHECK_THROWS_AS(load_config(dir.path() / "bad.txt"), ParseError);
  const auto kv = canonical_kv(c);
  CHECK(kv.count("out_dir") == 0);
  CHECK(config_from_kv(kv).seed == 9);
}

TEST_CASE("stages enforce ordering and detect stale artifacts") {
  testutil::TempDir dir("stages");
  Config c = tiny_config(dir.path());

  Config missing = c;
  missing.manifests.erase("train");
  try {
    stage1_train_features(missing);
    FAIL("expected config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("manifest_train") != std::string::npos);
  }

  CHECK_THROWS_AS(stage2_build_memory(c), DependencyError);
  CHECK_THROWS_AS(stage3_train_addresser(c), DependencyError);
  CHECK_THROWS_AS(stage4_train_fulfillment(c), DependencyError);
  CHECK_THROWS_AS(run_eval(c, "test"), DependencyError);

  const auto r1 = stage1_train_features(c);
  CHECK(load_run_manifest(c.out_dir).stages.count(kStageFeatures) == 1);
  CHECK_THROWS_AS(stage3_train_addresser(c), DependencyError);
  const auto r2 = stage2_build_memory(c);
  CHECK(r2.summary.find("memory_initial=60") != std::string::npos);
  CHECK(r2.summary.find("kept_percent=") != std::string::npos);
  stage3_train_addresser(c);
  stage4_train_fulfillment(c);
  CHECK_NOTHROW(load_model(c));

  // Changing a stage-1 key invalidates everything downstream.
  Config changed = c;
  changed.epochs_features = 3;
  CHECK_THROWS_AS(stage2_build_memory(changed), DependencyError);
  CHECK_THROWS_AS(load_model(changed), DependencyError);
  // A stage-3-only key leaves stages 1-2 usable.
  Config addr_only = c;
  addr_only.epochs_addresser = 3;
  CHECK_NOTHROW(stage3_train_addresser(addr_only));
  CHECK_THROWS_AS(load_model(c), DependencyError);

  // Tampering with an artifact is detected.
  run_all_stages(c);
  {
    std::ofstream f(fs::path(c.out_dir) / "memory.mtbk", std::ios::binary | std::ios::app);
    f << "x";
  }
  CHECK_THROWS_AS(load_model(c), DependencyError);
}

TEST_CASE("reruns are byte-identical and predict writes K*T_f rows per scene") {
  testutil::TempDir dir("determinism");
  Config c = tiny_config(dir.path());
  run_all_stages(c);
  const fs::path out = c.out_dir;
  const auto features_hash = sha256_file(out / "features" / "joint_dec.mtnn");
  const auto bank_hash = sha256_file(out / "memory.mtbk");
  const auto fulfill_hash = sha256_file(out / "fulfill" / "d_full.mtnn");
  const auto pred = run_predict(c, {c.manifests.at("test"), true, false});
  const auto predictions = slurp(out / "predictions.csv");
  const auto eval = run_eval(c, "test");
  const auto report = slurp(out / "eval_test.csv");

  run_all_stages(c);
  run_predict(c, {c.manifests.at("test"), true, false});
  run_eval(c, "test");
  CHECK(sha256_file(out / "features" / "joint_dec.mtnn") == features_hash);
  CHECK(sha256_file(out / "memory.mtbk") == bank_hash);
  CHECK(sha256_file(out / "fulfill" / "d_full.mtnn") == fulfill_hash);
  CHECK(slurp(out / "predictions.csv") == predictions);
  CHECK(slurp(out / "eval_test.csv") == report);

  const auto scenes = load_split(c.manifests.at("test"), c.window());
  std::size_t rows = 0;
  std::istringstream lines(predictions);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "scene_id,k,t,x,y");
  while (std::getline(lines, line)) ++rows;
  CHECK(rows == scenes.size() * c.modes * c.t_future);

  const auto trace = slurp(out / "trace.csv");
  CHECK(static_cast<std::size_t>(std::count(trace.begin(), trace.end(), '\n')) == 1 + scenes.size() * c.anchors);
  CHECK(trace.find("train/") != std::string::npos);
  CHECK(eval.summary.find("min_fde_3=") != std::string::npos);

  // Thread count does not change the output.
  setenv("MEMTRAJ_THREADS", "3", 1);
  run_predict(c, {c.manifests.at("test"), false, false});
  unsetenv("MEMTRAJ_THREADS");
  CHECK(slurp(out / "predictions.csv") == predictions);

  Config too_many = c;
  too_many.anchors = 1000;
  too_many.modes = 3;
  CHECK_THROWS_AS(run_predict(too_many, {c.manifests.at("test"), false, false}), InvalidArgument);
}

TEST_CASE("predict on past-only input and malformed input") {
  testutil::TempDir dir("pastonly");
  Config c = tiny_config(dir.path());
  run_all_stages(c);
  {
    std::ofstream f(dir.path() / "obs.tsv");
    for (int t = 0; t < 8; ++t) f << t * 10 << " 1 " << 0.4 * t << " 0\n";
  }
  run_predict(c, {dir.path() / "obs.tsv", false, true});
  const auto pred = slurp(fs::path(c.out_dir) / "predictions.csv");
  CHECK(static_cast<std::size_t>(std::count(pred.begin(), pred.end(), '\n')) == 1 + c.modes * c.t_future);
  {
    std::ofstream f(dir.path() / "broken.tsv");
    f << "1 2 3\n";
  }
  CHECK_THROWS_AS(run_predict(c, {dir.path() / "broken.tsv", false, true}), ParseError);
}

TEST_CASE("in-memory pipeline and finetune") {
  const auto data = synth_generate(1, 40, SynthOptions{});
  Config c = config_from_kv({{"d_past", "8"},
                             {"d_int", "4"},
                             {"d_addr", "8"},
                             {"hidden", "8"},
                             {"embed_dim", "4"},
                             {"epochs_features", "1"},
                             {"epochs_addresser", "1"},
                             {"epochs_fulfill", "1"},
                             {"anchors", "10"},
                             {"modes", "2"}});
  const auto a = train_pipeline(c, data.scenes);
  CHECK(a.bank.size() <= 40);
  c.finetune = true;
  const auto b = train_pipeline(c, data.scenes);
  CHECK_FALSE(a.features == b.features);
  CHECK_FALSE(a.fulfill == b.fulfill);
  const auto report = evaluate(b, data.scenes, c.predict_options(), 0);
  CHECK(report.n_scenes == 40);
  CHECK(report.k == 2);
}
