#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "memtraj/errors.h"
#include "memtraj/pipeline.h"

namespace {

int exit_code(const memtraj::Error& e) {
  const std::string kind = e.kind();
  if (kind == "config-error" || kind == "parse-error" || kind == "format-error") return 2;
  if (kind == "dependency-error") return 3;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memtraj: retrieval-based multimodal trajectory prediction"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  bool fixed_cosine = false;
  bool finetune = false;
  std::optional<std::string> decode_mode;
  app.add_option("--config", config_path, "key=value config file")->required();
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--out", out_dir, "override the output directory");
  app.add_flag("--fixed-cosine", fixed_cosine, "address memory by plain cosine similarity");
  app.add_flag("--finetune", finetune, "run a low-rate finetune pass after each training stage");
  app.add_option("--decode-mode", decode_mode, "decode anchors from the query or the stored key")
      ->check(CLI::IsMember({"query", "stored"}));

  auto* features = app.add_subcommand("train-features", "train the social/intention encoders and joint decoder");
  auto* memory = app.add_subcommand("build-memory", "build and filter the memory bank");
  auto* addresser = app.add_subcommand("train-addresser", "train the memory addresser");
  auto* fulfill = app.add_subcommand("train-fulfillment", "train the trajectory fulfillment nets");

  auto* predict = app.add_subcommand("predict", "predict K futures per scene");
  std::string input;
  bool trace = false;
  bool past_only = false;
  predict->add_option("--input", input, "track .tsv file or split manifest")->required();
  predict->add_flag("--trace", trace, "write trace.csv with the addressed memory entries");
  predict->add_flag("--past-only", past_only, "input tracks contain only the observed past");

  auto* eval = app.add_subcommand("eval", "evaluate minADE/minFDE on a split");
  std::string split = "test";
  eval->add_option("--split", split, "split name from the config (manifest_<split>)");

  auto* synth = app.add_subcommand("synth", "write synthetic multi-mode splits");

  CLI11_PARSE(app, argc, argv);

  try {
    memtraj::KeyValues overrides;
    if (seed) overrides["seed"] = std::to_string(*seed);
    if (fixed_cosine) overrides["fixed_cosine"] = "1";
    if (finetune) overrides["finetune"] = "1";
    if (decode_mode) overrides["decode_mode"] = *decode_mode;
    if (out_dir) overrides["out_dir"] = *out_dir;
    const memtraj::Config config = memtraj::load_config(config_path, overrides);

    memtraj::StageResult result;
    if (*features) result = memtraj::stage1_train_features(config);
    else if (*memory) result = memtraj::stage2_build_memory(config);
    else if (*addresser) result = memtraj::stage3_train_addresser(config);
    else if (*fulfill) result = memtraj::stage4_train_fulfillment(config);
    else if (*predict) result = memtraj::run_predict(config, {input, trace, past_only});
    else if (*eval) result = memtraj::run_eval(config, split);
    else if (*synth) result = memtraj::run_synth(config);
    std::cout << result.summary << "artifact=" << result.artifact.string() << "\n";
  } catch (const memtraj::Error& e) {
    std::cerr << e.kind() << ": " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
