#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "memtraj/evalkit.h"
#include "memtraj/kvfile.h"
#include "memtraj/model.h"

namespace memtraj {

/// Every tunable of the four-stage pipeline. Parsed from a flat key=value file;
/// see README for the key list.
struct Config {
  // data
  std::size_t t_past = 8;
  std::size_t t_future = 12;
  std::size_t stride = 1;
  std::size_t max_neighbors = 8;
  std::map<std::string, std::string> manifests;  // split name -> manifest path
  std::string out_dir = "run";
  std::string scale = "meter";  // "meter" or "pixel"; selects theta/L defaults and units

  // architecture
  std::size_t d_past = 128;
  std::size_t d_int = 64;
  std::size_t d_addr = 128;
  std::size_t hidden = 128;
  std::size_t embed_dim = 64;

  // memory
  double theta_past = 0.02;
  double theta_int = 0.02;
  std::size_t anchors = 320;  // L
  std::size_t modes = 20;     // K
  double d_threshold = 0.1;   // d_T
  std::size_t candidate_cap = 2048;
  std::size_t kmeans_iters = 100;
  DecodeMode decode_mode = DecodeMode::Query;
  bool fixed_cosine = false;
  bool snap_to_destination = false;

  // optimization
  double alpha = 1.0;
  double beta = 1.0;
  double lr_features = 1e-3;
  double lr_addresser = 1e-4;
  double lr_fulfill = 1e-3;
  double lr_finetune = 1e-6;
  std::size_t epochs_features = 100;
  std::size_t epochs_addresser = 20;
  std::size_t epochs_fulfill = 100;
  std::size_t epochs_finetune = 1;
  std::size_t batch_size = 32;
  bool finetune = false;
  std::uint64_t seed = 0;

  // synthetic data generation (`synth` subcommand)
  std::size_t synth_train = 3000;
  std::size_t synth_val = 300;
  std::size_t synth_test = 300;
  double synth_sigma = 0.02;
  double synth_speed = 0.4;
  std::size_t synth_neighbors = 2;

  std::string units() const { return scale == "pixel" ? "px" : "m"; }
  WindowOptions window() const { return {t_past, t_future, stride, max_neighbors}; }
  FeatureShape feature_shape() const;
  AddresserShape addresser_shape() const;
  FulfillShape fulfill_shape() const;
  PredictOptions predict_options() const;
};

/// Builds a Config from key=value pairs. Unknown keys and malformed values raise
/// ConfigError naming the key. theta/L default by `scale` (pixel: 1.0 and 120,
/// meter: 0.02 and 320); d_threshold defaults to 5 * theta_int.
Config config_from_kv(const KeyValues& kv);
/// Reads a config file; `overrides` (e.g. from CLI flags) replace file values.
/// Relative paths in the file resolve against the file's directory.
Config load_config(const std::filesystem::path& path, const KeyValues& overrides = {});
/// Canonical key=value form (out_dir excluded) used for hashing.
KeyValues canonical_kv(const Config& config);

// In-memory stages. Scenes are raw (world) coordinates; each stage normalizes.

std::vector<Scene> normalize_all(const std::vector<Scene>& scenes);

FeatureNets run_feature_stage(const Config& config, const std::vector<Scene>& normalized, TrainLog* log = nullptr);

struct FilterStats {
  std::size_t initial = 0;
  std::size_t kept = 0;
  double kept_fraction() const { return initial == 0 ? 0.0 : static_cast<double>(kept) / static_cast<double>(initial); }
};

MemoryBankPair run_memory_stage(const Config& config, const FeatureNets& nets, const std::vector<Scene>& normalized,
                                std::uint64_t source_hash = 0, FilterStats* stats = nullptr);
AddresserNets run_addresser_stage(const Config& config, const FeatureNets& nets, const MemoryBankPair& bank,
                                  const std::vector<Scene>& normalized, AddresserTrainLog* log = nullptr);
FulfillNets run_fulfill_stage(const Config& config, const std::vector<Scene>& normalized, TrainLog* log = nullptr);

/// All four stages back to back on raw training scenes.
ModelBundle train_pipeline(const Config& config, const std::vector<Scene>& train_scenes);

// File-backed stages driven by the CLI. Artifacts live under config.out_dir and
// are recorded in <out_dir>/run_manifest.json together with the hash of the
// config keys each stage depends on.

inline constexpr const char* kStageFeatures = "train-features";
inline constexpr const char* kStageMemory = "build-memory";
inline constexpr const char* kStageAddresser = "train-addresser";
inline constexpr const char* kStageFulfill = "train-fulfillment";

struct StageRecord {
  std::string config_hash;
  std::map<std::string, std::string> artifacts;  // path relative to out_dir -> sha256
  std::string timestamp;
};

struct RunManifest {
  std::string config_hash;
  std::map<std::string, StageRecord> stages;
};

RunManifest load_run_manifest(const std::filesystem::path& out_dir);
void save_run_manifest(const RunManifest& manifest, const std::filesystem::path& out_dir);

/// Hash of the config keys (and data files, and upstream stage hashes) a stage depends on.
std::string stage_config_hash(const Config& config, const std::string& stage);

/// Throws DependencyError unless `stage` is recorded with a matching config hash
/// and unchanged artifact files.
void require_stage(const Config& config, const RunManifest& manifest, const std::string& stage);

struct StageResult {
  std::filesystem::path artifact;
  std::string summary;  // key=value lines for the CLI
};

StageResult stage1_train_features(const Config& config);
StageResult stage2_build_memory(const Config& config);
StageResult stage3_train_addresser(const Config& config);
StageResult stage4_train_fulfillment(const Config& config);

/// Loads every stage artifact after checking the manifest.
ModelBundle load_model(const Config& config);

struct PredictRequest {
  std::filesystem::path input;  // .tsv file or split manifest
  bool trace = false;
  bool past_only = false;
};

/// Writes predictions.csv (scene_id,k,t,x,y), intentions.csv and, with
/// `trace`, trace.csv listing the addressed bank entries per scene.
StageResult run_predict(const Config& config, const PredictRequest& request);

/// Evaluates a named split; writes eval_<split>.csv and eval_<split>.txt.
StageResult run_eval(const Config& config, const std::string& split);

/// Generates train/val/test synthetic splits under <out_dir>/synth.
StageResult run_synth(const Config& config);

}  // namespace memtraj
