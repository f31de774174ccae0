#include "memtraj/pipeline.h"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "json.hpp"

#include "memtraj/errors.h"
#include "memtraj/hashing.h"
#include "text_format.h"

namespace memtraj {
namespace fs = std::filesystem;

namespace {

constexpr const char* kManifestPrefix = "manifest_";

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError("config key '" + key + "': trailing characters in '" + v + "'");
  return static_cast<std::size_t>(x);
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a real number, got '" + v + "'");
  }
  if (pos != v.size() || !std::isfinite(x)) {
    throw ConfigError("config key '" + key + "': invalid real '" + v + "'");
  }
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError("config key '" + key + "': expected 0/1/true/false, got '" + v + "'");
}

std::string decode_mode_name(DecodeMode m) { return m == DecodeMode::Query ? "query" : "stored"; }

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot open " + path.string() + " for writing");
  out << text;
}

}  // namespace

FeatureShape Config::feature_shape() const {
  return {t_past, d_past, d_int, embed_dim, hidden, Activation::ReLU};
}

AddresserShape Config::addresser_shape() const { return {d_past, hidden, d_addr, Activation::ReLU}; }

FulfillShape Config::fulfill_shape() const {
  return {t_past, t_future, embed_dim, hidden, 128, 64, Activation::ReLU};
}

PredictOptions Config::predict_options() const {
  PredictOptions o;
  o.intention = {anchors, modes, kmeans_iters, decode_mode};
  o.snap_to_destination = snap_to_destination;
  return o;
}

Config config_from_kv(const KeyValues& kv) {
  Config c;
  auto scale_it = kv.find("scale");
  if (scale_it != kv.end()) {
    if (scale_it->second != "meter" && scale_it->second != "pixel") {
      throw ConfigError("config key 'scale': expected meter or pixel, got '" + scale_it->second + "'");
    }
    c.scale = scale_it->second;
  }
  if (c.scale == "pixel") {
    c.theta_past = c.theta_int = 1.0;
    c.anchors = 120;
  }
  bool explicit_d_threshold = false;

  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto size_field = [](std::size_t& f) -> Setter {
    return [&f](const std::string& k, const std::string& v) { f = parse_size(k, v); };
  };
  auto real_field = [](double& f) -> Setter {
    return [&f](const std::string& k, const std::string& v) { f = parse_real(k, v); };
  };
  auto bool_field = [](bool& f) -> Setter {
    return [&f](const std::string& k, const std::string& v) { f = parse_bool(k, v); };
  };
  const std::map<std::string, Setter> setters = {
      {"t_past", size_field(c.t_past)},
      {"t_future", size_field(c.t_future)},
      {"stride", size_field(c.stride)},
      {"max_neighbors", size_field(c.max_neighbors)},
      {"out_dir", [&](const std::string&, const std::string& v) { c.out_dir = v; }},
      {"scale", [](const std::string&, const std::string&) {}},
      {"d_past", size_field(c.d_past)},
      {"d_int", size_field(c.d_int)},
      {"d_addr", size_field(c.d_addr)},
      {"hidden", size_field(c.hidden)},
      {"embed_dim", size_field(c.embed_dim)},
      {"theta_past", real_field(c.theta_past)},
      {"theta_int", real_field(c.theta_int)},
      {"anchors", size_field(c.anchors)},
      {"modes", size_field(c.modes)},
      {"d_threshold",
       [&](const std::string& k, const std::string& v) {
         c.d_threshold = parse_real(k, v);
         explicit_d_threshold = true;
       }},
      {"candidate_cap", size_field(c.candidate_cap)},
      {"kmeans_iters", size_field(c.kmeans_iters)},
      {"decode_mode",
       [&](const std::string& k, const std::string& v) {
         if (v == "query") c.decode_mode = DecodeMode::Query;
         else if (v == "stored") c.decode_mode = DecodeMode::Stored;
         else throw ConfigError("config key '" + k + "': expected query or stored, got '" + v + "'");
       }},
      {"fixed_cosine", bool_field(c.fixed_cosine)},
      {"snap_to_destination", bool_field(c.snap_to_destination)},
      {"alpha", real_field(c.alpha)},
      {"beta", real_field(c.beta)},
      {"lr_features", real_field(c.lr_features)},
      {"lr_addresser", real_field(c.lr_addresser)},
      {"lr_fulfill", real_field(c.lr_fulfill)},
      {"lr_finetune", real_field(c.lr_finetune)},
      {"epochs_features", size_field(c.epochs_features)},
      {"epochs_addresser", size_field(c.epochs_addresser)},
      {"epochs_fulfill", size_field(c.epochs_fulfill)},
      {"epochs_finetune", size_field(c.epochs_finetune)},
      {"batch_size", size_field(c.batch_size)},
      {"finetune", bool_field(c.finetune)},
      {"seed", [&](const std::string& k, const std::string& v) { c.seed = parse_size(k, v); }},
      {"synth_train", size_field(c.synth_train)},
      {"synth_val", size_field(c.synth_val)},
      {"synth_test", size_field(c.synth_test)},
      {"synth_sigma", real_field(c.synth_sigma)},
      {"synth_speed", real_field(c.synth_speed)},
      {"synth_neighbors", size_field(c.synth_neighbors)},
  };
  for (const auto& [key, value] : kv) {
    if (key.rfind(kManifestPrefix, 0) == 0 && key.size() > std::string(kManifestPrefix).size()) {
      c.manifests[key.substr(std::string(kManifestPrefix).size())] = value;
      continue;
    }
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(key, value);
  }
  if (!explicit_d_threshold) c.d_threshold = 5.0 * c.theta_int;

  auto positive = [](std::size_t v, const char* key) {
    if (v == 0) throw ConfigError(std::string("config key '") + key + "' must be positive");
  };
  positive(c.t_past, "t_past");
  positive(c.t_future, "t_future");
  positive(c.stride, "stride");
  positive(c.d_past, "d_past");
  positive(c.d_int, "d_int");
  positive(c.d_addr, "d_addr");
  positive(c.hidden, "hidden");
  positive(c.embed_dim, "embed_dim");
  positive(c.anchors, "anchors");
  positive(c.modes, "modes");
  positive(c.batch_size, "batch_size");
  positive(c.kmeans_iters, "kmeans_iters");
  positive(c.candidate_cap, "candidate_cap");
  if (c.modes > c.anchors) throw ConfigError("config key 'modes' (K) must not exceed 'anchors' (L)");
  if (c.theta_past < 0.0 || c.theta_int < 0.0) throw ConfigError("config keys 'theta_*' must be >= 0");
  if (!(c.d_threshold > 0.0)) throw ConfigError("config key 'd_threshold' must be positive");
  if (c.alpha < 0.0 || c.beta < 0.0) throw ConfigError("config keys 'alpha'/'beta' must be >= 0");
  for (const char* k : {"lr_features", "lr_addresser", "lr_fulfill", "lr_finetune"}) {
    const double v = k == std::string("lr_features")    ? c.lr_features
                     : k == std::string("lr_addresser") ? c.lr_addresser
                     : k == std::string("lr_fulfill")   ? c.lr_fulfill
                                                        : c.lr_finetune;
    if (!(v > 0.0)) throw ConfigError(std::string("config key '") + k + "' must be positive");
  }
  return c;
}

Config load_config(const fs::path& path, const KeyValues& overrides) {
  if (!fs::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
  KeyValues kv = read_kv(path);
  // Paths written in the file are relative to the file; overrides are taken as given.
  const fs::path base = path.parent_path();
  for (auto& [key, value] : kv) {
    const bool is_path = key == "out_dir" || key.rfind(kManifestPrefix, 0) == 0;
    if (is_path && !overrides.count(key) && fs::path(value).is_relative()) {
      value = (base / value).lexically_normal().string();
    }
  }
  for (const auto& [key, value] : overrides) kv[key] = value;
  return config_from_kv(kv);
}

KeyValues canonical_kv(const Config& c) {
  KeyValues kv{
      {"t_past", std::to_string(c.t_past)},
      {"t_future", std::to_string(c.t_future)},
      {"stride", std::to_string(c.stride)},
      {"max_neighbors", std::to_string(c.max_neighbors)},
      {"scale", c.scale},
      {"d_past", std::to_string(c.d_past)},
      {"d_int", std::to_string(c.d_int)},
      {"d_addr", std::to_string(c.d_addr)},
      {"hidden", std::to_string(c.hidden)},
      {"embed_dim", std::to_string(c.embed_dim)},
      {"theta_past", format_real(c.theta_past)},
      {"theta_int", format_real(c.theta_int)},
      {"anchors", std::to_string(c.anchors)},
      {"modes", std::to_string(c.modes)},
      {"d_threshold", format_real(c.d_threshold)},
      {"candidate_cap", std::to_string(c.candidate_cap)},
      {"kmeans_iters", std::to_string(c.kmeans_iters)},
      {"decode_mode", decode_mode_name(c.decode_mode)},
      {"fixed_cosine", c.fixed_cosine ? "1" : "0"},
      {"snap_to_destination", c.snap_to_destination ? "1" : "0"},
      {"alpha", format_real(c.alpha)},
      {"beta", format_real(c.beta)},
      {"lr_features", format_real(c.lr_features)},
      {"lr_addresser", format_real(c.lr_addresser)},
      {"lr_fulfill", format_real(c.lr_fulfill)},
      {"lr_finetune", format_real(c.lr_finetune)},
      {"epochs_features", std::to_string(c.epochs_features)},
      {"epochs_addresser", std::to_string(c.epochs_addresser)},
      {"epochs_fulfill", std::to_string(c.epochs_fulfill)},
      {"epochs_finetune", std::to_string(c.epochs_finetune)},
      {"batch_size", std::to_string(c.batch_size)},
      {"finetune", c.finetune ? "1" : "0"},
      {"seed", std::to_string(c.seed)},
      {"synth_train", std::to_string(c.synth_train)},
      {"synth_val", std::to_string(c.synth_val)},
      {"synth_test", std::to_string(c.synth_test)},
      {"synth_sigma", format_real(c.synth_sigma)},
      {"synth_speed", format_real(c.synth_speed)},
      {"synth_neighbors", std::to_string(c.synth_neighbors)},
  };
  for (const auto& [split, p] : c.manifests) kv[kManifestPrefix + split] = p;
  return kv;
}

// ---------------------------------------------------------------------------
// In-memory stages

std::vector<Scene> normalize_all(const std::vector<Scene>& scenes) {
  std::vector<Scene> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(normalize_scene(s).first);
  return out;
}

namespace {

SgdConfig sgd_for(double lr, std::size_t epochs, std::size_t batch, std::uint64_t seed) {
  return {lr, batch, epochs, seed};
}

std::uint64_t features_seed(const Config& c) { return c.seed; }
std::uint64_t addresser_seed(const Config& c) { return c.seed + 1000; }
std::uint64_t fulfill_seed(const Config& c) { return c.seed + 2000; }

void append_log(TrainLog* dst, const TrainLog& more) {
  if (dst == nullptr) return;
  dst->epoch_losses.insert(dst->epoch_losses.end(), more.epoch_losses.begin(), more.epoch_losses.end());
}

}  // namespace

FeatureNets run_feature_stage(const Config& c, const std::vector<Scene>& normalized, TrainLog* log) {
  TrainLog main_log;
  FeatureNets nets = train_features(
      normalized, c.feature_shape(),
      sgd_for(c.lr_features, c.epochs_features, c.batch_size, features_seed(c)), c.alpha, &main_log);
  if (log != nullptr) *log = main_log;
  if (c.finetune && c.epochs_finetune > 0) {
    append_log(log, fit_features(nets, normalized,
                                 sgd_for(c.lr_finetune, c.epochs_finetune, c.batch_size, features_seed(c) + 1),
                                 c.alpha));
  }
  return nets;
}

MemoryBankPair run_memory_stage(const Config& c, const FeatureNets& nets, const std::vector<Scene>& normalized,
                                std::uint64_t source_hash, FilterStats* stats) {
  const auto initial = bank_init(nets, normalized, c.t_future, source_hash);
  auto filtered = bank_filter(initial, c.theta_past, c.theta_int, c.seed);
  if (stats != nullptr) *stats = {initial.size(), filtered.size()};
  return filtered;
}

AddresserNets run_addresser_stage(const Config& c, const FeatureNets& nets, const MemoryBankPair& bank,
                                  const std::vector<Scene>& normalized, AddresserTrainLog* log) {
  if (c.fixed_cosine) return fixed_cosine_addresser();
  AddresserTrainConfig tc;
  tc.sgd = sgd_for(c.lr_addresser, c.epochs_addresser, c.batch_size, addresser_seed(c));
  tc.d_threshold = c.d_threshold;
  tc.candidate_cap = c.candidate_cap;
  auto addr = train_addresser(make_addresser(addresser_seed(c), c.addresser_shape()), bank, nets, normalized, tc,
                              log);
  if (c.finetune && c.epochs_finetune > 0) {
    tc.sgd = sgd_for(c.lr_finetune, c.epochs_finetune, c.batch_size, addresser_seed(c) + 1);
    AddresserTrainLog more;
    addr = train_addresser(std::move(addr), bank, nets, normalized, tc, &more);
    if (log != nullptr) {
      append_log(&log->loss, more.loss);
      log->degenerate_scores += more.degenerate_scores;
    }
  }
  return addr;
}

FulfillNets run_fulfill_stage(const Config& c, const std::vector<Scene>& normalized, TrainLog* log) {
  TrainLog main_log;
  FulfillNets nets = train_fulfillment(
      normalized, c.fulfill_shape(), sgd_for(c.lr_fulfill, c.epochs_fulfill, c.batch_size, fulfill_seed(c)), c.beta,
      &main_log);
  if (log != nullptr) *log = main_log;
  if (c.finetune && c.epochs_finetune > 0) {
    append_log(log, fit_fulfillment(nets, normalized,
                                    sgd_for(c.lr_finetune, c.epochs_finetune, c.batch_size, fulfill_seed(c) + 1),
                                    c.beta));
  }
  return nets;
}

ModelBundle train_pipeline(const Config& c, const std::vector<Scene>& train_scenes) {
  const auto normalized = normalize_all(train_scenes);
  ModelBundle m;
  m.features = run_feature_stage(c, normalized);
  m.bank = run_memory_stage(c, m.features, normalized);
  m.addresser = run_addresser_stage(c, m.features, m.bank, normalized);
  m.fulfill = run_fulfill_stage(c, normalized);
  m.reindex();
  return m;
}

// ---------------------------------------------------------------------------
// Run manifest and file-backed stages

namespace {

const fs::path kRunManifestName = "run_manifest.json";
const fs::path kFeaturesDir = "features";
const fs::path kBankFile = "memory.mtbk";
const fs::path kAddresserDir = "addresser";
const fs::path kFulfillDir = "fulfill";

const std::vector<std::string>& stage_keys(const std::string& stage) {
  static const std::map<std::string, std::vector<std::string>> keys = {
      {kStageFeatures,
       {"t_past", "t_future", "stride", "max_neighbors", "d_past", "d_int", "hidden", "embed_dim", "alpha",
        "lr_features", "epochs_features", "batch_size", "finetune", "lr_finetune", "epochs_finetune", "seed"}},
      {kStageMemory, {"theta_past", "theta_int", "seed"}},
      {kStageAddresser,
       {"d_addr", "hidden", "d_threshold", "lr_addresser", "epochs_addresser", "batch_size", "candidate_cap",
        "finetune", "lr_finetune", "epochs_finetune", "seed"}},
      {kStageFulfill,
       {"t_past", "t_future", "stride", "max_neighbors", "hidden", "embed_dim", "beta", "lr_fulfill",
        "epochs_fulfill", "batch_size", "finetune", "lr_finetune", "epochs_finetune", "seed"}},
  };
  auto it = keys.find(stage);
  if (it == keys.end()) throw InvalidArgument("unknown stage " + stage);
  return it->second;
}

const char* upstream_of(const std::string& stage) {
  if (stage == kStageMemory) return kStageFeatures;
  if (stage == kStageAddresser) return kStageMemory;
  if (stage == kStageFulfill) return kStageAddresser;
  return nullptr;
}

fs::path manifest_path_for(const Config& c, const std::string& split) {
  auto it = c.manifests.find(split);
  if (it == c.manifests.end()) throw ConfigError("config key 'manifest_" + split + "' is not set");
  if (!fs::exists(it->second)) {
    throw ConfigError("config key 'manifest_" + split + "' points to missing file " + it->second);
  }
  return it->second;
}

// Hash of the split manifest and every data file it lists.
std::string data_hash(const Config& c, const std::string& split) {
  const auto manifest = manifest_path_for(c, split);
  std::string acc = sha256_file(manifest);
  for (const auto& f : load_manifest(manifest)) {
    if (!fs::exists(f)) throw ConfigError("manifest " + manifest.string() + " lists missing file " + f.string());
    acc += sha256_file(f);
  }
  return sha256_hex(acc);
}

std::map<std::string, std::string> hash_artifacts(const fs::path& out_dir, const std::vector<fs::path>& rel) {
  std::map<std::string, std::string> out;
  for (const auto& r : rel) {
    const fs::path full = out_dir / r;
    if (fs::is_directory(full)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(full)) {
        if (e.is_regular_file()) files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& f : files) out[(r / f.filename()).generic_string()] = sha256_file(f);
    } else {
      out[r.generic_string()] = sha256_file(full);
    }
  }
  return out;
}

void record_stage(const Config& c, const std::string& stage, const std::vector<fs::path>& artifacts) {
  const fs::path out_dir = c.out_dir;
  RunManifest manifest = load_run_manifest(out_dir);
  manifest.config_hash = sha256_hex(format_kv(canonical_kv(c)));
  StageRecord rec;
  rec.config_hash = stage_config_hash(c, stage);
  rec.artifacts = hash_artifacts(out_dir, artifacts);
  rec.timestamp = now_utc();
  manifest.stages[stage] = std::move(rec);
  // Downstream records no longer describe the new artifacts.
  for (const char* later : {kStageMemory, kStageAddresser, kStageFulfill}) {
    for (const char* up = upstream_of(later); up != nullptr; up = upstream_of(up)) {
      if (stage == up) manifest.stages.erase(later);
    }
  }
  save_run_manifest(manifest, out_dir);
}

std::vector<Scene> load_train_scenes(const Config& c) {
  auto scenes = load_split(manifest_path_for(c, "train"), c.window());
  if (scenes.empty()) throw ConfigError("training split produced no scenes");
  return scenes;
}

}  // namespace

RunManifest load_run_manifest(const fs::path& out_dir) {
  RunManifest m;
  const fs::path p = out_dir / kRunManifestName;
  if (!fs::exists(p)) return m;
  std::ifstream in(p);
  nlohmann::json j;
  try {
    in >> j;
    m.config_hash = j.value("config_hash", "");
    for (const auto& [name, rec] : j.at("stages").items()) {
      StageRecord r;
      r.config_hash = rec.at("config_hash").get<std::string>();
      r.timestamp = rec.value("timestamp", "");
      for (const auto& [path, hash] : rec.at("artifacts").items()) r.artifacts[path] = hash.get<std::string>();
      m.stages[name] = std::move(r);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("corrupt run manifest " + p.string() + ": " + e.what());
  }
  return m;
}

void save_run_manifest(const RunManifest& m, const fs::path& out_dir) {
  nlohmann::json j;
  j["config_hash"] = m.config_hash;
  j["stages"] = nlohmann::json::object();
  for (const auto& [name, rec] : m.stages) {
    j["stages"][name] = {{"config_hash", rec.config_hash}, {"timestamp", rec.timestamp}, {"artifacts", rec.artifacts}};
  }
  write_text(out_dir / kRunManifestName, j.dump(2) + "\n");
}

std::string stage_config_hash(const Config& c, const std::string& stage) {
  const auto kv = canonical_kv(c);
  std::string material = "stage=" + stage + "\n";
  for (const auto& key : stage_keys(stage)) material += key + "=" + kv.at(key) + "\n";
  if (stage == kStageFeatures || stage == kStageAddresser || stage == kStageFulfill) {
    material += "data=" + data_hash(c, "train") + "\n";
  }
  if (const char* up = upstream_of(stage)) material += "upstream=" + stage_config_hash(c, up) + "\n";
  return sha256_hex(material);
}

void require_stage(const Config& c, const RunManifest& manifest, const std::string& stage) {
  auto it = manifest.stages.find(stage);
  if (it == manifest.stages.end()) {
    throw DependencyError("stage '" + stage + "' has not been run in " + c.out_dir);
  }
  if (it->second.config_hash != stage_config_hash(c, stage)) {
    throw DependencyError("stage '" + stage + "' is stale: config or data changed since it ran; rerun it");
  }
  for (const auto& [rel, hash] : it->second.artifacts) {
    const fs::path p = fs::path(c.out_dir) / rel;
    if (!fs::exists(p)) throw DependencyError("artifact " + p.string() + " of stage '" + stage + "' is missing");
    if (sha256_file(p) != hash) {
      throw DependencyError("artifact " + p.string() + " of stage '" + stage + "' changed since it was recorded");
    }
  }
}

StageResult stage1_train_features(const Config& c) {
  const auto normalized = normalize_all(load_train_scenes(c));
  TrainLog log;
  const auto nets = run_feature_stage(c, normalized, &log);
  const fs::path dir = fs::path(c.out_dir) / kFeaturesDir;
  save_feature_nets(nets, dir);
  record_stage(c, kStageFeatures, {kFeaturesDir});
  std::string summary = "stage=" + std::string(kStageFeatures) + "\nscenes=" + std::to_string(normalized.size()) + "\n";
  if (!log.epoch_losses.empty()) {
    summary += "first_epoch_loss=" + format_real(log.epoch_losses.front()) + "\n";
    summary += "final_epoch_loss=" + format_real(log.epoch_losses.back()) + "\n";
  }
  return {dir, summary};
}

StageResult stage2_build_memory(const Config& c) {
  require_stage(c, load_run_manifest(c.out_dir), kStageFeatures);
  const auto nets = load_feature_nets(fs::path(c.out_dir) / kFeaturesDir);
  const auto normalized = normalize_all(load_train_scenes(c));
  FilterStats stats;
  const auto bank = run_memory_stage(c, nets, normalized, sha256_u64(data_hash(c, "train")), &stats);
  const fs::path path = fs::path(c.out_dir) / kBankFile;
  bank_save(bank, path);
  record_stage(c, kStageMemory, {kBankFile});
  std::string summary = "stage=" + std::string(kStageMemory) + "\n";
  summary += "memory_initial=" + std::to_string(stats.initial) + "\n";
  summary += "memory_kept=" + std::to_string(stats.kept) + "\n";
  summary += "kept_percent=" + format_real(100.0 * stats.kept_fraction()) + "\n";
  return {path, summary};
}

StageResult stage3_train_addresser(const Config& c) {
  const auto manifest = load_run_manifest(c.out_dir);
  require_stage(c, manifest, kStageFeatures);
  require_stage(c, manifest, kStageMemory);
  const auto nets = load_feature_nets(fs::path(c.out_dir) / kFeaturesDir);
  const auto bank = bank_load(fs::path(c.out_dir) / kBankFile);
  const auto normalized = normalize_all(load_train_scenes(c));
  AddresserTrainLog log;
  const auto addr = run_addresser_stage(c, nets, bank, normalized, &log);
  const fs::path dir = fs::path(c.out_dir) / kAddresserDir;
  fs::remove_all(dir);
  save_addresser(addr, dir, sha256_file(fs::path(c.out_dir) / kBankFile));
  record_stage(c, kStageAddresser, {kAddresserDir});
  std::string summary = "stage=" + std::string(kStageAddresser) + "\nbank_size=" + std::to_string(bank.size()) + "\n";
  if (!log.loss.epoch_losses.empty()) {
    summary += "first_epoch_loss=" + format_real(log.loss.epoch_losses.front()) + "\n";
    summary += "final_epoch_loss=" + format_real(log.loss.epoch_losses.back()) + "\n";
  }
  summary += "degenerate_scores=" + std::to_string(log.degenerate_scores) + "\n";
  return {dir, summary};
}

StageResult stage4_train_fulfillment(const Config& c) {
  const auto manifest = load_run_manifest(c.out_dir);
  for (const char* s : {kStageFeatures, kStageMemory, kStageAddresser}) require_stage(c, manifest, s);
  const auto normalized = normalize_all(load_train_scenes(c));
  TrainLog log;
  const auto nets = run_fulfill_stage(c, normalized, &log);
  const fs::path dir = fs::path(c.out_dir) / kFulfillDir;
  save_fulfill_nets(nets, dir);
  record_stage(c, kStageFulfill, {kFulfillDir});
  std::string summary = "stage=" + std::string(kStageFulfill) + "\nscenes=" + std::to_string(normalized.size()) + "\n";
  if (!log.epoch_losses.empty()) {
    summary += "first_epoch_loss=" + format_real(log.epoch_losses.front()) + "\n";
    summary += "final_epoch_loss=" + format_real(log.epoch_losses.back()) + "\n";
  }
  return {dir, summary};
}

ModelBundle load_model(const Config& c) {
  const auto manifest = load_run_manifest(c.out_dir);
  for (const char* s : {kStageFeatures, kStageMemory, kStageAddresser, kStageFulfill}) require_stage(c, manifest, s);
  const fs::path out = c.out_dir;
  ModelBundle m;
  m.features = load_feature_nets(out / kFeaturesDir);
  m.bank = bank_load(out / kBankFile);
  if (m.bank.meta.d_past != m.features.d_past() || m.bank.meta.d_int != m.features.d_int()) {
    throw FormatError("memory bank feature dims do not match the feature nets", 0);
  }
  std::string trained_against;
  // --fixed-cosine at inference swaps in plain cosine over the same bank.
  m.addresser = load_addresser(out / kAddresserDir, &trained_against);
  if (c.fixed_cosine) m.addresser = fixed_cosine_addresser();
  if (!m.addresser.fixed_cosine && m.addresser.f_q.input_dim() != m.features.d_past()) {
    throw FormatError("addresser input dim does not match the past feature dim", 0);
  }
  if (!trained_against.empty() && trained_against != sha256_file(out / kBankFile)) {
    std::cerr << "warning: addresser was trained against a different memory bank\n";
  }
  m.fulfill = load_fulfill_nets(out / kFulfillDir);
  m.reindex();
  return m;
}

namespace {

std::vector<Scene> load_input_scenes(const Config& c, const fs::path& input, bool past_only) {
  auto window = c.window();
  window.past_only = past_only;
  if (!fs::exists(input)) throw ConfigError("input " + input.string() + " does not exist");
  if (input.extension() == ".tsv") {
    auto scenes = build_scenes(load_tsv(input), window);
    for (auto& s : scenes) s.scene_id = input.stem().string() + "/" + s.scene_id;
    return scenes;
  }
  return load_split(input, window);
}

std::size_t effective_anchors(const Config& c, const ModelBundle& m) {
  if (c.anchors > m.bank.size()) {
    throw InvalidArgument("anchors L = " + std::to_string(c.anchors) + " exceeds memory size M = " +
                          std::to_string(m.bank.size()));
  }
  return c.anchors;
}

}  // namespace

StageResult run_predict(const Config& c, const PredictRequest& request) {
  const ModelBundle model = load_model(c);
  effective_anchors(c, model);
  const auto scenes = load_input_scenes(c, request.input, request.past_only);
  const auto options = c.predict_options();
  std::vector<ScenePrediction> preds(scenes.size());
  parallel_for(scenes.size(), 0, [&](std::size_t i) {
    preds[i] = predict_scene(model, scenes[i], options, scene_seed(c.seed, i));
  });

  std::vector<std::string> train_ids;
  if (request.trace) {
    for (const auto& s : load_train_scenes(c)) train_ids.push_back(s.scene_id);
  }
  std::string pred_csv = "scene_id,k,t,x,y\n";
  std::string int_csv = kIntentionsCsvHeader;
  std::string trace_csv = "scene_id,rank,address,sample_id,train_scene_id,score\n";
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& p = preds[i];
    for (std::size_t k = 0; k < p.futures.size(); ++k) {
      for (std::size_t t = 0; t < p.futures[k].size(); ++t) {
        pred_csv += scenes[i].scene_id + "," + std::to_string(k) + "," + std::to_string(t + 1) + "," +
                    format_real(p.futures[k][t].x) + "," + format_real(p.futures[k][t].y) + "\n";
      }
    }
    IntentionSet world = p.intention.intentions;
    world.destinations = p.destinations;
    append_intentions_csv(int_csv, scenes[i].scene_id, world);
    if (request.trace) {
      for (std::size_t r = 0; r < p.intention.anchors.size(); ++r) {
        const auto& a = p.intention.anchors[r];
        const auto sid = model.bank.entries[a.source_address].sample_id;
        trace_csv += scenes[i].scene_id + "," + std::to_string(r) + "," + std::to_string(a.source_address) + "," +
                     std::to_string(sid) + "," + (sid < train_ids.size() ? train_ids[sid] : std::string()) + "," +
                     format_real(a.score) + "\n";
      }
    }
  }
  const fs::path out = c.out_dir;
  write_text(out / "predictions.csv", pred_csv);
  write_text(out / "intentions.csv", int_csv);
  if (request.trace) write_text(out / "trace.csv", trace_csv);
  std::string summary = "predictions=" + (out / "predictions.csv").string() + "\nscenes=" +
                        std::to_string(scenes.size()) + "\nk=" + std::to_string(c.modes) + "\n";
  return {out / "predictions.csv", summary};
}

StageResult run_eval(const Config& c, const std::string& split) {
  const ModelBundle model = load_model(c);
  effective_anchors(c, model);
  const auto scenes = load_split(manifest_path_for(c, split), c.window());
  if (scenes.empty()) throw ConfigError("split '" + split + "' produced no scenes");
  const auto report = evaluate(model, scenes, c.predict_options(), c.seed, c.units());
  const fs::path out = c.out_dir;
  write_text(out / ("eval_" + split + ".csv"), report_csv(report));
  const std::string summary = "split=" + split + "\n" + report_summary(report);
  write_text(out / ("eval_" + split + ".txt"), summary);
  return {out / ("eval_" + split + ".csv"), summary};
}

StageResult run_synth(const Config& c) {
  const fs::path dir = fs::path(c.out_dir) / "synth";
  fs::create_directories(dir);
  SynthOptions o;
  o.t_past = c.t_past;
  o.t_future = c.t_future;
  o.sigma = c.synth_sigma;
  o.speed = c.synth_speed;
  o.max_neighbors = c.synth_neighbors;
  std::string summary;
  const std::vector<std::pair<std::string, std::size_t>> splits = {
      {"train", c.synth_train}, {"val", c.synth_val}, {"test", c.synth_test}};
  for (std::size_t s = 0; s < splits.size(); ++s) {
    const auto& [name, count] = splits[s];
    if (count == 0) continue;
    const auto data = synth_generate(c.seed + s, count, o);
    save_tsv(scenes_to_tracks(data.scenes), dir / (name + ".tsv"));
    write_text(dir / ("manifest_" + name + ".txt"), name + ".tsv\n");
    std::string labels = "scene_index,source_id,mode\n";
    for (std::size_t i = 0; i < data.scenes.size(); ++i) {
      labels += std::to_string(i) + "," + data.scenes[i].scene_id + "," + o.modes[data.labels[i].mode].name + "\n";
    }
    write_text(dir / ("labels_" + name + ".csv"), labels);
    summary += "manifest_" + name + "=" + (dir / ("manifest_" + name + ".txt")).string() + "\n";
  }
  return {dir, summary};
}

}  // namespace memtraj
