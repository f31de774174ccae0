#include "memtraj/feature_learning.h"

#include <cmath>
#include <string>

#include "memtraj/errors.h"
#include "memtraj/kvfile.h"
#include "training_loop.h"

namespace memtraj {

FeatureNets make_feature_nets(std::uint64_t seed, const FeatureShape& s) {
  FeatureNets nets;
  nets.social = make_social_encoder(seed, {s.t_past, s.embed_dim, s.hidden, s.d_past, s.activation});
  nets.intention_enc = mlp_init(seed + 10, {2, s.embed_dim, s.d_int}, s.activation);
  nets.joint_dec = mlp_init(seed + 11, {s.d_past + s.d_int, s.hidden, 2 * s.t_past + 2}, s.activation);
  return nets;
}

PastFeature social_encode(const FeatureNets& nets, const Scene& scene) {
  return {social_forward(nets.social, scene)};
}

IntentionFeature intention_encode(const FeatureNets& nets, Vec2 destination) {
  const double in[2] = {destination.x, destination.y};
  return {mlp_forward(nets.intention_enc, in)};
}

namespace {

std::vector<double> concat(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

JointDecoding split_decoding(const std::vector<double>& out, std::size_t t_past) {
  JointDecoding d;
  d.past.reserve(t_past);
  for (std::size_t t = 0; t < t_past; ++t) d.past.push_back({out[2 * t], out[2 * t + 1]});
  d.destination = {out[2 * t_past], out[2 * t_past + 1]};
  return d;
}

}  // namespace

JointDecoding joint_decode(const FeatureNets& nets, const PastFeature& k, const IntentionFeature& v) {
  if (k.values.size() != nets.d_past() || v.values.size() != nets.d_int()) {
    throw InvalidArgument("joint_decode: feature dims (" + std::to_string(k.values.size()) + ", " +
                          std::to_string(v.values.size()) + ") do not match the decoder");
  }
  return split_decoding(mlp_forward(nets.joint_dec, concat(k.values, v.values)), nets.t_past());
}

double rec_loss(const Trajectory& past_hat, const Trajectory& past, Vec2 dest_hat, Vec2 dest, double alpha) {
  if (past_hat.size() != past.size()) throw InvalidArgument("rec_loss: past length mismatch");
  double loss = 0.0;
  for (std::size_t t = 0; t < past.size(); ++t) loss += squared_norm(past_hat[t] - past[t]);
  return loss + alpha * squared_norm(dest_hat - dest);
}

FeatureGrads FeatureGrads::zeros_like(const FeatureNets& nets) {
  return {SocialGrads::zeros_like(nets.social), GradBundle::zeros_like(nets.intention_enc),
          GradBundle::zeros_like(nets.joint_dec)};
}

void FeatureGrads::scale(double factor) {
  social.scale(factor);
  intention_enc.scale(factor);
  joint_dec.scale(factor);
}

void FeatureGrads::set_zero() {
  social.set_zero();
  intention_enc.set_zero();
  joint_dec.set_zero();
}

double rec_loss_backward(const FeatureNets& nets, const Scene& scene, double alpha, FeatureGrads& acc) {
  if (!scene.ego_future) throw InvalidArgument("feature training: scene " + scene.scene_id + " has no future");
  SocialTrace social;
  const auto k = social_forward(nets.social, scene, &social);
  const Vec2 dest = scene.destination();
  const double dest_in[2] = {dest.x, dest.y};
  const auto int_trace = mlp_forward_trace(nets.intention_enc, dest_in);
  const auto dec_trace = mlp_forward_trace(nets.joint_dec, concat(k, int_trace.output()));
  const auto& out = dec_trace.output();

  const std::size_t t_past = nets.t_past();
  std::vector<double> upstream(out.size());
  double loss = 0.0;
  for (std::size_t t = 0; t < t_past; ++t) {
    const double rx = out[2 * t] - scene.ego_past[t].x;
    const double ry = out[2 * t + 1] - scene.ego_past[t].y;
    loss += rx * rx + ry * ry;
    upstream[2 * t] = 2.0 * rx;
    upstream[2 * t + 1] = 2.0 * ry;
  }
  const double dx = out[2 * t_past] - dest.x;
  const double dy = out[2 * t_past + 1] - dest.y;
  loss += alpha * (dx * dx + dy * dy);
  upstream[2 * t_past] = 2.0 * alpha * dx;
  upstream[2 * t_past + 1] = 2.0 * alpha * dy;

  const auto d_in = mlp_backward_accumulate(nets.joint_dec, dec_trace, upstream, acc.joint_dec);
  const std::size_t d_past = nets.d_past();
  mlp_backward_accumulate(nets.intention_enc, int_trace,
                          std::span<const double>(d_in.data() + d_past, d_in.size() - d_past), acc.intention_enc);
  social_backward(nets.social, social, std::span<const double>(d_in.data(), d_past), acc.social);
  return loss;
}

double scene_rec_loss(const FeatureNets& nets, const Scene& scene, double alpha) {
  if (!scene.ego_future) throw InvalidArgument("rec loss: scene " + scene.scene_id + " has no future");
  const auto dec = joint_decode(nets, social_encode(nets, scene), intention_encode(nets, scene.destination()));
  return rec_loss(dec.past, scene.ego_past, dec.destination, scene.destination(), alpha);
}

double mean_rec_loss(const FeatureNets& nets, const std::vector<Scene>& scenes, double alpha) {
  if (scenes.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : scenes) total += scene_rec_loss(nets, s, alpha);
  return total / static_cast<double>(scenes.size());
}

void sgd_apply(FeatureNets& nets, const FeatureGrads& grads, double learning_rate) {
  sgd_apply(nets.social, grads.social, learning_rate);
  sgd_apply(nets.intention_enc, grads.intention_enc, learning_rate);
  sgd_apply(nets.joint_dec, grads.joint_dec, learning_rate);
}

TrainLog fit_features(FeatureNets& nets, const std::vector<Scene>& scenes, const SgdConfig& sgd, double alpha) {
  if (alpha < 0.0) throw InvalidArgument("train_features: alpha must be >= 0");
  auto grads = FeatureGrads::zeros_like(nets);
  return detail::run_minibatch_sgd(
      scenes.size(), sgd, grads, "train_features",
      [&](std::size_t i, FeatureGrads& g) { return rec_loss_backward(nets, scenes[i], alpha, g); },
      [&](const FeatureGrads& g) { sgd_apply(nets, g, sgd.learning_rate); });
}

FeatureNets train_features(const std::vector<Scene>& scenes, const FeatureShape& shape, const SgdConfig& sgd,
                           double alpha, TrainLog* log) {
  if (scenes.empty()) throw InvalidArgument("train_features: empty dataset");
  FeatureNets nets = make_feature_nets(sgd.seed, shape);
  auto result = fit_features(nets, scenes, sgd, alpha);
  if (log != nullptr) *log = std::move(result);
  return nets;
}

void save_feature_nets(const FeatureNets& nets, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_mlp(nets.social.ego_embed, dir / "ego_embed.mtnn");
  save_mlp(nets.social.neighbor_embed, dir / "neighbor_embed.mtnn");
  save_mlp(nets.social.fuse, dir / "social_fuse.mtnn");
  save_mlp(nets.intention_enc, dir / "intention_enc.mtnn");
  save_mlp(nets.joint_dec, dir / "joint_dec.mtnn");
  write_kv({{"d_past", std::to_string(nets.d_past())},
            {"d_int", std::to_string(nets.d_int())},
            {"t_past", std::to_string(nets.t_past())}},
           dir / "features.manifest");
}

FeatureNets load_feature_nets(const std::filesystem::path& dir) {
  FeatureNets nets;
  nets.social.ego_embed = load_mlp(dir / "ego_embed.mtnn");
  nets.social.neighbor_embed = load_mlp(dir / "neighbor_embed.mtnn");
  nets.social.fuse = load_mlp(dir / "social_fuse.mtnn");
  nets.intention_enc = load_mlp(dir / "intention_enc.mtnn");
  nets.joint_dec = load_mlp(dir / "joint_dec.mtnn");
  const auto kv = read_kv(dir / "features.manifest");
  auto expect = [&](const char* key, std::size_t got) {
    auto it = kv.find(key);
    if (it == kv.end() || it->second != std::to_string(got)) {
      throw FormatError(std::string("feature manifest mismatch on ") + key, 0);
    }
  };
  expect("d_past", nets.d_past());
  expect("d_int", nets.d_int());
  expect("t_past", nets.t_past());
  if (nets.joint_dec.input_dim() != nets.d_past() + nets.d_int() ||
      nets.joint_dec.output_dim() != 2 * nets.t_past() + 2 ||
      nets.social.neighbor_embed.input_dim() != 2 * nets.t_past() ||
      nets.social.fuse.input_dim() != nets.social.ego_embed.output_dim() + nets.social.neighbor_embed.output_dim() ||
      nets.intention_enc.input_dim() != 2) {
    throw FormatError("feature nets do not chain consistently", 0);
  }
  return nets;
}

}  // namespace memtraj
