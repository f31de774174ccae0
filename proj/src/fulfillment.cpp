#include "memtraj/fulfillment.h"

#include <string>

#include "memtraj/errors.h"
#include "memtraj/kvfile.h"
#include "training_loop.h"

namespace memtraj {

FulfillNets make_fulfill_nets(std::uint64_t seed, const FulfillShape& s) {
  FulfillNets nets;
  nets.e_full = make_social_encoder(seed, {s.t_past, s.embed_dim, s.hidden, s.past_dim, s.activation});
  nets.f_d = mlp_init(seed + 20, {2, s.embed_dim, s.dest_dim}, s.activation);
  nets.d_full = mlp_init(seed + 21, {s.past_dim + s.dest_dim, s.hidden, 2 * s.t_past + 2 * s.t_future},
                         s.activation);
  return nets;
}

namespace {

struct FulfillTrace {
  SocialTrace social;
  ForwardTrace dest;
  ForwardTrace dec;
};

const std::vector<double>& forward(const FulfillNets& nets, const Scene& scene, Vec2 destination, FulfillTrace& tr) {
  auto h = social_forward(nets.e_full, scene, &tr.social);
  const double d_in[2] = {destination.x, destination.y};
  tr.dest = mlp_forward_trace(nets.f_d, d_in);
  h.insert(h.end(), tr.dest.output().begin(), tr.dest.output().end());
  tr.dec = mlp_forward_trace(nets.d_full, h);
  return tr.dec.output();
}

}  // namespace

FullPrediction fulfill(const FulfillNets& nets, const Scene& scene, Vec2 destination) {
  FulfillTrace tr;
  const auto& out = forward(nets, scene, destination, tr);
  const std::size_t tp = nets.t_past();
  const std::size_t tf = nets.t_future();
  FullPrediction pred;
  for (std::size_t t = 0; t < tp; ++t) pred.past_recon.push_back({out[2 * t], out[2 * t + 1]});
  for (std::size_t t = 0; t < tf; ++t) pred.future.push_back({out[2 * (tp + t)], out[2 * (tp + t) + 1]});
  return pred;
}

double traj_loss(const FullPrediction& pred, const Scene& scene, double beta) {
  if (!scene.ego_future) throw InvalidArgument("traj_loss: scene " + scene.scene_id + " has no future");
  if (pred.past_recon.size() != scene.ego_past.size() || pred.future.size() != scene.ego_future->size()) {
    throw InvalidArgument("traj_loss: prediction and scene lengths differ");
  }
  double past = 0.0, future = 0.0;
  for (std::size_t t = 0; t < scene.ego_past.size(); ++t) past += squared_norm(pred.past_recon[t] - scene.ego_past[t]);
  for (std::size_t t = 0; t < scene.ego_future->size(); ++t) {
    future += squared_norm(pred.future[t] - (*scene.ego_future)[t]);
  }
  return past + beta * future;
}

FulfillGrads FulfillGrads::zeros_like(const FulfillNets& nets) {
  return {SocialGrads::zeros_like(nets.e_full), GradBundle::zeros_like(nets.f_d), GradBundle::zeros_like(nets.d_full)};
}

void FulfillGrads::scale(double factor) {
  e_full.scale(factor);
  f_d.scale(factor);
  d_full.scale(factor);
}

void FulfillGrads::set_zero() {
  e_full.set_zero();
  f_d.set_zero();
  d_full.set_zero();
}

double traj_loss_backward(const FulfillNets& nets, const Scene& scene, Vec2 destination, double beta,
                          FulfillGrads& acc) {
  if (!scene.ego_future) throw InvalidArgument("fulfillment training: scene " + scene.scene_id + " has no future");
  FulfillTrace tr;
  const auto& out = forward(nets, scene, destination, tr);
  const std::size_t tp = nets.t_past();
  const std::size_t tf = nets.t_future();
  if (scene.ego_future->size() != tf) throw InvalidArgument("fulfillment training: future length mismatch");
  std::vector<double> upstream(out.size());
  double loss = 0.0;
  auto residual = [&](std::size_t slot, Vec2 target, double weight) {
    const double rx = out[2 * slot] - target.x;
    const double ry = out[2 * slot + 1] - target.y;
    loss += weight * (rx * rx + ry * ry);
    upstream[2 * slot] = 2.0 * weight * rx;
    upstream[2 * slot + 1] = 2.0 * weight * ry;
  };
  for (std::size_t t = 0; t < tp; ++t) residual(t, scene.ego_past[t], 1.0);
  for (std::size_t t = 0; t < tf; ++t) residual(tp + t, (*scene.ego_future)[t], beta);

  const auto d_h = mlp_backward_accumulate(nets.d_full, tr.dec, upstream, acc.d_full);
  const std::size_t h_dim = nets.e_full.output_dim();
  mlp_backward_accumulate(nets.f_d, tr.dest, std::span<const double>(d_h.data() + h_dim, d_h.size() - h_dim), acc.f_d);
  social_backward(nets.e_full, tr.social, std::span<const double>(d_h.data(), h_dim), acc.e_full);
  return loss;
}

void sgd_apply(FulfillNets& nets, const FulfillGrads& grads, double learning_rate) {
  sgd_apply(nets.e_full, grads.e_full, learning_rate);
  sgd_apply(nets.f_d, grads.f_d, learning_rate);
  sgd_apply(nets.d_full, grads.d_full, learning_rate);
}

TrainLog fit_fulfillment(FulfillNets& nets, const std::vector<Scene>& scenes, const SgdConfig& sgd, double beta) {
  if (beta < 0.0) throw InvalidArgument("train_fulfillment: beta must be >= 0");
  auto grads = FulfillGrads::zeros_like(nets);
  return detail::run_minibatch_sgd(
      scenes.size(), sgd, grads, "train_fulfillment",
      [&](std::size_t i, FulfillGrads& g) {
        const Scene& s = scenes[i];
        if (!s.ego_future) throw InvalidArgument("train_fulfillment: scene " + s.scene_id + " has no future");
        return traj_loss_backward(nets, s, s.destination(), beta, g);
      },
      [&](const FulfillGrads& g) { sgd_apply(nets, g, sgd.learning_rate); });
}

FulfillNets train_fulfillment(const std::vector<Scene>& scenes, const FulfillShape& shape, const SgdConfig& sgd,
                              double beta, TrainLog* log) {
  if (scenes.empty()) throw InvalidArgument("train_fulfillment: empty dataset");
  FulfillNets nets = make_fulfill_nets(sgd.seed, shape);
  auto result = fit_fulfillment(nets, scenes, sgd, beta);
  if (log != nullptr) *log = std::move(result);
  return nets;
}

double mean_traj_loss(const FulfillNets& nets, const std::vector<Scene>& scenes, double beta) {
  if (scenes.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : scenes) total += traj_loss(fulfill(nets, s, s.destination()), s, beta);
  return total / static_cast<double>(scenes.size());
}

void save_fulfill_nets(const FulfillNets& nets, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_mlp(nets.e_full.ego_embed, dir / "ego_embed.mtnn");
  save_mlp(nets.e_full.neighbor_embed, dir / "neighbor_embed.mtnn");
  save_mlp(nets.e_full.fuse, dir / "fuse.mtnn");
  save_mlp(nets.f_d, dir / "f_d.mtnn");
  save_mlp(nets.d_full, dir / "d_full.mtnn");
  write_kv({{"t_past", std::to_string(nets.t_past())}, {"t_future", std::to_string(nets.t_future())}},
           dir / "fulfill.manifest");
}

FulfillNets load_fulfill_nets(const std::filesystem::path& dir) {
  FulfillNets nets;
  nets.e_full.ego_embed = load_mlp(dir / "ego_embed.mtnn");
  nets.e_full.neighbor_embed = load_mlp(dir / "neighbor_embed.mtnn");
  nets.e_full.fuse = load_mlp(dir / "fuse.mtnn");
  nets.f_d = load_mlp(dir / "f_d.mtnn");
  nets.d_full = load_mlp(dir / "d_full.mtnn");
  const auto kv = read_kv(dir / "fulfill.manifest");
  if (nets.d_full.input_dim() != nets.e_full.output_dim() + nets.f_d.output_dim() || nets.f_d.input_dim() != 2 ||
      (nets.d_full.output_dim() - 2 * nets.t_past()) % 2 != 0) {
    throw FormatError("fulfillment nets do not chain consistently", 0);
  }
  auto it_p = kv.find("t_past");
  auto it_f = kv.find("t_future");
  if (it_p == kv.end() || it_f == kv.end() || it_p->second != std::to_string(nets.t_past()) ||
      it_f->second != std::to_string(nets.t_future())) {
    throw FormatError("fulfillment manifest horizon does not match the nets", 0);
  }
  return nets;
}

}  // namespace memtraj
