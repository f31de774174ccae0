#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "memtraj/datasets.h"
#include "memtraj/feature_learning.h"
#include "memtraj/numkit.h"
#include "memtraj/social_encoder.h"

namespace memtraj {

struct FulfillShape {
  std::size_t t_past = 8;
  std::size_t t_future = 12;
  std::size_t embed_dim = 64;
  std::size_t hidden = 128;
  std::size_t past_dim = 128;  // h_x
  std::size_t dest_dim = 64;   // f_d output
  Activation activation = Activation::ReLU;
};

/// Destination-conditioned trajectory completion:
/// h = e_full(past, neighbors), h' = [h; f_d(destination)], d_full(h') -> [past; future].
struct FulfillNets {
  SocialEncoder e_full;
  Mlp f_d;
  Mlp d_full;

  std::size_t t_past() const { return e_full.ego_embed.input_dim() / 2; }
  std::size_t t_future() const { return (d_full.output_dim() - 2 * t_past()) / 2; }

  friend bool operator==(const FulfillNets&, const FulfillNets&) = default;
};

FulfillNets make_fulfill_nets(std::uint64_t seed, const FulfillShape& shape);

struct FullPrediction {
  Trajectory future;      // t_future rows
  Trajectory past_recon;  // t_past rows
};

FullPrediction fulfill(const FulfillNets& nets, const Scene& scene, Vec2 destination);

/// ||past_recon - past||^2 + beta ||future - ground truth||^2.
double traj_loss(const FullPrediction& pred, const Scene& scene, double beta);

struct FulfillGrads {
  SocialGrads e_full;
  GradBundle f_d;
  GradBundle d_full;

  static FulfillGrads zeros_like(const FulfillNets& nets);
  void scale(double factor);
  void set_zero();
};

/// Loss of one scene conditioned on `destination`; adds parameter gradients to `acc`.
double traj_loss_backward(const FulfillNets& nets, const Scene& scene, Vec2 destination, double beta,
                          FulfillGrads& acc);
void sgd_apply(FulfillNets& nets, const FulfillGrads& grads, double learning_rate);

/// SGD on the mean trajectory loss, conditioning every scene on its own
/// ground-truth destination.
TrainLog fit_fulfillment(FulfillNets& nets, const std::vector<Scene>& scenes, const SgdConfig& sgd, double beta);
FulfillNets train_fulfillment(const std::vector<Scene>& scenes, const FulfillShape& shape, const SgdConfig& sgd,
                              double beta, TrainLog* log = nullptr);
double mean_traj_loss(const FulfillNets& nets, const std::vector<Scene>& scenes, double beta);

void save_fulfill_nets(const FulfillNets& nets, const std::filesystem::path& dir);
FulfillNets load_fulfill_nets(const std::filesystem::path& dir);

}  // namespace memtraj
