#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "memtraj/datasets.h"
#include "memtraj/numkit.h"
#include "memtraj/social_encoder.h"

namespace memtraj {

/// Past feature k (or query q): output of the social encoder.
struct PastFeature {
  std::vector<double> values;
  friend bool operator==(const PastFeature&, const PastFeature&) = default;
};

/// Intention feature v: encoding of a destination.
struct IntentionFeature {
  std::vector<double> values;
  friend bool operator==(const IntentionFeature&, const IntentionFeature&) = default;
};

struct FeatureShape {
  std::size_t t_past = 8;
  std::size_t d_past = 128;
  std::size_t d_int = 64;
  std::size_t embed_dim = 64;
  std::size_t hidden = 128;
  Activation activation = Activation::ReLU;
};

/// Stage-1 networks: social encoder, intention encoder and the joint decoder
/// that reconstructs [past; destination] from [k; v].
struct FeatureNets {
  SocialEncoder social;
  Mlp intention_enc;  // 2 -> d_int
  Mlp joint_dec;      // d_past + d_int -> 2 t_past + 2

  std::size_t t_past() const { return social.ego_embed.input_dim() / 2; }
  std::size_t d_past() const { return social.output_dim(); }
  std::size_t d_int() const { return intention_enc.output_dim(); }

  friend bool operator==(const FeatureNets&, const FeatureNets&) = default;
};

FeatureNets make_feature_nets(std::uint64_t seed, const FeatureShape& shape);

PastFeature social_encode(const FeatureNets& nets, const Scene& scene);
IntentionFeature intention_encode(const FeatureNets& nets, Vec2 destination);

struct JointDecoding {
  Trajectory past;
  Vec2 destination;
};

/// Decodes the concatenation [k; v] (past first).
JointDecoding joint_decode(const FeatureNets& nets, const PastFeature& k, const IntentionFeature& v);

/// Sum of squared past residuals plus alpha times the squared destination residual.
double rec_loss(const Trajectory& past_hat, const Trajectory& past, Vec2 dest_hat, Vec2 dest, double alpha);

struct FeatureGrads {
  SocialGrads social;
  GradBundle intention_enc;
  GradBundle joint_dec;

  static FeatureGrads zeros_like(const FeatureNets& nets);
  void scale(double factor);
  void set_zero();
};

/// Reconstruction loss of one normalized scene; adds its parameter gradients to `acc`.
double rec_loss_backward(const FeatureNets& nets, const Scene& scene, double alpha, FeatureGrads& acc);
double scene_rec_loss(const FeatureNets& nets, const Scene& scene, double alpha);
double mean_rec_loss(const FeatureNets& nets, const std::vector<Scene>& scenes, double alpha);
void sgd_apply(FeatureNets& nets, const FeatureGrads& grads, double learning_rate);

struct TrainLog {
  /// Running mean of the per-scene loss over each epoch.
  std::vector<double> epoch_losses;
};

/// Mini-batch SGD on the mean reconstruction loss over normalized scenes with futures.
/// Shuffles with `sgd.seed`; throws NumericError naming epoch and batch on a
/// non-finite loss.
TrainLog fit_features(FeatureNets& nets, const std::vector<Scene>& scenes, const SgdConfig& sgd, double alpha);

FeatureNets train_features(const std::vector<Scene>& scenes, const FeatureShape& shape,
                           const SgdConfig& sgd, double alpha, TrainLog* log = nullptr);

void save_feature_nets(const FeatureNets& nets, const std::filesystem::path& dir);
FeatureNets load_feature_nets(const std::filesystem::path& dir);

}  // namespace memtraj
