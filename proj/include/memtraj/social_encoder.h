#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "memtraj/datasets.h"
#include "memtraj/numkit.h"

namespace memtraj {

/// Past-trajectory encoder with social pooling: the flattened ego past and each
/// flattened neighbor past are embedded separately, neighbor embeddings are
/// max-pooled element-wise (zero vector when there are no neighbors), and the
/// concatenation [ego; pooled] goes through `fuse`.
struct SocialEncoder {
  Mlp ego_embed;
  Mlp neighbor_embed;
  Mlp fuse;

  std::size_t output_dim() const { return fuse.output_dim(); }

  friend bool operator==(const SocialEncoder&, const SocialEncoder&) = default;
};

struct SocialEncoderShape {
  std::size_t t_past = 8;
  std::size_t embed_dim = 64;
  std::size_t fuse_hidden = 128;
  std::size_t output_dim = 128;
  Activation activation = Activation::ReLU;
};

SocialEncoder make_social_encoder(std::uint64_t seed, const SocialEncoderShape& shape);

struct SocialTrace {
  ForwardTrace ego;
  std::vector<ForwardTrace> neighbors;
  /// For each pooled dimension, the neighbor that supplied the max (first on ties).
  std::vector<std::size_t> winner;
  ForwardTrace fuse;
};

struct SocialGrads {
  GradBundle ego_embed;
  GradBundle neighbor_embed;
  GradBundle fuse;

  static SocialGrads zeros_like(const SocialEncoder& enc);
  void scale(double factor);
  void set_zero();
};

std::vector<double> social_forward(const SocialEncoder& enc, const Scene& scene,
                                   SocialTrace* trace = nullptr);
void social_backward(const SocialEncoder& enc, const SocialTrace& trace,
                     std::span<const double> grad_output, SocialGrads& acc);
void sgd_apply(SocialEncoder& enc, const SocialGrads& grads, double learning_rate);

}  // namespace memtraj
