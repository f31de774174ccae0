#include "memtraj/social_encoder.h"

#include <limits>
#include <string>

#include "memtraj/errors.h"

namespace memtraj {

SocialEncoder make_social_encoder(std::uint64_t seed, const SocialEncoderShape& s) {
  const std::size_t in = 2 * s.t_past;
  SocialEncoder enc;
  enc.ego_embed = mlp_init(seed, {in, s.embed_dim, s.embed_dim}, s.activation);
  enc.neighbor_embed = mlp_init(seed + 1, {in, s.embed_dim, s.embed_dim}, s.activation);
  enc.fuse = mlp_init(seed + 2, {2 * s.embed_dim, s.fuse_hidden, s.output_dim}, s.activation);
  return enc;
}

SocialGrads SocialGrads::zeros_like(const SocialEncoder& enc) {
  return {GradBundle::zeros_like(enc.ego_embed), GradBundle::zeros_like(enc.neighbor_embed),
          GradBundle::zeros_like(enc.fuse)};
}

void SocialGrads::scale(double factor) {
  ego_embed.scale(factor);
  neighbor_embed.scale(factor);
  fuse.scale(factor);
}

void SocialGrads::set_zero() {
  ego_embed.set_zero();
  neighbor_embed.set_zero();
  fuse.set_zero();
}

std::vector<double> social_forward(const SocialEncoder& enc, const Scene& scene, SocialTrace* trace) {
  const std::size_t in = enc.ego_embed.input_dim();
  const auto ego_flat = flatten(scene.ego_past);
  if (ego_flat.size() != in) {
    throw InvalidArgument("social_encode: ego past has " + std::to_string(scene.ego_past.size()) +
                          " rows, encoder expects " + std::to_string(in / 2));
  }
  auto ego = mlp_forward_trace(enc.ego_embed, ego_flat);
  const std::size_t e = enc.neighbor_embed.output_dim();
  std::vector<double> pooled(e, 0.0);
  std::vector<std::size_t> winner(e, std::numeric_limits<std::size_t>::max());
  std::vector<ForwardTrace> nbs;
  nbs.reserve(scene.neighbor_pasts.size());
  for (std::size_t j = 0; j < scene.neighbor_pasts.size(); ++j) {
    const auto flat = flatten(scene.neighbor_pasts[j]);
    if (flat.size() != in) {
      throw InvalidArgument("social_encode: neighbor past has " +
                            std::to_string(scene.neighbor_pasts[j].size()) + " rows");
    }
    nbs.push_back(mlp_forward_trace(enc.neighbor_embed, flat));
    const auto& out = nbs.back().output();
    for (std::size_t d = 0; d < e; ++d) {
      if (j == 0 || out[d] > pooled[d]) {
        pooled[d] = out[d];
        winner[d] = j;
      }
    }
  }
  std::vector<double> fused_in = ego.output();
  fused_in.insert(fused_in.end(), pooled.begin(), pooled.end());
  auto fuse = mlp_forward_trace(enc.fuse, fused_in);
  std::vector<double> k = fuse.output();
  if (trace != nullptr) {
    trace->ego = std::move(ego);
    trace->neighbors = std::move(nbs);
    trace->winner = std::move(winner);
    trace->fuse = std::move(fuse);
  }
  return k;
}

void social_backward(const SocialEncoder& enc, const SocialTrace& trace,
                     std::span<const double> grad_output, SocialGrads& acc) {
  const auto d_fused = mlp_backward_accumulate(enc.fuse, trace.fuse, grad_output, acc.fuse);
  const std::size_t e_ego = enc.ego_embed.output_dim();
  const std::size_t e_nb = enc.neighbor_embed.output_dim();
  mlp_backward_accumulate(enc.ego_embed, trace.ego,
                          std::span<const double>(d_fused.data(), e_ego), acc.ego_embed);
  if (trace.neighbors.empty()) return;
  // Route each pooled gradient to the neighbor that won that dimension.
  std::vector<std::vector<double>> per_neighbor(trace.neighbors.size(), std::vector<double>(e_nb, 0.0));
  bool any = false;
  for (std::size_t d = 0; d < e_nb; ++d) {
    const double g = d_fused[e_ego + d];
    if (g != 0.0) {
      per_neighbor[trace.winner[d]][d] = g;
      any = true;
    }
  }
  if (!any) return;
  for (std::size_t j = 0; j < trace.neighbors.size(); ++j) {
    mlp_backward_accumulate(enc.neighbor_embed, trace.neighbors[j], per_neighbor[j], acc.neighbor_embed);
  }
}

void sgd_apply(SocialEncoder& enc, const SocialGrads& grads, double learning_rate) {
  sgd_apply(enc.ego_embed, grads.ego_embed, learning_rate);
  sgd_apply(enc.neighbor_embed, grads.neighbor_embed, learning_rate);
  sgd_apply(enc.fuse, grads.fuse, learning_rate);
}

}  // namespace memtraj
