#include "memtraj/addresser.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "memtraj/errors.h"
#include "memtraj/kvfile.h"

namespace memtraj {
namespace {

constexpr double kDegenerateNorm = 1e-12;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> project(const Mlp& net, bool identity, const std::vector<double>& x) {
  return identity ? x : mlp_forward(net, x);
}

}  // namespace

AddresserNets make_addresser(std::uint64_t seed, const AddresserShape& s) {
  AddresserNets nets;
  nets.f_q = mlp_init(seed, {s.d_past, s.hidden, s.d_addr}, s.activation);
  nets.f_k = mlp_init(seed + 1, {s.d_past, s.hidden, s.d_addr}, s.activation);
  return nets;
}

AddresserNets fixed_cosine_addresser() {
  AddresserNets nets;
  nets.fixed_cosine = true;
  return nets;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine_similarity: length mismatch");
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  if (na < kDegenerateNorm || nb < kDegenerateNorm) return 0.0;
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double score(const AddresserNets& nets, const PastFeature& q, const PastFeature& k) {
  const auto a = project(nets.f_q, nets.fixed_cosine, q.values);
  const auto b = project(nets.f_k, nets.fixed_cosine, k.values);
  return cosine_similarity(a, b);
}

double pseudo_label(double d, double d_threshold) {
  if (!(d_threshold > 0.0)) throw InvalidArgument("pseudo_label: d_T must be positive");
  return std::max(0.0, (d_threshold - d) / d_threshold);
}

double addresser_loss(const ScoreVector& scores, std::span<const double> labels) {
  if (scores.scores.size() != labels.size()) {
    throw InvalidArgument("addresser_loss: " + std::to_string(scores.scores.size()) + " scores vs " +
                          std::to_string(labels.size()) + " labels");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double r = scores.scores[i] - labels[i];
    loss += r * r;
  }
  return loss;
}

AddressIndex index_bank(const AddresserNets& nets, const MemoryBankPair& bank) {
  AddressIndex index;
  index.keys.reserve(bank.size());
  for (const auto& e : bank.entries) index.keys.push_back(project(nets.f_k, nets.fixed_cosine, e.k.values));
  return index;
}

ScoreVector score_all(const AddresserNets& nets, const AddressIndex& index, const PastFeature& q) {
  const auto a = project(nets.f_q, nets.fixed_cosine, q.values);
  ScoreVector out;
  out.scores.reserve(index.keys.size());
  for (const auto& key : index.keys) out.scores.push_back(cosine_similarity(a, key));
  return out;
}

std::vector<Address> top_l(const AddresserNets& nets, const AddressIndex& index, const PastFeature& q,
                           std::size_t l) {
  const std::size_t m = index.keys.size();
  if (l < 1 || l > m) {
    throw InvalidArgument("top_l: L = " + std::to_string(l) + " must be in [1, M] with M = " + std::to_string(m));
  }
  const auto s = score_all(nets, index, q);
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) {
    return s.scores[a] != s.scores[b] ? s.scores[a] > s.scores[b] : a < b;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(l), order.end(), better);
  std::vector<Address> out;
  out.reserve(l);
  for (std::size_t i = 0; i < l; ++i) out.push_back({order[i], s.scores[order[i]]});
  return out;
}

std::vector<Address> top_l(const AddresserNets& nets, const PastFeature& q, const MemoryBankPair& bank,
                           std::size_t l) {
  return top_l(nets, index_bank(nets, bank), q, l);
}

std::vector<Vec2> decoded_bank_intentions(const FeatureNets& nets, const MemoryBankPair& bank) {
  std::vector<Vec2> out;
  out.reserve(bank.size());
  for (const auto& e : bank.entries) out.push_back(joint_decode(nets, e.k, e.v).destination);
  return out;
}

AddresserNets train_addresser(AddresserNets nets, const MemoryBankPair& bank, const FeatureNets& feature_nets,
                              const std::vector<Scene>& scenes, const AddresserTrainConfig& config,
                              AddresserTrainLog* log) {
  if (bank.size() == 0) throw InvalidArgument("train_addresser: empty bank");
  if (!(config.d_threshold > 0.0)) throw InvalidArgument("train_addresser: d_T must be positive");
  if (config.sgd.batch_size == 0) throw InvalidArgument("train_addresser: batch size must be >= 1");
  AddresserTrainLog local_log;
  if (nets.fixed_cosine || config.sgd.epochs == 0 || scenes.empty()) {
    if (log != nullptr) *log = local_log;
    return nets;
  }

  const std::size_t m = bank.size();
  const auto decoded = decoded_bank_intentions(feature_nets, bank);
  std::vector<std::vector<double>> queries;
  std::vector<Vec2> targets;
  std::vector<std::size_t> nearest;
  queries.reserve(scenes.size());
  for (const auto& s : scenes) {
    if (!s.ego_future) throw InvalidArgument("train_addresser: scene " + s.scene_id + " has no future");
    queries.push_back(social_encode(feature_nets, s).values);
    targets.push_back(s.destination());
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
      const double d = distance(targets.back(), decoded[i]);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    nearest.push_back(best);
  }

  std::mt19937_64 rng(config.sgd.seed ^ 0xadd7e55ULL);
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::size_t> pool(m);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  auto grad_q = GradBundle::zeros_like(nets.f_q);
  auto grad_k = GradBundle::zeros_like(nets.f_k);
  const std::size_t d_addr = nets.f_k.output_dim();

  for (std::size_t epoch = 0; epoch < config.sgd.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t b = 0; b < order.size(); b += config.sgd.batch_size, ++batch_index) {
      const std::size_t e = std::min(order.size(), b + config.sgd.batch_size);

      std::vector<std::size_t> candidates;
      if (m <= config.candidate_cap) {
        candidates = pool;
      } else {
        // Partial Fisher-Yates for a uniform sample without replacement.
        for (std::size_t i = 0; i < config.candidate_cap; ++i) {
          std::uniform_int_distribution<std::size_t> pick(i, m - 1);
          std::swap(pool[i], pool[pick(rng)]);
        }
        candidates.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(config.candidate_cap));
        for (std::size_t i = b; i < e; ++i) candidates.push_back(nearest[order[i]]);
        std::sort(candidates.begin(), candidates.end());
        candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
      }

      std::vector<ForwardTrace> key_traces;
      std::vector<double> key_norms;
      key_traces.reserve(candidates.size());
      for (std::size_t c : candidates) {
        key_traces.push_back(mlp_forward_trace(nets.f_k, bank.entries[c].k.values));
        const auto& kb = key_traces.back().output();
        key_norms.push_back(std::sqrt(dot(kb, kb)));
      }
      std::vector<std::vector<double>> key_grads(candidates.size(), std::vector<double>(d_addr, 0.0));
      grad_q.set_zero();
      grad_k.set_zero();

      double batch_loss = 0.0;
      for (std::size_t i = b; i < e; ++i) {
        const std::size_t qi = order[i];
        const auto q_trace = mlp_forward_trace(nets.f_q, queries[qi]);
        const auto& a = q_trace.output();
        const double na = std::sqrt(dot(a, a));
        std::vector<double> ga(d_addr, 0.0);
        for (std::size_t c = 0; c < candidates.size(); ++c) {
          const auto& kb = key_traces[c].output();
          const double nb = key_norms[c];
          const double label = pseudo_label(distance(targets[qi], decoded[candidates[c]]), config.d_threshold);
          if (na < kDegenerateNorm || nb < kDegenerateNorm) {
            ++local_log.degenerate_scores;
            batch_loss += label * label;
            continue;
          }
          const double inv = 1.0 / (na * nb);
          const double s = dot(a, kb) * inv;
          const double r = s - label;
          batch_loss += r * r;
          const double g = 2.0 * r;
          auto& gk = key_grads[c];
          for (std::size_t d = 0; d < d_addr; ++d) {
            ga[d] += g * (kb[d] * inv - s * a[d] / (na * na));
            gk[d] += g * (a[d] * inv - s * kb[d] / (nb * nb));
          }
        }
        mlp_backward_accumulate(nets.f_q, q_trace, ga, grad_q);
      }
      for (std::size_t c = 0; c < candidates.size(); ++c) {
        mlp_backward_accumulate(nets.f_k, key_traces[c], key_grads[c], grad_k);
      }
      if (!std::isfinite(batch_loss)) {
        throw NumericError("train_addresser: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_index));
      }
      epoch_loss += batch_loss;
      const double inv_batch = 1.0 / static_cast<double>(e - b);
      grad_q.scale(inv_batch);
      grad_k.scale(inv_batch);
      sgd_apply(nets.f_q, grad_q, config.sgd.learning_rate);
      sgd_apply(nets.f_k, grad_k, config.sgd.learning_rate);
    }
    local_log.loss.epoch_losses.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  if (log != nullptr) *log = std::move(local_log);
  return nets;
}

void save_addresser(const AddresserNets& nets, const std::filesystem::path& dir, const std::string& bank_hash) {
  std::filesystem::create_directories(dir);
  KeyValues kv{{"fixed_cosine", nets.fixed_cosine ? "1" : "0"}, {"bank_hash", bank_hash}};
  if (!nets.fixed_cosine) {
    save_mlp(nets.f_q, dir / "f_q.mtnn");
    save_mlp(nets.f_k, dir / "f_k.mtnn");
    kv["d_addr"] = std::to_string(nets.f_q.output_dim());
  }
  write_kv(kv, dir / "addresser.manifest");
}

AddresserNets load_addresser(const std::filesystem::path& dir, std::string* bank_hash_out) {
  const auto kv = read_kv(dir / "addresser.manifest");
  AddresserNets nets;
  auto it = kv.find("fixed_cosine");
  nets.fixed_cosine = it != kv.end() && it->second == "1";
  if (!nets.fixed_cosine) {
    nets.f_q = load_mlp(dir / "f_q.mtnn");
    nets.f_k = load_mlp(dir / "f_k.mtnn");
    if (nets.f_q.output_dim() != nets.f_k.output_dim() || nets.f_q.input_dim() != nets.f_k.input_dim()) {
      throw FormatError("addresser projections disagree on dimensions", 0);
    }
    auto d = kv.find("d_addr");
    if (d == kv.end() || d->second != std::to_string(nets.f_q.output_dim())) {
      throw FormatError("addresser manifest d_addr does not match the nets", 0);
    }
  }
  if (bank_hash_out != nullptr) {
    auto h = kv.find("bank_hash");
    *bank_hash_out = h == kv.end() ? std::string() : h->second;
  }
  return nets;
}

}  // namespace memtraj
