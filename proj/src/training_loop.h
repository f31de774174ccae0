#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "memtraj/errors.h"
#include "memtraj/feature_learning.h"
#include "memtraj/numkit.h"

namespace memtraj::detail {

// Shared mini-batch loop. `sample(i, grads)` returns the loss of item i and adds
// its gradient into grads; `apply(grads)` performs the update once the batch
// gradient has been averaged.
template <class Grads, class SampleFn, class ApplyFn>
TrainLog run_minibatch_sgd(std::size_t n_items, const SgdConfig& sgd, Grads& grads, const char* stage,
                           SampleFn&& sample, ApplyFn&& apply) {
  if (!(sgd.learning_rate >= 0.0)) throw InvalidArgument(std::string(stage) + ": learning rate must be >= 0");
  if (sgd.batch_size == 0) throw InvalidArgument(std::string(stage) + ": batch size must be >= 1");
  TrainLog log;
  if (n_items == 0 || sgd.epochs == 0) return log;
  std::mt19937_64 rng(sgd.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(n_items);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < sgd.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t b = 0; b < n_items; b += sgd.batch_size, ++batch_index) {
      const std::size_t e = std::min(n_items, b + sgd.batch_size);
      grads.set_zero();
      double batch_loss = 0.0;
      for (std::size_t i = b; i < e; ++i) batch_loss += sample(order[i], grads);
      if (!std::isfinite(batch_loss)) {
        throw NumericError(std::string(stage) + ": non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batch_index));
      }
      epoch_loss += batch_loss;
      grads.scale(1.0 / static_cast<double>(e - b));
      apply(grads);
    }
    log.epoch_losses.push_back(epoch_loss / static_cast<double>(n_items));
  }
  return log;
}

}  // namespace memtraj::detail
