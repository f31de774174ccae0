#include "memtraj/model.h"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>

#include "memtraj/errors.h"

namespace memtraj {

std::uint64_t scene_seed(std::uint64_t seed, std::size_t scene_index) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(scene_index) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

ScenePrediction predict_scene(const ModelBundle& model, const Scene& scene, const PredictOptions& options,
                              std::uint64_t seed) {
  auto [norm, tf] = normalize_scene(scene);
  ScenePrediction out;
  out.intention = predict_intentions(norm, model.bank, model.index, model.addresser, model.features,
                                     options.intention, seed);
  for (const Vec2& dest : out.intention.intentions.destinations) {
    auto pred = fulfill(model.fulfill, norm, dest);
    if (options.snap_to_destination) pred.future.back() = dest;
    out.destinations.push_back(tf.invert(dest));
    out.futures.push_back(tf.invert(pred.future));
  }
  return out;
}

std::size_t configured_threads() {
  if (const char* env = std::getenv("MEMTRAJ_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  return 1;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = configured_threads();
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace memtraj
