#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include "memtraj/datasets.h"

namespace testutil {

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("memtraj_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline memtraj::Trajectory line(memtraj::Vec2 start, memtraj::Vec2 step, std::size_t n) {
  memtraj::Trajectory t;
  for (std::size_t i = 0; i < n; ++i) t.push_back(start + static_cast<double>(i) * step);
  return t;
}

inline memtraj::Scene random_scene(std::mt19937_64& rng, std::size_t t_past, std::size_t t_future,
                                   std::size_t neighbors) {
  std::normal_distribution<double> g(0.0, 1.0);
  memtraj::Scene s;
  s.scene_id = "r";
  for (std::size_t t = 0; t < t_past; ++t) s.ego_past.push_back({g(rng), g(rng)});
  for (std::size_t n = 0; n < neighbors; ++n) {
    memtraj::Trajectory nb;
    for (std::size_t t = 0; t < t_past; ++t) nb.push_back({g(rng), g(rng)});
    s.neighbor_pasts.push_back(nb);
  }
  memtraj::Trajectory fut;
  for (std::size_t t = 0; t < t_future; ++t) fut.push_back({g(rng), g(rng)});
  s.ego_future = fut;
  return s;
}

}  // namespace testutil
