#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "memtraj/datasets.h"
#include "memtraj/model.h"

namespace memtraj {

/// Smallest endpoint distance among the K predictions.
double min_fde(std::span<const Trajectory> preds, const Trajectory& gt);
/// Smallest time-averaged displacement among the K predictions.
double min_ade(std::span<const Trajectory> preds, const Trajectory& gt);
/// Index of the prediction whose endpoint is closest to the ground truth.
std::size_t best_fde_index(std::span<const Trajectory> preds, const Trajectory& gt);

struct MetricRow {
  std::string scene_id;
  double min_ade = 0.0;
  double min_fde = 0.0;
  std::size_t best_k_index = 0;
};

struct MetricReport {
  double min_ade_k = 0.0;
  double min_fde_k = 0.0;
  std::size_t k = 0;
  std::size_t n_scenes = 0;
  std::string units = "m";
  std::vector<MetricRow> rows;
};

MetricReport aggregate_report(std::vector<MetricRow> rows, std::size_t k, std::string units);

/// CSV `scene_id,min_ade,min_fde,best_k_index`.
std::string report_csv(const MetricReport& report);
std::vector<MetricRow> parse_report_csv(const std::string& text);
/// `key=value` lines for scripting.
std::string report_summary(const MetricReport& report);

/// Straight-line extrapolation with the mean velocity over the observed past.
Trajectory constant_velocity_forecast(const Scene& scene, std::size_t t_future);

/// Predicts every scene (world coordinates), fulfills each intention and scores
/// against the ground truth. Scenes are processed in parallel; results are
/// independent of the thread count.
MetricReport evaluate(const ModelBundle& model, const std::vector<Scene>& scenes, const PredictOptions& options,
                      std::uint64_t seed, const std::string& units = "m", std::size_t threads = 0);

}  // namespace memtraj
