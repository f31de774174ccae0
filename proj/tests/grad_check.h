#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "memtraj/numkit.h"

namespace testutil {

struct ParamRef {
  double* value;
  double analytic;
};

inline void collect(memtraj::Mlp& net, const memtraj::GradBundle& g, std::vector<ParamRef>& out) {
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    for (std::size_t i = 0; i < net.weights[l].size(); ++i) out.push_back({&net.weights[l][i], g.d_weights[l][i]});
    for (std::size_t i = 0; i < net.biases[l].size(); ++i) out.push_back({&net.biases[l][i], g.d_biases[l][i]});
  }
}

// Worst relative error between analytic gradients and central differences of
// `loss`, over every `stride`-th parameter.
inline double max_fd_error(std::vector<ParamRef> params, const std::function<double()>& loss, double eps,
                           std::size_t stride = 1) {
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); i += stride) {
    double& p = *params[i].value;
    const double saved = p;
    p = saved + eps;
    const double up = loss();
    p = saved - eps;
    const double down = loss();
    p = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = params[i].analytic;
    worst = std::max(worst, std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric)));
  }
  return worst;
}

}  // namespace testutil
