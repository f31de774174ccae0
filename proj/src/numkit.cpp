#include "memtraj/numkit.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <string>

#include "memtraj/binio.h"
#include "memtraj/errors.h"

namespace memtraj {
namespace {

double activate(Activation act, double z) {
  switch (act) {
    case Activation::ReLU:
      return z > 0.0 ? z : 0.0;
    case Activation::Tanh:
      return std::tanh(z);
    case Activation::Identity:
      return z;
  }
  return z;
}

// Derivative expressed through the pre-activation z and the activation a.
double activate_grad(Activation act, double z, double a) {
  switch (act) {
    case Activation::ReLU:
      return z > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh:
      return 1.0 - a * a;
    case Activation::Identity:
      return 1.0;
  }
  return 1.0;
}

Activation layer_activation(const Mlp& net, std::size_t layer) {
  return layer + 1 == net.num_layers() ? Activation::Identity : net.hidden_activation;
}

void check_input(const Mlp& net, std::size_t n, const char* what) {
  if (n != net.input_dim()) {
    throw InvalidArgument(std::string(what) + ": input length " + std::to_string(n) +
                          " does not match layer_dims[0] = " + std::to_string(net.input_dim()));
  }
}

}  // namespace

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

GradBundle GradBundle::zeros_like(const Mlp& net) {
  GradBundle g;
  g.d_weights.reserve(net.num_layers());
  g.d_biases.reserve(net.num_layers());
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    g.d_weights.emplace_back(net.weights[l].size(), 0.0);
    g.d_biases.emplace_back(net.biases[l].size(), 0.0);
  }
  g.d_input.assign(net.input_dim(), 0.0);
  return g;
}

void GradBundle::add(const GradBundle& other) {
  for (std::size_t l = 0; l < d_weights.size(); ++l) {
    for (std::size_t i = 0; i < d_weights[l].size(); ++i) d_weights[l][i] += other.d_weights[l][i];
    for (std::size_t i = 0; i < d_biases[l].size(); ++i) d_biases[l][i] += other.d_biases[l][i];
  }
  for (std::size_t i = 0; i < d_input.size() && i < other.d_input.size(); ++i) {
    d_input[i] += other.d_input[i];
  }
}

void GradBundle::scale(double factor) {
  for (auto& w : d_weights) for (auto& x : w) x *= factor;
  for (auto& b : d_biases) for (auto& x : b) x *= factor;
  for (auto& x : d_input) x *= factor;
}

void GradBundle::set_zero() {
  for (auto& w : d_weights) std::fill(w.begin(), w.end(), 0.0);
  for (auto& b : d_biases) std::fill(b.begin(), b.end(), 0.0);
  std::fill(d_input.begin(), d_input.end(), 0.0);
}

Mlp mlp_init(std::uint64_t seed, const std::vector<std::size_t>& layer_dims,
             Activation hidden_activation) {
  if (layer_dims.size() < 2) {
    throw InvalidArgument("mlp_init: layer_dims needs at least 2 entries");
  }
  for (std::size_t d : layer_dims) {
    if (d == 0) throw InvalidArgument("mlp_init: layer dims must be positive");
  }
  Mlp net;
  net.layer_dims = layer_dims;
  net.hidden_activation = hidden_activation;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    const std::size_t fan_in = layer_dims[l];
    const std::size_t fan_out = layer_dims[l + 1];
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-s, s);
    std::vector<double> w(fan_in * fan_out);
    for (auto& x : w) x = dist(rng);
    net.weights.push_back(std::move(w));
    net.biases.emplace_back(fan_out, 0.0);
  }
  return net;
}

ForwardTrace mlp_forward_trace(const Mlp& net, std::span<const double> input) {
  check_input(net, input.size(), "mlp_forward");
  ForwardTrace trace;
  trace.activations.reserve(net.num_layers() + 1);
  trace.pre_activations.reserve(net.num_layers());
  trace.activations.emplace_back(input.begin(), input.end());
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const std::size_t n_in = net.layer_dims[l];
    const std::size_t n_out = net.layer_dims[l + 1];
    const auto& a = trace.activations.back();
    const double* w = net.weights[l].data();
    std::vector<double> z(n_out);
    for (std::size_t o = 0; o < n_out; ++o) {
      const double* row = w + o * n_in;
      double acc = net.biases[l][o];
      for (std::size_t i = 0; i < n_in; ++i) acc += row[i] * a[i];
      z[o] = acc;
    }
    const Activation act = layer_activation(net, l);
    std::vector<double> out(n_out);
    for (std::size_t o = 0; o < n_out; ++o) out[o] = activate(act, z[o]);
    trace.pre_activations.push_back(std::move(z));
    trace.activations.push_back(std::move(out));
  }
  return trace;
}

std::vector<double> mlp_forward(const Mlp& net, std::span<const double> input) {
  auto trace = mlp_forward_trace(net, input);
  return std::move(trace.activations.back());
}

std::vector<double> mlp_backward_accumulate(const Mlp& net, const ForwardTrace& trace,
                                            std::span<const double> upstream_grad,
                                            GradBundle& acc) {
  if (upstream_grad.size() != net.output_dim()) {
    throw InvalidArgument("mlp_backward: upstream gradient length " +
                          std::to_string(upstream_grad.size()) + " does not match output dim " +
                          std::to_string(net.output_dim()));
  }
  std::vector<double> grad(upstream_grad.begin(), upstream_grad.end());
  for (std::size_t l = net.num_layers(); l-- > 0;) {
    const std::size_t n_in = net.layer_dims[l];
    const std::size_t n_out = net.layer_dims[l + 1];
    const Activation act = layer_activation(net, l);
    const auto& z = trace.pre_activations[l];
    const auto& a_out = trace.activations[l + 1];
    const auto& a_in = trace.activations[l];
    for (std::size_t o = 0; o < n_out; ++o) grad[o] *= activate_grad(act, z[o], a_out[o]);

    const double* w = net.weights[l].data();
    double* dw = acc.d_weights[l].data();
    double* db = acc.d_biases[l].data();
    std::vector<double> grad_in(n_in, 0.0);
    for (std::size_t o = 0; o < n_out; ++o) {
      const double delta = grad[o];
      db[o] += delta;
      if (delta == 0.0) continue;
      double* dw_row = dw + o * n_in;
      const double* w_row = w + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) {
        dw_row[i] += delta * a_in[i];
        grad_in[i] += delta * w_row[i];
      }
    }
    grad = std::move(grad_in);
  }
  return grad;
}

GradBundle mlp_backward(const Mlp& net, std::span<const double> input,
                        std::span<const double> upstream_grad) {
  const auto trace = mlp_forward_trace(net, input);
  GradBundle g = GradBundle::zeros_like(net);
  g.d_input = mlp_backward_accumulate(net, trace, upstream_grad, g);
  return g;
}

void sgd_apply(Mlp& net, const GradBundle& grads, double learning_rate) {
  if (grads.d_weights.size() != net.num_layers() || grads.d_biases.size() != net.num_layers()) {
    throw InvalidArgument("sgd_step: gradient layer count does not match the net");
  }
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    if (grads.d_weights[l].size() != net.weights[l].size() ||
        grads.d_biases[l].size() != net.biases[l].size()) {
      throw InvalidArgument("sgd_step: gradient shape mismatch at layer " + std::to_string(l));
    }
    for (double g : grads.d_weights[l]) {
      if (!std::isfinite(g)) throw NumericError("sgd_step: non-finite weight gradient at layer " + std::to_string(l));
    }
    for (double g : grads.d_biases[l]) {
      if (!std::isfinite(g)) throw NumericError("sgd_step: non-finite bias gradient at layer " + std::to_string(l));
    }
  }
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    for (std::size_t i = 0; i < net.weights[l].size(); ++i) net.weights[l][i] -= learning_rate * grads.d_weights[l][i];
    for (std::size_t i = 0; i < net.biases[l].size(); ++i) net.biases[l][i] -= learning_rate * grads.d_biases[l][i];
  }
}

Mlp sgd_step(Mlp net, const GradBundle& grads, double learning_rate) {
  sgd_apply(net, grads, learning_rate);
  return net;
}

double finite_diff_check(const Mlp& net, std::span<const double> input, double eps,
                         std::span<const double> upstream) {
  if (!(eps > 0.0)) throw InvalidArgument("finite_diff_check: eps must be positive");
  const GradBundle analytic = mlp_backward(net, input, upstream);

  auto objective = [&](const Mlp& m, std::span<const double> x) {
    const auto out = mlp_forward(m, x);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += upstream[i] * out[i];
    return s;
  };
  auto rel = [](double a, double n) { return std::abs(a - n) / std::max(1e-8, std::abs(a) + std::abs(n)); };

  double worst = 0.0;
  Mlp probe = net;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    for (int which = 0; which < 2; ++which) {
      auto& params = which == 0 ? probe.weights[l] : probe.biases[l];
      const auto& grads = which == 0 ? analytic.d_weights[l] : analytic.d_biases[l];
      for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + eps;
        const double plus = objective(probe, input);
        params[i] = saved - eps;
        const double minus = objective(probe, input);
        params[i] = saved;
        worst = std::max(worst, rel(grads[i], (plus - minus) / (2.0 * eps)));
      }
    }
  }
  std::vector<double> x(input.begin(), input.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double plus = objective(net, x);
    x[i] = saved - eps;
    const double minus = objective(net, x);
    x[i] = saved;
    worst = std::max(worst, rel(analytic.d_input[i], (plus - minus) / (2.0 * eps)));
  }
  return worst;
}

double finite_diff_check(const Mlp& net, std::span<const double> input, double eps) {
  std::mt19937_64 rng(0x5eedULL);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> upstream(net.output_dim());
  for (auto& u : upstream) u = dist(rng);
  return finite_diff_check(net, input, eps, upstream);
}

bool all_finite(const Mlp& net) {
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    for (double w : net.weights[l]) if (!std::isfinite(w)) return false;
    for (double b : net.biases[l]) if (!std::isfinite(b)) return false;
  }
  return true;
}

// Layout: "MTNN", version u32, hidden activation u32, dim count u32, dims u32[],
// then per layer the row-major f64 weights followed by the f64 biases.
void write_mlp(std::ostream& out, const Mlp& net) {
  binio::put_magic(out, "MTNN");
  binio::put_u32(out, kMlpFormatVersion);
  binio::put_u32(out, static_cast<std::uint32_t>(net.hidden_activation));
  binio::put_u32(out, static_cast<std::uint32_t>(net.layer_dims.size()));
  for (std::size_t d : net.layer_dims) binio::put_u32(out, static_cast<std::uint32_t>(d));
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    for (double w : net.weights[l]) binio::put_f64(out, w);
    for (double b : net.biases[l]) binio::put_f64(out, b);
  }
}

Mlp read_mlp(std::istream& in) {
  binio::Reader r(in);
  r.expect_magic("MTNN");
  const auto version = r.u32("version");
  if (version != kMlpFormatVersion) {
    throw FormatError("unsupported MTNN version " + std::to_string(version), r.offset() - 4);
  }
  const auto act = r.u32("activation");
  if (act > static_cast<std::uint32_t>(Activation::Identity)) {
    throw FormatError("unknown activation code " + std::to_string(act), r.offset() - 4);
  }
  const auto n_dims = r.u32("layer count");
  if (n_dims < 2 || n_dims > 64) {
    throw FormatError("implausible layer count " + std::to_string(n_dims), r.offset() - 4);
  }
  Mlp net;
  net.hidden_activation = static_cast<Activation>(act);
  for (std::uint32_t i = 0; i < n_dims; ++i) {
    const auto d = r.u32("layer dim");
    if (d == 0 || d > (1u << 20)) throw FormatError("invalid layer dim", r.offset() - 4);
    net.layer_dims.push_back(d);
  }
  for (std::size_t l = 0; l + 1 < net.layer_dims.size(); ++l) {
    std::vector<double> w(net.layer_dims[l] * net.layer_dims[l + 1]);
    for (auto& x : w) x = r.f64("weights");
    std::vector<double> b(net.layer_dims[l + 1]);
    for (auto& x : b) x = r.f64("biases");
    net.weights.push_back(std::move(w));
    net.biases.push_back(std::move(b));
  }
  return net;
}

void save_mlp(const Mlp& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot open " + path.string() + " for writing");
  write_mlp(out, net);
  if (!out) throw InvalidArgument("write failed for " + path.string());
}

Mlp load_mlp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  Mlp net = read_mlp(in);
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes after MTNN payload", static_cast<std::uint64_t>(in.tellg()));
  }
  return net;
}

}  // namespace memtraj
