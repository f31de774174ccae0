#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace memtraj {

enum class Activation : std::uint32_t { ReLU = 0, Tanh = 1, Identity = 2 };

/// Fully connected feed-forward network. Hidden layers use `hidden_activation`;
/// the output layer is always affine (identity activation).
///
/// weights[l] is stored row-major with shape layer_dims[l+1] x layer_dims[l].
struct Mlp {
  std::vector<std::size_t> layer_dims;
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;
  Activation hidden_activation = Activation::ReLU;

  std::size_t num_layers() const { return weights.size(); }
  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }
  std::size_t parameter_count() const;

  friend bool operator==(const Mlp&, const Mlp&) = default;
};

/// Gradients with the same shapes as the owning Mlp, plus the input gradient.
struct GradBundle {
  std::vector<std::vector<double>> d_weights;
  std::vector<std::vector<double>> d_biases;
  std::vector<double> d_input;

  static GradBundle zeros_like(const Mlp& net);
  void add(const GradBundle& other);
  void scale(double factor);
  void set_zero();
};

struct SgdConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  std::uint64_t seed = 0;
};

/// Per-layer values kept from a forward pass so backward can reuse them.
/// activations[0] is the input; activations[l+1] is the output of layer l.
/// pre_activations[l] is the affine output of layer l before its activation.
struct ForwardTrace {
  std::vector<std::vector<double>> activations;
  std::vector<std::vector<double>> pre_activations;

  const std::vector<double>& output() const { return activations.back(); }
};

Mlp mlp_init(std::uint64_t seed, const std::vector<std::size_t>& layer_dims,
             Activation hidden_activation = Activation::ReLU);

std::vector<double> mlp_forward(const Mlp& net, std::span<const double> input);
ForwardTrace mlp_forward_trace(const Mlp& net, std::span<const double> input);

/// Gradient of dot(upstream_grad, mlp_forward(net, input)) with respect to every
/// parameter and the input. ReLU uses a subgradient of 0 at the kink.
GradBundle mlp_backward(const Mlp& net, std::span<const double> input,
                        std::span<const double> upstream_grad);

/// Adds the parameter gradients for one traced sample into `acc` and returns the
/// input gradient. `acc.d_input` is left untouched.
std::vector<double> mlp_backward_accumulate(const Mlp& net, const ForwardTrace& trace,
                                            std::span<const double> upstream_grad,
                                            GradBundle& acc);

/// Plain SGD: p <- p - learning_rate * grad(p). Throws NumericError on a
/// non-finite gradient entry, leaving `net` unmodified.
void sgd_apply(Mlp& net, const GradBundle& grads, double learning_rate);
Mlp sgd_step(Mlp net, const GradBundle& grads, double learning_rate);

/// Compares analytic gradients against central differences of
/// dot(upstream, output). Returns the worst relative error
/// |a - n| / max(1e-8, |a| + |n|) over all parameters and input entries.
double finite_diff_check(const Mlp& net, std::span<const double> input, double eps,
                         std::span<const double> upstream);
/// Same, with a fixed pseudo-random upstream vector in [-1, 1].
double finite_diff_check(const Mlp& net, std::span<const double> input, double eps);

bool all_finite(const Mlp& net);

// "MTNN" little-endian binary format.
inline constexpr std::uint32_t kMlpFormatVersion = 1;
void write_mlp(std::ostream& out, const Mlp& net);
Mlp read_mlp(std::istream& in);
void save_mlp(const Mlp& net, const std::filesystem::path& path);
Mlp load_mlp(const std::filesystem::path& path);

}  // namespace memtraj
