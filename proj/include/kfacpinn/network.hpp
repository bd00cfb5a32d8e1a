#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kfacpinn/linalg.hpp"

namespace kfacpinn {

enum class Activation { tanh };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation act);

/// Layer widths h(0) = d, ..., h(L) = 1. Every linear layer except the last
/// is followed by the activation.
struct Architecture {
  std::vector<std::size_t> widths;
  Activation activation = Activation::tanh;

  void validate() const;
  std::size_t input_dim() const { return widths.front(); }
  std::size_t num_linear() const { return widths.size() - 1; }
  /// Parameters of linear layer k, weight and bias together.
  std::size_t layer_size(std::size_t k) const { return widths[k + 1] * (widths[k] + 1); }
  std::size_t num_params() const;
};

struct LinearLayer {
  DenseMatrix weight;  // h_out x h_in
  Vector bias;         // h_out
};

/// Parameters double as gradient containers of the same shape.
struct Parameters {
  Architecture arch;
  std::vector<LinearLayer> layers;

  std::size_t size() const { return arch.num_params(); }
  bool all_finite() const;
  void check_shapes() const;
};

Parameters zeros_like(const Parameters& p);

Parameters init_params(const Architecture& arch, std::uint64_t seed);

// Flat layout: layer by layer, each layer as vec([W | b]) with the row index
// varying fastest, so entry (i, j) of layer k sits at offset(k) + i + h_out * j
// and the bias occupies the final column j = h_in.
std::size_t layer_offset(const Architecture& arch, std::size_t k);
Vector flatten(const Parameters& p);
void unflatten(std::span<const double> flat, Parameters& p);
/// p + alpha * direction
Parameters add_scaled(const Parameters& p, double alpha, std::span<const double> direction);

/// Element-wise σ, σ', σ'', σ'''.
struct ActivationDerivs {
  Vector s0, s1, s2, s3;
};

ActivationDerivs activation_derivs(std::span<const double> z, Activation act = Activation::tanh);

struct ActivationPoint {
  double s0, s1, s2, s3;
};

/// Derivatives of tanh expressed through its value t = tanh(z).
inline ActivationPoint tanh_from_value(double t) {
  const double s1 = 1.0 - t * t;
  const double s2 = -2.0 * t * s1;
  return {t, s1, s2, -2.0 * s1 * s1 - 2.0 * t * s2};
}

inline ActivationPoint tanh_point(double z) { return tanh_from_value(std::tanh(z)); }

// Network states are indexed along the op sequence: state 0 is the input,
// state 2k+1 the output of linear layer k and state 2k+2 the activation
// output that feeds linear layer k+1.
inline std::size_t linear_input_state(std::size_t k) { return 2 * k; }
inline std::size_t linear_output_state(std::size_t k) { return 2 * k + 1; }
inline std::size_t num_states(const Architecture& arch) { return 2 * arch.num_linear(); }

struct ForwardResult {
  double u = 0.0;
  std::vector<Vector> intermediates;  // one per state
};

ForwardResult forward(const Parameters& p, std::span<const double> x);
double evaluate(const Parameters& p, std::span<const double> x);

/// Batched value-only pass. Inputs are the rows of `points`; state matrices
/// are h x N with one column per sample.
struct BatchForward {
  std::vector<DenseMatrix> states;
  double output(std::size_t n) const { return states.back()(0, n); }
};

BatchForward forward_batch(const Parameters& p, const DenseMatrix& points);

struct BatchBackward {
  std::vector<DenseMatrix> state_grads;  // dOutput/dState per sample, h x N
  Parameters param_grad;                 // Σ_n w_n dOutput_n/dθ
};

/// Reverse pass of forward_batch with unit output seed per sample.
/// `sample_weights` (length N) scales each sample's contribution to
/// param_grad; state_grads are unweighted.
BatchBackward backward_batch(const Parameters& p, const BatchForward& fwd,
                             std::span<const double> sample_weights);

/// Output tangents of forward_batch along the parameter direction `tangent`.
Vector jvp_batch(const Parameters& p, const BatchForward& fwd, const Parameters& tangent);

struct CheckpointMeta {
  std::string problem;
  std::size_t problem_dim = 0;
  double kappa = 0.25;
  std::size_t n_eval_points = 0;
  std::uint64_t seed = 0;
  std::size_t step = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Parameters& p,
                     const CheckpointMeta& meta);
Parameters load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

}  // namespace kfacpinn
