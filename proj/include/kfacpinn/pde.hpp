#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kfacpinn/linalg.hpp"
#include "kfacpinn/network.hpp"
#include "kfacpinn/taylor.hpp"

namespace kfacpinn {

enum class ProblemKind {
  poisson2d_sin,
  poisson_cos_sum,
  poisson_harmonic_mixed,
  poisson_norm2,
  heat,
  log_fokker_planck,
};

/// How condition points are placed.
enum class BoundaryKind {
  faces,    // every face of the box
  heat,     // half on t = 0, half on [t0, t1] x spatial faces
  initial,  // t = 0 slice only
};

/// `dim` is the spatial dimension (0 selects the catalog default). Time is an
/// extra leading input coordinate for heat and log_fokker_planck.
struct ProblemParams {
  std::size_t dim = 0;
  double kappa = 0.25;
};

struct PdeProblem {
  ProblemKind kind{};
  std::string name;
  std::size_t dim = 0;          // network input dimension
  std::size_t spatial_dim = 0;  // excludes time
  double kappa = 0.25;
  OperatorCoeffs coeffs;
  Vector lo, hi;  // axis-aligned domain box
  BoundaryKind boundary = BoundaryKind::faces;

  bool time_dependent() const { return kind == ProblemKind::heat || kind == ProblemKind::log_fokker_planck; }

  double residual(std::span<const double> x, double u, std::span<const double> grad, double op) const;
  /// ∂r/∂(u, ∇u, Lu) written to `out` (length dim + 2).
  void residual_jacobian(std::span<const double> x, double u, std::span<const double> grad, double op,
                         std::span<double> out) const;
  double boundary_target(std::span<const double> x) const { return true_solution(x); }
  double true_solution(std::span<const double> x) const;
};

PdeProblem make_problem(const std::string& name, const ProblemParams& params = {});

/// Names accepted by make_problem.
const std::vector<std::string>& problem_names();

struct Batch {
  DenseMatrix interior;  // N_Ω x d
  DenseMatrix boundary;  // N_∂Ω x d
  Vector targets;        // N_∂Ω
};

/// Draws a batch from the interior/boundary sub-streams of `seed`; `index`
/// distinguishes successive batches of one run.
Batch sample_batch(const PdeProblem& problem, std::size_t n_interior, std::size_t n_boundary,
                   std::uint64_t seed, std::uint64_t index = 0);

/// Uniform interior points from the eval sub-stream.
DenseMatrix sample_eval_points(const PdeProblem& problem, std::size_t n, std::uint64_t seed);

struct InteriorEval {
  double loss = 0.0;
  Vector residuals;
  TaylorForward fwd;
  DenseMatrix jac;  // N x S rows of ∂r_n/∂(u, ∇u, Lu)
};

InteriorEval interior_loss_and_residuals(const PdeProblem& problem, const Parameters& params,
                                         const Batch& batch);

struct BoundaryEval {
  double loss = 0.0;
  Vector residuals;
  BatchForward fwd;
};

BoundaryEval boundary_loss(const PdeProblem& problem, const Parameters& params, const Batch& batch);

struct LossParts {
  double interior = 0.0;
  double boundary = 0.0;
  double total() const { return interior + boundary; }
};

/// Loss only, without retaining intermediates.
LossParts batch_loss(const PdeProblem& problem, const Parameters& params, const Batch& batch);

struct LossGradient {
  LossParts loss;
  Parameters grad;
  InteriorEval interior;
  BoundaryEval boundary;
};

LossGradient loss_and_gradient(const PdeProblem& problem, const Parameters& params, const Batch& batch);

/// ‖pred − ref‖₂ / ‖ref‖₂
double relative_l2(std::span<const double> pred, std::span<const double> ref);

/// Relative L2 error against the true solution on `points`.
double relative_l2(const Parameters& params, const PdeProblem& problem, const DenseMatrix& points);

}  // namespace kfacpinn
