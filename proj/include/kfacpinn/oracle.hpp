#pragma once

// Brute-force references for the engine. Nothing here calls the taylor
// engine's derivative propagation: derivatives come from finite differences
// of plain network evaluations or from closed forms.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kfacpinn/curvature.hpp"
#include "kfacpinn/linalg.hpp"
#include "kfacpinn/network.hpp"
#include "kfacpinn/pde.hpp"
#include "kfacpinn/rng.hpp"

namespace kfacpinn::oracle {

using ScalarFn = std::function<double(std::span<const double>)>;

inline constexpr double kFirstStep = 1e-6;
inline constexpr double kSecondStep = 1e-4;

struct FdSpec {
  double h = kFirstStep;
};

/// Central differences per coordinate.
Vector fd_gradient(const ScalarFn& f, std::span<const double> x, FdSpec spec = {kFirstStep});

/// Σ c_ij ∂²f/∂x_i∂x_j with the 3-point diagonal and 4-point mixed stencils.
double fd_operator(const ScalarFn& f, std::span<const double> x, const DenseMatrix& c,
                   FdSpec spec = {kSecondStep});

/// Value, gradient and operator of f at x by fourth-order stencils.
struct Jet {
  double u = 0.0;
  Vector grad;
  double op = 0.0;
};

Jet fd_jet(const ScalarFn& f, std::span<const double> x, const DenseMatrix& c, double h = 1e-2);

/// ∂r/∂θ at one point in the flat parameter layout. Interior residuals use
/// fd_jet of the network; boundary residuals are u_θ(x) - g(x).
Vector fd_residual_jacobian(const PdeProblem& problem, const Parameters& params, std::span<const double> point,
                            bool boundary, double h = 1e-3);

/// Closed-form (u*, ∇u*, Lu*) of the catalog solution.
Jet true_solution_jet(const PdeProblem& problem, std::span<const double> x);

/// Gaussian elimination with partial pivoting.
Vector dense_solve(DenseMatrix a, Vector b);

/// (A1⊗B1 + A2⊗B2)^{-1} g by building the full matrix.
Vector dense_kron_sum_solve(const DenseMatrix& a1, const DenseMatrix& b1, const DenseMatrix& a2,
                            const DenseMatrix& b2, std::span<const double> g);

/// Factor formulas evaluated with explicit per-sample, per-column loops.
LayerFactors interior_factors_literal(const TaylorState& states, const std::vector<DenseMatrix>& grads);
LayerFactors boundary_factors_literal(const std::vector<DenseMatrix>& states, const std::vector<DenseMatrix>& grads);

/// Plain nested-loop MLP evaluation, independent of the network module.
double scalar_forward(const Parameters& params, std::span<const double> x);

// Random generators for property checks.
DenseMatrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0);
DenseMatrix random_symmetric(std::size_t n, Rng& rng);
/// B Bᵀ + shift I
DenseMatrix random_spd(std::size_t n, Rng& rng, double shift = 0.1);
/// Sum of `rank` random outer products.
DenseMatrix random_psd(std::size_t n, std::size_t rank, Rng& rng);
Vector random_vector(std::size_t n, Rng& rng, double scale = 1.0);
/// Uniform points in the problem's domain box.
DenseMatrix random_points(const PdeProblem& problem, std::size_t n, Rng& rng);

/// |a - b| / max(1, |b|)
inline double rel_err(double a, double ref) {
  const double den = ref < 0 ? -ref : ref;
  const double diff = a - ref;
  return (diff < 0 ? -diff : diff) / (den > 1.0 ? den : 1.0);
}

/// max_i |a_i - b_i| / max(1, max_i |b_i|)
double rel_err(std::span<const double> a, std::span<const double> ref);

}  // namespace kfacpinn::oracle
