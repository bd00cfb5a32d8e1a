#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kfacpinn/linalg.hpp"
#include "kfacpinn/network.hpp"
#include "kfacpinn/pde.hpp"
#include "kfacpinn/taylor.hpp"

namespace kfacpinn {

enum class FactorInit { zero, identity };

FactorInit factor_init_from_string(const std::string& name);
std::string to_string(FactorInit init);

/// One Kronecker pair for a linear layer: `a` acts on the bias-augmented
/// input side (h_in + 1), `b` on the output side (h_out).
struct KroneckerFactors {
  DenseMatrix a;
  DenseMatrix b;
};

using LayerFactors = std::vector<KroneckerFactors>;

struct KfacState {
  LayerFactors interior;
  LayerFactors boundary;
  double ema_beta = 0.9;
  double damping = 1e-3;
  FactorInit init = FactorInit::identity;
};

KfacState make_kfac_state(const Architecture& arch, double ema_beta, double damping, FactorInit init);

/// beta * old + (1 - beta) * fresh; beta must lie in [0, 1).
DenseMatrix ema_update(const DenseMatrix& old, const DenseMatrix& fresh, double beta);

/// Fresh interior factors from Taylor states and the column gradients of the
/// residual (seeded with ∂r/∂(u, ∇u, Lu)).
LayerFactors interior_factors(const TaylorState& states, const std::vector<DenseMatrix>& grads);

/// Fresh boundary factors from value-only states (h x N) and their output
/// gradients.
LayerFactors boundary_factors(const std::vector<DenseMatrix>& states, const std::vector<DenseMatrix>& grads);

void interior_factor_update(KfacState& state, const TaylorState& states, const std::vector<DenseMatrix>& grads);
void boundary_factor_update(KfacState& state, const std::vector<DenseMatrix>& states,
                            const std::vector<DenseMatrix>& grads);

/// -(Ã_Ω⊗B̃_Ω + Ã_∂Ω⊗B̃_∂Ω)^{-1} g per layer, in the flat parameter layout.
Vector precondition_gradient(const KfacState& state, const Parameters& grad);

/// Per-sample residual Jacobians, one row per sample in the flat layout.
struct ResidualJacobians {
  DenseMatrix interior;  // N_Ω x D
  DenseMatrix boundary;  // N_∂Ω x D
};

ResidualJacobians residual_jacobians(const PdeProblem& problem, const Parameters& params, const Batch& batch);

inline constexpr std::size_t kDefaultGramianCap = 20000;

/// G = (1/N_Ω) Σ JᵀJ + (1/N_∂Ω) Σ JᵀJ over the flattened parameters.
DenseMatrix exact_gramian(const PdeProblem& problem, const Parameters& params, const Batch& batch,
                          std::size_t cap = kDefaultGramianCap);

/// G v without damping, by one Jacobian-vector and one vector-Jacobian
/// product per loss term. The evaluations must come from `params`.
Vector gramian_vec(const PdeProblem& problem, const Parameters& params, const InteriorEval& interior,
                   const BoundaryEval& boundary, std::span<const double> v);
Vector gramian_vec(const PdeProblem& problem, const Parameters& params, const Batch& batch,
                   std::span<const double> v);

}  // namespace kfacpinn
