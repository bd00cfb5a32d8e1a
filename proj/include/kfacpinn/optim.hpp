#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "kfacpinn/curvature.hpp"
#include "kfacpinn/linalg.hpp"
#include "kfacpinn/network.hpp"
#include "kfacpinn/pde.hpp"

namespace kfacpinn {

enum class OptimizerKind { kfac, kfac_star, engd, sgd, adam };

OptimizerKind optimizer_from_string(const std::string& name);
std::string to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kfac;
  double lr = 1e-3;          // sgd, adam
  double momentum = 0.0;     // kfac, sgd
  double ema_beta = 0.9;     // kfac, kfac_star; Gramian EMA for engd
  double damping = 1e-3;     // kfac, kfac_star; ridge on the Gramian for engd
  FactorInit init = FactorInit::identity;
  int ls_min_exp = -30;
  int ls_max_exp = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double rcond = 1e-10;
  std::size_t gramian_cap = kDefaultGramianCap;

  /// Defaults for `kind`: engd starts without EMA or damping.
  static OptimizerConfig defaults(OptimizerKind kind);
  void validate() const;
};

struct TrainState {
  Parameters params;
  std::size_t step = 0;
  Vector prev_delta;  // δ_{t-1}, zero at t = 0
  KfacState kfac;
  Vector adam_m, adam_v;
  Vector velocity;
  DenseMatrix gramian;  // engd EMA history
};

TrainState make_train_state(Parameters params, const OptimizerConfig& config);

struct StepInfo {
  double alpha = 0.0;
  double mu = 0.0;
  LossParts loss_before;
};

struct LineSearchResult {
  double alpha = 0.0;
  double loss = 0.0;
};

/// Scans α = 2^k for k = min_exp..max_exp and returns the grid argmin of
/// loss_fn(θ + α δ̂); ties go to the smaller α.
LineSearchResult line_search(const std::function<double(std::span<const double>)>& loss_fn,
                             std::span<const double> theta, std::span<const double> direction,
                             int min_exp = -30, int max_exp = 0);

/// Quadratic model m(α, μ) = ½ [α μ] M [α μ]ᵀ + bᵀ[α μ] for δ = αΔ + μδ_prev.
struct KfacStarModel {
  double m00 = 0.0, m01 = 0.0, m11 = 0.0;
  double b0 = 0.0, b1 = 0.0;

  double value(double alpha, double mu) const {
    return 0.5 * (m00 * alpha * alpha + 2.0 * m01 * alpha * mu + m11 * mu * mu) + b0 * alpha + b1 * mu;
  }
};

struct KfacStarSolution {
  double alpha = 0.0;
  double mu = 0.0;
  bool reduced = false;  // α-only solve taken
};

/// Minimizer of the model; `has_prev` = false or a singular M selects the
/// α-only solve with μ = 0.
KfacStarSolution solve_kfac_star(const KfacStarModel& model, bool has_prev);

/// Builds the model from Δ, δ_prev, the gradient and the Gramian products.
KfacStarModel kfac_star_model(std::span<const double> delta, std::span<const double> prev,
                              std::span<const double> grad, std::span<const double> g_delta,
                              std::span<const double> g_prev, double damping);

/// Textbook updates on flat vectors.
void sgd_update(std::span<double> theta, std::span<double> velocity, std::span<const double> grad, double lr,
                double momentum);
void adam_update(std::span<double> theta, std::span<double> m, std::span<double> v, std::span<const double> grad,
                 std::size_t t, double lr, double beta1, double beta2, double eps);

StepInfo kfac_step(TrainState& state, const OptimizerConfig& config, const PdeProblem& problem, const Batch& batch);
StepInfo kfac_star_step(TrainState& state, const OptimizerConfig& config, const PdeProblem& problem,
                        const Batch& batch);
StepInfo engd_step(TrainState& state, const OptimizerConfig& config, const PdeProblem& problem, const Batch& batch);
StepInfo sgd_step(TrainState& state, const OptimizerConfig& config, const PdeProblem& problem, const Batch& batch);
StepInfo adam_step(TrainState& state, const OptimizerConfig& config, const PdeProblem& problem, const Batch& batch);

/// Dispatches on config.kind; raises a numerical error if the new
/// parameters are not finite.
StepInfo optimizer_step(TrainState& state, const OptimizerConfig& config, const PdeProblem& problem,
                        const Batch& batch);

}  // namespace kfacpinn
