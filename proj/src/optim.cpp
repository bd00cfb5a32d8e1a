#include "kfacpinn/optim.hpp"

#include <cmath>
#include <limits>

#include "kfacpinn/error.hpp"

namespace kfacpinn {

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "kfac") return OptimizerKind::kfac;
  if (name == "kfac_star") return OptimizerKind::kfac_star;
  if (name == "engd") return OptimizerKind::engd;
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  fail(ErrorCode::invalid_argument, "unknown optimizer '" + name + "'");
}

std::string to_string(OptimizerKind kind) {
  switch (kind) {
    case OptimizerKind::kfac: return "kfac";
    case OptimizerKind::kfac_star: return "kfac_star";
    case OptimizerKind::engd: return "engd";
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
  }
  return "unknown";
}

OptimizerConfig OptimizerConfig::defaults(OptimizerKind kind) {
  OptimizerConfig c;
  c.kind = kind;
  if (kind == OptimizerKind::engd) {
    c.ema_beta = 0.0;
    c.damping = 0.0;
    c.init = FactorInit::zero;
  }
  return c;
}

void OptimizerConfig::validate() const {
  require(ema_beta >= 0.0 && ema_beta < 1.0, ErrorCode::invalid_argument, "ema must lie in [0, 1)");
  require(momentum >= 0.0, ErrorCode::invalid_argument, "momentum must be non-negative");
  require(ls_min_exp <= ls_max_exp, ErrorCode::invalid_argument, "empty line-search grid");
  switch (kind) {
    case OptimizerKind::kfac:
    case OptimizerKind::kfac_star:
      require(damping > 0.0, ErrorCode::invalid_argument, "KFAC damping must be positive");
      break;
    case OptimizerKind::engd:
      require(damping >= 0.0, ErrorCode::invalid_argument, "ENGD damping must be non-negative");
      require(rcond > 0.0, ErrorCode::invalid_argument, "rcond must be positive");
      break;
    case OptimizerKind::sgd:
      require(lr > 0.0, ErrorCode::invalid_argument, "lr must be positive");
      break;
    case OptimizerKind::adam:
      require(lr > 0.0, ErrorCode::invalid_argument, "lr must be positive");
      require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
              ErrorCode::invalid_argument, "Adam betas must lie in [0, 1)");
      require(adam_eps > 0.0, ErrorCode::invalid_argument, "Adam eps must be positive");
      break;
  }
}

TrainState make_train_state(Parameters params, const OptimizerConfig& config) {
  config.validate();
  params.check_shapes();
  TrainState s;
  const std::size_t d = params.size();
  s.prev_delta.assign(d, 0.0);
  switch (config.kind) {
    case OptimizerKind::kfac:
    case OptimizerKind::kfac_star:
      s.kfac = make_kfac_state(params.arch, config.ema_beta, config.damping, config.init);
      break;
    case OptimizerKind::engd:
      require(d <= config.gramian_cap, ErrorCode::capacity, "engd: parameter count exceeds the Gramian cap");
      s.gramian = config.init == FactorInit::identity ? DenseMatrix::identity(d) : DenseMatrix(d, d);
      break;
    case OptimizerKind::sgd:
      s.velocity.assign(d, 0.0);
      break;
    case OptimizerKind::adam:
      s.adam_m.assign(d, 0.0);
      s.adam_v.assign(d, 0.0);
      break;
  }
  s.params = std::move(params);
  return s;
}

LineSearchResult line_search(const std::function<double(std::span<const double>)>& loss_fn,
                             std::span<const double> theta, std::span<const double> direction, int min_exp,
                             int max_exp) {
  require(theta.size() == direction.size(), ErrorCode::dimension, "line_search: length mismatch");
  require(min_exp <= max_exp, ErrorCode::invalid_argument, "line_search: empty grid");
  for (double v : direction)
    require(std::isfinite(v), ErrorCode::numerical, "line_search: direction is not finite");
  LineSearchResult best{0.0, std::numeric_limits<double>::infinity()};
  bool found = false;
  Vector trial(theta.size());
  for (int k = min_exp; k <= max_exp; ++k) {
    const double alpha = std::ldexp(1.0, k);
    for (std::size_t i = 0; i < theta.size(); ++i) trial[i] = theta[i] + alpha * direction[i];
    const double loss = loss_fn(trial);
    if (std::isfinite(loss) && (!found || loss < best.loss)) {
      best = {alpha, loss};
      found = true;
    }
  }
  require(found, ErrorCode::line_search_failure, "line search: loss is not finite at any grid point");
  return best;
}

KfacStarSolution solve_kfac_star(const KfacStarModel& m, bool has_prev) {
  if (has_prev) {
    const double det = m.m00 * m.m11 - m.m01 * m.m01;
    const double scale = std::abs(m.m00 * m.m11);
    if (std::isfinite(det) && det > 1e-12 * scale && scale > 0.0) {
      const double alpha = -(m.m11 * m.b0 - m.m01 * m.b1) / det;
      const double mu = -(-m.m01 * m.b0 + m.m00 * m.b1) / det;
      if (std::isfinite(alpha) && std::isfinite(mu)) return {alpha, mu, false};
    }
  }
  if (!(m.m00 > 0.0)) return {0.0, 0.0, true};
  return {-m.b0 / m.m00, 0.0, true};
}

KfacStarModel kfac_star_model(std::span<const double> delta, std::span<const double> prev,
                              std::span<const double> grad, std::span<const double> g_delta,
                              std::span<const double> g_prev, double damping) {
  KfacStarModel m;
  m.m00 = dot(delta, g_delta) + damping * dot(delta, delta);
  m.m01 = dot(delta, g_prev) + damping * dot(delta, prev);
  m.m11 = dot(prev, g_prev) + damping * dot(prev, prev);
  m.b0 = dot(delta, grad);
  m.b1 = dot(prev, grad);
  return m;
}

void sgd_update(std::span<double> theta, std::span<double> velocity, std::span<const double> grad, double lr,
                double momentum) {
  require(theta.size() == grad.size() && velocity.size() == grad.size(), ErrorCode::dimension,
          "sgd_update: length mismatch");
  for (std::size_t i = 0; i < theta.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i];
    theta[i] -= lr * velocity[i];
  }
}

void adam_update(std::span<double> theta, std::span<double> m, std::span<double> v, std::span<const double> grad,
                 std::size_t t, double lr, double beta1, double beta2, double eps) {
  require(theta.size() == grad.size() && m.size() == grad.size() && v.size() == grad.size(), ErrorCode::dimension,
          "adam_update: length mismatch");
  require(t >= 1, ErrorCode::invalid_argument, "adam_update: step count starts at 1");
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
  }
}

namespace {

// Batch loss as a function of flat parameters.
std::function<double(std::span<const double>)> flat_loss(const PdeProblem& problem, const Parameters& like,
                                                          const Batch& batch) {
  return [&problem, &batch, p = like](std::span<const double> theta) mutable {
    unflatten(theta, p);
    return batch_loss(problem, p, batch).total();
  };
}

void update_kfac_factors(TrainState& state, const PdeProblem& problem, const Batch& batch, const LossGradient& lg) {
  if (batch.interior.rows() > 0) {
    const TaylorGrads g = taylor_backward(state.params, lg.interior.fwd.states, lg.interior.jac, problem.coeffs);
    interior_factor_update(state.kfac, lg.interior.fwd.states, g.state_grads);
  }
  if (batch.boundary.rows() > 0) {
    const Vector ones(batch.boundary.rows(), 1.0);
    const BatchBackward g = backward_batch(state.params, lg.boundary.fwd, ones);
    boundary_factor_update(state.kfac, lg.boundary.fwd.states, g.state_grads);
  }
}

void apply_delta(TrainState& state, const Vector& delta) {
  Vector theta = flatten(state.params);
  axpy(1.0, delta, theta);
  unflatten(theta, state.params);
  state.prev_delta = delta;
}

}  // namespace

StepInfo kfac_step(TrainState& state, const OptimizerConfig& config, const PdeProblem& problem, const Batch& batch) {
  const LossGradient lg = loss_and_gradient(problem, state.params, batch);
  update_kfac_factors(state, problem, batch, lg);
  Vector direction = precondition_gradient(state.kfac, lg.grad);
  if (config.momentum != 0.0) axpy(config.momentum, state.prev_delta, direction);

  const Vector theta = flatten(state.params);
  const LineSearchResult ls =
      line_search(flat_loss(problem, state.params, batch), theta, direction, config.ls_min_exp, config.ls_max_exp);
  for (double& x : direction) x *= ls.alpha;
  apply_delta(state, direction);
  return {ls.alpha, config.momentum, lg.loss};
}

StepInfo kfac_star_step(TrainState& state, const OptimizerConfig& config, const PdeProblem& problem,
                        const Batch& batch) {
  (void)config;
  const LossGradient lg = loss_and_gradient(problem, state.params, batch);
  update_kfac_factors(state, problem, batch, lg);
  const Vector delta = precondition_gradient(state.kfac, lg.grad);
  const Vector grad = flatten(lg.grad);

  const bool has_prev = norm2(state.prev_delta) > 0.0;
  const Vector g_delta = gramian_vec(problem, state.params, lg.interior, lg.boundary, delta);
  const Vector g_prev = has_prev ? gramian_vec(problem, state.params, lg.interior, lg.boundary, state.prev_delta)
                                 : Vector(delta.size(), 0.0);
  const KfacStarModel model = kfac_star_model(delta, state.prev_delta, grad, g_delta, g_prev, state.kfac.damping);
  const KfacStarSolution sol = solve_kfac_star(model, has_prev);

  Vector step(delta.size());
  for (std::size_t i = 0; i < step.size(); ++i) step[i] = sol.alpha * delta[i] + sol.mu * state.prev_delta[i];
  apply_delta(state, step);
  return {sol.alpha, sol.mu, lg.loss};
}

StepInfo engd_step(TrainState& state, const OptimizerConfig& config, const PdeProblem& problem, const Batch& batch) {
  const LossGradient lg = loss_and_gradient(problem, state.params, batch);
  const DenseMatrix g = exact_gramian(problem, state.params, batch, config.gramian_cap);
  if (config.ema_beta > 0.0)
    state.gramian = ema_update(state.gramian, g, config.ema_beta);
  else
    state.gramian = g;
  DenseMatrix damped = state.gramian;
  if (config.damping > 0.0)
    for (std::size_t i = 0; i < damped.rows(); ++i) damped(i, i) += config.damping;

  const Vector grad = flatten(lg.grad);
  Vector direction = matvec(pinv(damped, config.rcond), grad);
  for (double& x : direction) x = -x;

  const Vector theta = flatten(state.params);
  const LineSearchResult ls =
      line_search(flat_loss(problem, state.params, batch), theta, direction, config.ls_min_exp, config.ls_max_exp);
  for (double& x : direction) x *= ls.alpha;
  apply_delta(state, direction);
  return {ls.alpha, 0.0, lg.loss};
}

StepInfo sgd_step(TrainState& state, const OptimizerConfig& config, const PdeProblem& problem, const Batch& batch) {
  const LossGradient lg = loss_and_gradient(problem, state.params, batch);
  const Vector grad = flatten(lg.grad);
  Vector theta = flatten(state.params);
  const Vector before = theta;
  sgd_update(theta, state.velocity, grad, config.lr, config.momentum);
  unflatten(theta, state.params);
  for (std::size_t i = 0; i < theta.size(); ++i) state.prev_delta[i] = theta[i] - before[i];
  return {config.lr, config.momentum, lg.loss};
}

StepInfo adam_step(TrainState& state, const OptimizerConfig& config, const PdeProblem& problem, const Batch& batch) {
  const LossGradient lg = loss_and_gradient(problem, state.params, batch);
  const Vector grad = flatten(lg.grad);
  Vector theta = flatten(state.params);
  const Vector before = theta;
  adam_update(theta, state.adam_m, state.adam_v, grad, state.step + 1, config.lr, config.adam_beta1,
              config.adam_beta2, config.adam_eps);
  unflatten(theta, state.params);
  for (std::size_t i = 0; i < theta.size(); ++i) state.prev_delta[i] = theta[i] - before[i];
  return {config.lr, 0.0, lg.loss};
}

StepInfo optimizer_step(TrainState& state, const OptimizerConfig& config, const PdeProblem& problem,
                        const Batch& batch) {
  StepInfo info;
  switch (config.kind) {
    case OptimizerKind::kfac: info = kfac_step(state, config, problem, batch); break;
    case OptimizerKind::kfac_star: info = kfac_star_step(state, config, problem, batch); break;
    case OptimizerKind::engd: info = engd_step(state, config, problem, batch); break;
    case OptimizerKind::sgd: info = sgd_step(state, config, problem, batch); break;
    case OptimizerKind::adam: info = adam_step(state, config, problem, batch); break;
  }
  ++state.step;
  require(state.params.all_finite(), ErrorCode::numerical, "optimizer produced non-finite parameters");
  return info;
}

}  // namespace kfacpinn
