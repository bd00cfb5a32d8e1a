#include "kfacpinn/curvature.hpp"

#include "kfacpinn/error.hpp"

namespace kfacpinn {

FactorInit factor_init_from_string(const std::string& name) {
  if (name == "zero") return FactorInit::zero;
  if (name == "identity") return FactorInit::identity;
  fail(ErrorCode::invalid_argument, "unknown factor init '" + name + "'");
}

std::string to_string(FactorInit init) { return init == FactorInit::zero ? "zero" : "identity"; }

namespace {

DenseMatrix initial_factor(std::size_t n, FactorInit init) {
  return init == FactorInit::identity ? DenseMatrix::identity(n) : DenseMatrix(n, n);
}

void check_beta(double beta) {
  require(beta >= 0.0 && beta < 1.0, ErrorCode::invalid_argument, "EMA factor must lie in [0, 1)");
}

// [Z Zᵀ, Z m; (Z m)ᵀ, Σm] / norm, where m marks the columns that carry the
// bias (augmented entry 1).
DenseMatrix augmented_gram(const DenseMatrix& z, std::size_t stride, double norm) {
  const std::size_t h = z.rows();
  DenseMatrix zz = matmul_nt(z, z);
  DenseMatrix a(h + 1, h + 1);
  const std::size_t n = z.cols() / stride;
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < h; ++j) a(i, j) = zz(i, j) / norm;
    const double* zi = z.row(i);
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += zi[k * stride];
    a(i, h) = s / norm;
    a(h, i) = s / norm;
  }
  a(h, h) = static_cast<double>(n) / norm;
  return a;
}

void check_layer_inputs(const std::vector<DenseMatrix>& states, const std::vector<DenseMatrix>& grads) {
  require(states.size() == grads.size() && states.size() % 2 == 0, ErrorCode::dimension,
          "factor update: state and gradient lists do not match");
  for (std::size_t l = 0; l < states.size() / 2; ++l)
    require(states[linear_input_state(l)].cols() == grads[linear_output_state(l)].cols(), ErrorCode::dimension,
            "factor update: column count mismatch");
}

void apply_ema(LayerFactors& target, const LayerFactors& fresh, double beta) {
  require(target.size() == fresh.size(), ErrorCode::dimension, "factor update: layer count mismatch");
  for (std::size_t l = 0; l < target.size(); ++l) {
    target[l].a = ema_update(target[l].a, fresh[l].a, beta);
    target[l].b = ema_update(target[l].b, fresh[l].b, beta);
  }
}

void add_ridge(DenseMatrix& m, double lambda) {
  for (std::size_t i = 0; i < m.rows(); ++i) m(i, i) += lambda;
}

}  // namespace

KfacState make_kfac_state(const Architecture& arch, double ema_beta, double damping, FactorInit init) {
  arch.validate();
  check_beta(ema_beta);
  require(damping > 0.0, ErrorCode::invalid_argument, "KFAC damping must be positive");
  KfacState s;
  s.ema_beta = ema_beta;
  s.damping = damping;
  s.init = init;
  for (std::size_t l = 0; l < arch.num_linear(); ++l) {
    KroneckerFactors f{initial_factor(arch.widths[l] + 1, init), initial_factor(arch.widths[l + 1], init)};
    s.interior.push_back(f);
    s.boundary.push_back(std::move(f));
  }
  return s;
}

DenseMatrix ema_update(const DenseMatrix& old, const DenseMatrix& fresh, double beta) {
  check_beta(beta);
  require(old.rows() == fresh.rows() && old.cols() == fresh.cols(), ErrorCode::dimension,
          "ema_update: shape mismatch");
  DenseMatrix out = fresh;
  out *= 1.0 - beta;
  if (beta != 0.0) out += beta * old;
  return out;
}

LayerFactors interior_factors(const TaylorState& states, const std::vector<DenseMatrix>& grads) {
  check_layer_inputs(states.layers, grads);
  const std::size_t n = states.num_samples;
  const std::size_t s = states.columns_per_sample();
  require(n > 0, ErrorCode::invalid_argument, "interior factors need at least one sample");
  LayerFactors out;
  for (std::size_t l = 0; l < states.layers.size() / 2; ++l) {
    const DenseMatrix& z = states.layers[linear_input_state(l)];
    const DenseMatrix& g = grads[linear_output_state(l)];
    DenseMatrix b = matmul_nt(g, g);
    b *= 1.0 / static_cast<double>(n);
    out.push_back({augmented_gram(z, s, static_cast<double>(n * s)), std::move(b)});
  }
  return out;
}

LayerFactors boundary_factors(const std::vector<DenseMatrix>& states, const std::vector<DenseMatrix>& grads) {
  check_layer_inputs(states, grads);
  const std::size_t n = states.front().cols();
  require(n > 0, ErrorCode::invalid_argument, "boundary factors need at least one sample");
  LayerFactors out;
  for (std::size_t l = 0; l < states.size() / 2; ++l) {
    const DenseMatrix& g = grads[linear_output_state(l)];
    DenseMatrix b = matmul_nt(g, g);
    b *= 1.0 / static_cast<double>(n);
    out.push_back({augmented_gram(states[linear_input_state(l)], 1, static_cast<double>(n)), std::move(b)});
  }
  return out;
}

void interior_factor_update(KfacState& state, const TaylorState& states, const std::vector<DenseMatrix>& grads) {
  apply_ema(state.interior, interior_factors(states, grads), state.ema_beta);
}

void boundary_factor_update(KfacState& state, const std::vector<DenseMatrix>& states,
                            const std::vector<DenseMatrix>& grads) {
  apply_ema(state.boundary, boundary_factors(states, grads), state.ema_beta);
}

Vector precondition_gradient(const KfacState& state, const Parameters& grad) {
  grad.check_shapes();
  require(state.interior.size() == grad.layers.size() && state.boundary.size() == grad.layers.size(),
          ErrorCode::dimension, "precondition_gradient: factor count mismatch");
  require(state.damping > 0.0, ErrorCode::invalid_argument, "precondition_gradient: damping must be positive");
  const Vector g = flatten(grad);
  Vector out(g.size());
  for (std::size_t l = 0; l < grad.layers.size(); ++l) {
    const std::size_t off = layer_offset(grad.arch, l);
    const std::size_t len = grad.arch.layer_size(l);
    DenseMatrix ai = state.interior[l].a, bi = state.interior[l].b;
    DenseMatrix ab = state.boundary[l].a, bb = state.boundary[l].b;
    add_ridge(ai, state.damping);
    add_ridge(bi, state.damping);
    add_ridge(ab, state.damping);
    add_ridge(bb, state.damping);
    const Vector v = kron_sum_solve(ai, bi, ab, bb, std::span<const double>(g).subspan(off, len));
    for (std::size_t k = 0; k < len; ++k) out[off + k] = -v[k];
  }
  return out;
}

namespace {

// Writes Σ_s gout_s (zin_s, m_s)ᵀ for the columns [first, first + count) into
// the flat row `jrow` at layer offset `off`; the bias uses only column `first`.
void layer_jacobian_row(const DenseMatrix& gout, const DenseMatrix& zin, std::size_t first, std::size_t count,
                        std::size_t off, double* jrow) {
  const std::size_t ho = gout.rows();
  const std::size_t hi = zin.rows();
  for (std::size_t j = 0; j < hi; ++j) {
    const double* zj = zin.row(j) + first;
    for (std::size_t i = 0; i < ho; ++i) {
      const double* gi = gout.row(i) + first;
      double acc = 0.0;
      for (std::size_t c = 0; c < count; ++c) acc += gi[c] * zj[c];
      jrow[off + i + ho * j] = acc;
    }
  }
  for (std::size_t i = 0; i < ho; ++i) jrow[off + i + ho * hi] = gout(i, first);
}

}  // namespace

ResidualJacobians residual_jacobians(const PdeProblem& problem, const Parameters& params, const Batch& batch) {
  const std::size_t d_params = params.size();
  const std::size_t nl = params.layers.size();
  ResidualJacobians j{DenseMatrix(batch.interior.rows(), d_params), DenseMatrix(batch.boundary.rows(), d_params)};

  if (batch.interior.rows() > 0) {
    const InteriorEval e = interior_loss_and_residuals(problem, params, batch);
    const TaylorGrads g = taylor_backward(params, e.fwd.states, e.jac, problem.coeffs);
    const std::size_t s = e.fwd.states.columns_per_sample();
    for (std::size_t n = 0; n < batch.interior.rows(); ++n)
      for (std::size_t l = 0; l < nl; ++l)
        layer_jacobian_row(g.state_grads[linear_output_state(l)], e.fwd.states.layers[linear_input_state(l)],
                           n * s, s, layer_offset(params.arch, l), j.interior.row(n));
  }
  if (batch.boundary.rows() > 0) {
    const BatchForward fwd = forward_batch(params, batch.boundary);
    const Vector ones(batch.boundary.rows(), 1.0);
    const BatchBackward g = backward_batch(params, fwd, ones);
    for (std::size_t n = 0; n < batch.boundary.rows(); ++n)
      for (std::size_t l = 0; l < nl; ++l)
        layer_jacobian_row(g.state_grads[linear_output_state(l)], fwd.states[linear_input_state(l)], n, 1,
                           layer_offset(params.arch, l), j.boundary.row(n));
  }
  return j;
}

DenseMatrix exact_gramian(const PdeProblem& problem, const Parameters& params, const Batch& batch,
                          std::size_t cap) {
  require(params.size() <= cap, ErrorCode::capacity,
          "exact_gramian: " + std::to_string(params.size()) + " parameters exceed the cap of " +
              std::to_string(cap));
  const ResidualJacobians j = residual_jacobians(problem, params, batch);
  DenseMatrix g(params.size(), params.size());
  if (j.interior.rows() > 0) {
    g += matmul_tn(j.interior, j.interior);
    g *= 1.0 / static_cast<double>(j.interior.rows());
  }
  if (j.boundary.rows() > 0) {
    DenseMatrix gb = matmul_tn(j.boundary, j.boundary);
    gb *= 1.0 / static_cast<double>(j.boundary.rows());
    g += gb;
  }
  // Exact symmetry regardless of summation order.
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = r + 1; c < g.cols(); ++c) {
      const double m = 0.5 * (g(r, c) + g(c, r));
      g(r, c) = m;
      g(c, r) = m;
    }
  return g;
}

Vector gramian_vec(const PdeProblem& problem, const Parameters& params, const InteriorEval& interior,
                   const BoundaryEval& boundary, std::span<const double> v) {
  require(v.size() == params.size(), ErrorCode::dimension, "gramian_vec: vector length mismatch");
  Parameters tangent = zeros_like(params);
  unflatten(v, tangent);
  Parameters out = zeros_like(params);

  const std::size_t ni = interior.residuals.size();
  if (ni > 0) {
    const DenseMatrix jvp = taylor_jvp(params, interior.fwd.states, tangent, problem.coeffs);
    DenseMatrix seeds = interior.jac;
    for (std::size_t n = 0; n < ni; ++n) {
      double jv = 0.0;
      for (std::size_t c = 0; c < seeds.cols(); ++c) jv += interior.jac(n, c) * jvp(n, c);
      const double w = jv / static_cast<double>(ni);
      for (std::size_t c = 0; c < seeds.cols(); ++c) seeds(n, c) *= w;
    }
    out = taylor_backward(params, interior.fwd.states, seeds, problem.coeffs).param_grad;
  }
  const std::size_t nb = boundary.residuals.size();
  if (nb > 0) {
    Vector w = jvp_batch(params, boundary.fwd, tangent);
    for (double& x : w) x /= static_cast<double>(nb);
    const Parameters gb = backward_batch(params, boundary.fwd, w).param_grad;
    for (std::size_t l = 0; l < gb.layers.size(); ++l) {
      out.layers[l].weight += gb.layers[l].weight;
      axpy(1.0, gb.layers[l].bias, out.layers[l].bias);
    }
  }
  return flatten(out);
}

Vector gramian_vec(const PdeProblem& problem, const Parameters& params, const Batch& batch,
                   std::span<const double> v) {
  return gramian_vec(problem, params, interior_loss_and_residuals(problem, params, batch),
                     boundary_loss(problem, params, batch), v);
}

}  // namespace kfacpinn
