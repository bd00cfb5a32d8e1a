#include "kfacpinn/checks.hpp"

#include <cmath>
#include <cstdio>
#include <exception>

#include "kfacpinn/curvature.hpp"
#include "kfacpinn/linalg.hpp"
#include "kfacpinn/optim.hpp"
#include "kfacpinn/oracle.hpp"
#include "kfacpinn/pde.hpp"
#include "kfacpinn/rng.hpp"
#include "kfacpinn/taylor.hpp"

namespace kfacpinn {

namespace {

using oracle::rel_err;

std::string fmt(const char* label, double v) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%s=%.3g", label, v);
  return buf;
}

CheckResult sym_eig_check() {
  Rng rng(1, StreamTag::test);
  double worst = 0.0;
  for (std::size_t n : {1, 5, 17, 40}) {
    const DenseMatrix m = oracle::random_symmetric(n, rng);
    const SymEig e = sym_eig(m);
    DenseMatrix scaled = e.eigenvectors;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) scaled(i, j) *= e.eigenvalues[j];
    worst = std::max(worst, (matmul_nt(scaled, e.eigenvectors) - m).max_abs() / std::max(1.0, m.max_abs()));
    worst = std::max(worst, (matmul_tn(e.eigenvectors, e.eigenvectors) - DenseMatrix::identity(n)).max_abs());
  }
  return {"linalg.sym_eig_reconstruction", worst <= 1e-10, fmt("max_err", worst)};
}

CheckResult kron_sum_check() {
  Rng rng(2, StreamTag::test);
  double worst = 0.0;
  for (std::size_t p = 1; p <= 5; ++p)
    for (std::size_t q = 1; q <= 5; q += 2) {
      const DenseMatrix a1 = oracle::random_spd(p, rng), a2 = oracle::random_spd(p, rng);
      const DenseMatrix b1 = oracle::random_spd(q, rng), b2 = oracle::random_spd(q, rng);
      const Vector g = oracle::random_vector(p * q, rng);
      worst = std::max(worst, rel_err(kron_sum_solve(a1, b1, a2, b2, g), oracle::dense_kron_sum_solve(a1, b1, a2, b2, g)));
    }
  return {"linalg.kron_sum_solve_vs_dense", worst <= 1e-8, fmt("rel_err", worst)};
}

CheckResult pinv_check() {
  Rng rng(3, StreamTag::test);
  const DenseMatrix m = oracle::random_psd(8, 3, rng);
  const DenseMatrix p = pinv(m, 1e-10);
  const double e1 = (matmul(matmul(m, p), m) - m).max_abs();
  const double e2 = (matmul(matmul(p, m), p) - p).max_abs() / std::max(1.0, p.max_abs());
  const double worst = std::max(e1, e2);
  return {"linalg.pinv_penrose", worst <= 1e-8, fmt("max_err", worst)};
}

CheckResult tanh_identity_check() {
  Rng rng(4, StreamTag::test);
  const Vector z = oracle::random_vector(200, rng, 5.0);
  const ActivationDerivs d = activation_derivs(z);
  double worst = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    worst = std::max(worst, std::abs(d.s1[i] - (1.0 - d.s0[i] * d.s0[i])));
    worst = std::max(worst, std::abs(d.s2[i] + 2.0 * d.s0[i] * d.s1[i]));
    worst = std::max(worst, std::abs(d.s3[i] - (-2.0 * d.s1[i] * d.s1[i] - 2.0 * d.s0[i] * d.s2[i])));
  }
  return {"network.tanh_identities", worst <= 1e-12, fmt("max_err", worst)};
}

CheckResult forward_engine_check() {
  Rng rng(5, StreamTag::test);
  const Parameters p = init_params({{4, 16, 16, 1}}, 11);
  DenseMatrix c = oracle::random_symmetric(4, rng);
  const OperatorCoeffs coeffs(c);
  DenseMatrix pts = oracle::random_matrix(10, 4, rng);
  const TaylorForward f = taylor_forward(p, pts, coeffs);
  double grad_err = 0.0, op_err = 0.0, value_err = 0.0;
  for (std::size_t n = 0; n < pts.rows(); ++n) {
    std::span<const double> x(pts.row(n), 4);
    auto fn = [&](std::span<const double> y) { return oracle::scalar_forward(p, y); };
    grad_err = std::max(grad_err, rel_err(std::span<const double>(f.out.grad.row(n), 4), oracle::fd_gradient(fn, x)));
    op_err = std::max(op_err, rel_err(f.out.op[n], oracle::fd_operator(fn, x, c)));
    value_err = std::max(value_err, std::abs(f.out.u[n] - evaluate(p, x)));
  }
  const bool ok = grad_err <= 1e-8 && op_err <= 1e-6 && value_err <= 1e-12;
  return {"taylor.forward_vs_fd", ok, fmt("grad", grad_err) + " " + fmt("op", op_err) + " " + fmt("value", value_err)};
}

CheckResult backward_engine_check() {
  const PdeProblem prob = make_problem("poisson2d_sin");
  const Parameters p = init_params({{2, 8, 1}}, 12);
  const Batch b = sample_batch(prob, 6, 4, 12);
  const LossGradient lg = loss_and_gradient(prob, p, b);
  const Vector g = flatten(lg.grad);
  Vector theta = flatten(p);
  Parameters q = p;
  double worst = 0.0;
  const double h = 1e-3;
  for (std::size_t k = 0; k < theta.size(); ++k) {
    double acc = 0.0;
    const double off[4] = {-2, -1, 1, 2}, w[4] = {1.0 / 12, -8.0 / 12, 8.0 / 12, -1.0 / 12};
    const double t0 = theta[k];
    for (int a = 0; a < 4; ++a) {
      theta[k] = t0 + off[a] * h;
      unflatten(theta, q);
      acc += w[a] * batch_loss(prob, q, b).total();
    }
    theta[k] = t0;
    worst = std::max(worst, rel_err(g[k], acc / h));
  }
  return {"taylor.loss_gradient_vs_fd", worst <= 1e-5, fmt("rel_err", worst)};
}

CheckResult residual_jacobian_check() {
  const PdeProblem prob = make_problem("heat", {1, 0.25});
  const Parameters p = init_params({{2, 6, 1}}, 13);
  const Batch b = sample_batch(prob, 3, 3, 13);
  const ResidualJacobians j = residual_jacobians(prob, p, b);
  double worst = 0.0;
  for (std::size_t n = 0; n < 3; ++n) {
    worst = std::max(worst, rel_err(std::span<const double>(j.interior.row(n), p.size()),
                                     oracle::fd_residual_jacobian(prob, p, {b.interior.row(n), 2}, false)));
    worst = std::max(worst, rel_err(std::span<const double>(j.boundary.row(n), p.size()),
                                     oracle::fd_residual_jacobian(prob, p, {b.boundary.row(n), 2}, true)));
  }
  return {"curvature.residual_jacobian_vs_fd", worst <= 1e-5, fmt("rel_err", worst)};
}

CheckResult gramian_check() {
  const PdeProblem prob = make_problem("poisson2d_sin");
  const Parameters p = init_params({{2, 5, 1}}, 14);
  const Batch b = sample_batch(prob, 7, 5, 14);
  const DenseMatrix g = exact_gramian(prob, p, b);
  const SymEig e = sym_eig(g);
  const double min_eig = e.eigenvalues.front() / std::max(1.0, g.max_abs());
  double col_err = 0.0;
  const InteriorEval ie = interior_loss_and_residuals(prob, p, b);
  const BoundaryEval be = boundary_loss(prob, p, b);
  for (std::size_t k = 0; k < p.size(); ++k) {
    Vector ek(p.size(), 0.0);
    ek[k] = 1.0;
    const Vector col = gramian_vec(prob, p, ie, be, ek);
    Vector ref(p.size());
    for (std::size_t r = 0; r < p.size(); ++r) ref[r] = g(r, k);
    col_err = std::max(col_err, rel_err(col, ref));
  }
  const bool ok = asymmetry(g) == 0.0 && min_eig >= -1e-10 && col_err <= 1e-10;
  return {"curvature.gramian_psd_and_columns", ok, fmt("min_eig", min_eig) + " " + fmt("col_err", col_err)};
}

CheckResult factor_transcription_check() {
  const PdeProblem prob = make_problem("poisson2d_sin");
  const Parameters p = init_params({{2, 4, 1}}, 15);
  const Batch b = sample_batch(prob, 3, 3, 15);
  const InteriorEval ie = interior_loss_and_residuals(prob, p, b);
  const TaylorGrads tg = taylor_backward(p, ie.fwd.states, ie.jac, prob.coeffs);
  const LayerFactors fast = interior_factors(ie.fwd.states, tg.state_grads);
  const LayerFactors slow = oracle::interior_factors_literal(ie.fwd.states, tg.state_grads);
  const BoundaryEval be = boundary_loss(prob, p, b);
  const BatchBackward bb = backward_batch(p, be.fwd, Vector(3, 1.0));
  const LayerFactors fast_b = boundary_factors(be.fwd.states, bb.state_grads);
  const LayerFactors slow_b = oracle::boundary_factors_literal(be.fwd.states, bb.state_grads);
  double worst = 0.0;
  for (std::size_t l = 0; l < fast.size(); ++l) {
    worst = std::max({worst, (fast[l].a - slow[l].a).max_abs(), (fast[l].b - slow[l].b).max_abs()});
    worst = std::max({worst, (fast_b[l].a - slow_b[l].a).max_abs(), (fast_b[l].b - slow_b[l].b).max_abs()});
  }
  return {"curvature.factor_transcription", worst <= 1e-12, fmt("max_err", worst)};
}

CheckResult true_solution_check() {
  Rng rng(6, StreamTag::test);
  double worst = 0.0;
  const std::vector<std::pair<std::string, ProblemParams>> cases{
      {"poisson2d_sin", {}}, {"poisson_cos_sum", {}}, {"poisson_harmonic_mixed", {}}, {"poisson_norm2", {}},
      {"heat", {1, 0.25}},   {"heat", {4, 0.25}},     {"log_fokker_planck", {}}};
  for (const auto& [name, params] : cases) {
    const PdeProblem prob = make_problem(name, params);
    const DenseMatrix pts = oracle::random_points(prob, 20, rng);
    for (std::size_t n = 0; n < pts.rows(); ++n) {
      std::span<const double> x(pts.row(n), prob.dim);
      const oracle::Jet j = oracle::true_solution_jet(prob, x);
      worst = std::max(worst, std::abs(prob.residual(x, j.u, j.grad, j.op)));
    }
  }
  return {"pde.true_solution_residuals", worst <= 1e-10, fmt("max_abs", worst)};
}

CheckResult kfac_star_check() {
  Rng rng(7, StreamTag::test);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const DenseMatrix g = oracle::random_psd(6, 4, rng);
    const Vector delta = oracle::random_vector(6, rng), prev = oracle::random_vector(6, rng);
    const Vector grad = oracle::random_vector(6, rng);
    const KfacStarModel m = kfac_star_model(delta, prev, grad, matvec(g, delta), matvec(g, prev), 1e-3);
    const KfacStarSolution s = solve_kfac_star(m, true);
    const double best = m.value(s.alpha, s.mu);
    for (int i = 0; i <= 40; ++i)
      for (int k = 0; k <= 40; ++k)
        worst = std::max(worst, best - m.value(-2.0 + 0.1 * i, -2.0 + 0.1 * k));
  }
  return {"optim.kfac_star_model_optimal", worst <= 1e-10, fmt("worst_margin", worst)};
}

CheckResult line_search_check() {
  auto loss = [](std::span<const double> t) { return 0.5 * (t[0] - 1.0) * (t[0] - 1.0); };
  const Vector theta{0.0}, dir{1.0}, zero{0.0};
  const LineSearchResult a = line_search(loss, theta, dir);
  const LineSearchResult b = line_search(loss, theta, zero);
  const bool ok = a.alpha == 1.0 && b.alpha == std::ldexp(1.0, -30);
  return {"optim.line_search_grid", ok, fmt("alpha", a.alpha)};
}

}  // namespace

std::vector<CheckResult> run_checks(const CheckCallback& on_result) {
  using Fn = CheckResult (*)();
  const std::pair<const char*, Fn> checks[] = {
      {"linalg.sym_eig_reconstruction", sym_eig_check},
      {"linalg.kron_sum_solve_vs_dense", kron_sum_check},
      {"linalg.pinv_penrose", pinv_check},
      {"network.tanh_identities", tanh_identity_check},
      {"taylor.forward_vs_fd", forward_engine_check},
      {"taylor.loss_gradient_vs_fd", backward_engine_check},
      {"curvature.residual_jacobian_vs_fd", residual_jacobian_check},
      {"curvature.gramian_psd_and_columns", gramian_check},
      {"curvature.factor_transcription", factor_transcription_check},
      {"pde.true_solution_residuals", true_solution_check},
      {"optim.kfac_star_model_optimal", kfac_star_check},
      {"optim.line_search_grid", line_search_check},
  };
  std::vector<CheckResult> results;
  for (const auto& [name, fn] : checks) {
    CheckResult r;
    try {
      r = fn();
    } catch (const std::exception& e) {
      r = {name, false, std::string("exception: ") + e.what()};
    }
    results.push_back(r);
    if (on_result) on_result(r);
  }
  return results;
}

}  // namespace kfacpinn
