#include <cmath>
#include <numbers>

#include "doctest.h"
#include "kfacpinn/oracle.hpp"
#include "kfacpinn/pde.hpp"
#include "test_util.hpp"

using namespace kfacpinn;
using std::numbers::pi;
using testutil::expect_code;
using testutil::row_of;

namespace {

Parameters linear_net(std::size_t d, std::initializer_list<double> w, double b = 0.0) {
  Parameters p = zeros_like(init_params(Architecture{{d, 1}}, 0));
  std::size_t i = 0;
  for (double v : w) p.layers[0].weight(0, i++) = v;
  p.layers[0].bias[0] = b;
  return p;
}

bool on_box_boundary(const PdeProblem& pr, std::span<const double> x, std::size_t first_axis) {
  for (std::size_t i = first_axis; i < pr.dim; ++i)
    if (x[i] == pr.lo[i] || x[i] == pr.hi[i]) return true;
  return false;
}

}  // namespace

TEST_SUITE("pde") {

TEST_CASE("catalog dimensions and validation") {
  CHECK(make_problem("poisson2d_sin").dim == 2);
  CHECK(make_problem("poisson_cos_sum").dim == 5);
  CHECK(make_problem("poisson_harmonic_mixed").dim == 10);
  CHECK(make_problem("poisson_norm2").dim == 100);
  CHECK(make_problem("heat").dim == 2);
  CHECK(make_problem("heat", {4, 0.25}).dim == 5);
  const PdeProblem fp = make_problem("log_fokker_planck");
  CHECK(fp.dim == 10);
  CHECK(fp.lo[1] == -5.0);
  CHECK(fp.hi[1] == 5.0);
  CHECK(problem_names().size() == 6);

  expect_code(ErrorCode::invalid_argument, [] { make_problem("wave"); });
  expect_code(ErrorCode::invalid_argument, [] { make_problem("poisson_harmonic_mixed", {3}); });
  expect_code(ErrorCode::invalid_argument, [] { make_problem("heat", {1, 0.5}); });
}

TEST_CASE("poisson2d_sin source at the center") {
  const PdeProblem pr = make_problem("poisson2d_sin");
  const double x[] = {0.5, 0.5}, g[] = {0.0, 0.0};
  CHECK(-pr.residual(x, 0.0, g, 0.0) == doctest::Approx(19.7392088022).epsilon(1e-10));
}

TEST_CASE("heat residual vanishes on the analytic solution") {
  const PdeProblem pr = make_problem("heat", {1, 0.25});
  Rng rng(30, StreamTag::test);
  for (int k = 0; k < 20; ++k) {
    const double t = rng.uniform(), x = rng.uniform();
    const double e = std::exp(-pi * pi * t / 4);
    const double u = e * std::sin(pi * x);
    const double pt[] = {t, x};
    const double grad[] = {-pi * pi / 4 * u, pi * e * std::cos(pi * x)};
    CHECK(std::abs(pr.residual(pt, u, grad, -pi * pi * u)) <= 1e-10);
  }
}

TEST_CASE("poisson_norm2 residual of the exact operator") {
  const PdeProblem pr = make_problem("poisson_norm2", {7});
  const Vector x(7, 0.3), g(7, 0.6);
  CHECK(pr.residual(x, 0.63, g, 14.0) == 0.0);
}

TEST_CASE("closed-form jets agree with finite differences and zero the residual") {
  Rng rng(31, StreamTag::test);
  for (const std::string& name : problem_names()) {
    for (std::size_t dim : {std::size_t{0}, std::size_t{4}}) {
      if (dim == 4 && (name == "poisson_norm2" || name == "poisson2d_sin")) continue;
      const PdeProblem pr = make_problem(name, {dim, 0.25});
      const oracle::ScalarFn u = [&](std::span<const double> x) { return pr.true_solution(x); };
      const DenseMatrix pts = oracle::random_points(pr, 3, rng);
      for (std::size_t n = 0; n < pts.rows(); ++n) {
        const auto x = row_of(pts, n);
        const oracle::Jet exact = oracle::true_solution_jet(pr, x);
        const oracle::Jet fd = oracle::fd_jet(u, x, pr.coeffs.matrix());
        INFO(name, " dim ", pr.dim);
        CHECK(oracle::rel_err(exact.u, u(x)) <= 1e-14);
        CHECK(oracle::rel_err(exact.grad, fd.grad) <= 1e-6);
        CHECK(oracle::rel_err(exact.op, fd.op) <= 1e-5);
        const double r = pr.residual(x, exact.u, exact.grad, exact.op);
        CHECK(std::abs(r) <= 1e-10 * std::max(1.0, std::abs(exact.op)));
      }
    }
  }
}

TEST_CASE("residual jacobian matches finite differences in (u, grad, op)") {
  Rng rng(32, StreamTag::test);
  for (const std::string& name : problem_names()) {
    const PdeProblem pr = make_problem(name, {name == "poisson_norm2" ? std::size_t{6} : std::size_t{0}, 0.25});
    const DenseMatrix pts = oracle::random_points(pr, 1, rng);
    const auto x = row_of(pts, 0);
    const double u = rng.uniform(-1, 1), op = rng.uniform(-1, 1);
    Vector grad = oracle::random_vector(pr.dim, rng);
    Vector jac(pr.dim + 2);
    pr.residual_jacobian(x, u, grad, op, jac);
    const double h = 1e-6;
    INFO(name);
    CHECK(oracle::rel_err(jac[0], (pr.residual(x, u + h, grad, op) - pr.residual(x, u - h, grad, op)) / (2 * h)) <= 1e-8);
    CHECK(oracle::rel_err(jac[pr.dim + 1], (pr.residual(x, u, grad, op + h) - pr.residual(x, u, grad, op - h)) / (2 * h)) <= 1e-8);
    for (std::size_t i = 0; i < pr.dim; ++i) {
      Vector gp = grad, gm = grad;
      gp[i] += h;
      gm[i] -= h;
      CHECK(oracle::rel_err(jac[1 + i], (pr.residual(x, u, gp, op) - pr.residual(x, u, gm, op)) / (2 * h)) <= 1e-8);
    }
  }
}

TEST_CASE("boundary points lie on the boundary") {
  const PdeProblem pr = make_problem("poisson2d_sin");
  const Batch b = sample_batch(pr, 5, 4, 1);
  for (std::size_t n = 0; n < 4; ++n) {
    const double* x = b.boundary.row(n);
    CHECK(std::min({x[0], x[1], 1 - x[0], 1 - x[1]}) == 0.0);
    CHECK(b.targets[n] == pr.true_solution({x, 2}));
  }
  for (std::size_t n = 0; n < 5; ++n)
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(b.interior(n, i) >= 0.0);
      CHECK(b.interior(n, i) < 1.0);
    }
}

TEST_CASE("heat boundary budget splits between the initial slice and the walls") {
  const PdeProblem pr = make_problem("heat", {1, 0.25});
  const Batch b = sample_batch(pr, 1, 10, 2);
  int initial = 0, walls = 0;
  for (std::size_t n = 0; n < 10; ++n) {
    const auto x = row_of(b.boundary, n);
    if (n < 5 && x[0] == 0.0) ++initial;
    if (n >= 5 && (x[1] == 0.0 || x[1] == 1.0)) ++walls;
  }
  CHECK(initial == 5);
  CHECK(walls == 5);
}

TEST_CASE("fokker-planck conditions sit on t = 0") {
  const PdeProblem pr = make_problem("log_fokker_planck");
  const Batch b = sample_batch(pr, 3, 6, 3);
  for (std::size_t n = 0; n < 6; ++n) {
    CHECK(b.boundary(n, 0) == 0.0);
    CHECK_FALSE(on_box_boundary(pr, row_of(b.boundary, n), 1));
  }
}

TEST_CASE("boundary faces are chosen in proportion to measure") {
  // [0,1]^5: every face has the same measure, so each of the 10 faces gets ~1/10.
  const PdeProblem pr = make_problem("poisson_cos_sum");
  const Batch b = sample_batch(pr, 1, 5000, 4);
  std::vector<int> hits(10, 0);
  for (std::size_t n = 0; n < 5000; ++n)
    for (std::size_t i = 0; i < 5; ++i) {
      if (b.boundary(n, i) == 0.0) ++hits[2 * i];
      if (b.boundary(n, i) == 1.0) ++hits[2 * i + 1];
    }
  for (int h : hits) CHECK(std::abs(h - 500) <= 5 * std::sqrt(500 * 0.9));
}

TEST_CASE("batches are deterministic per seed and index") {
  const PdeProblem pr = make_problem("heat", {2, 0.25});
  const Batch a = sample_batch(pr, 20, 10, 9), b = sample_batch(pr, 20, 10, 9);
  CHECK(a.interior == b.interior);
  CHECK(a.boundary == b.boundary);
  CHECK(a.targets == b.targets);
  CHECK_FALSE(sample_batch(pr, 20, 10, 9, 1).interior == a.interior);
  CHECK_FALSE(sample_batch(pr, 20, 10, 10).interior == a.interior);
  CHECK_FALSE(sample_eval_points(pr, 20, 9) == a.interior);
}

TEST_CASE("interior loss arithmetic") {
  // u = 3t solves nothing: its heat residual is exactly 3 everywhere.
  const PdeProblem heat = make_problem("heat", {1, 0.25});
  Batch b = sample_batch(heat, 1, 1, 0);
  const InteriorEval e = interior_loss_and_residuals(heat, linear_net(2, {3, 0}), b);
  CHECK(e.residuals[0] == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(e.loss == doctest::Approx(4.5).epsilon(1e-15));

  // Any linear net is harmonic, and the harmonic_mixed source is zero.
  const PdeProblem harm = make_problem("poisson_harmonic_mixed", {2});
  b = sample_batch(harm, 8, 1, 0);
  CHECK(interior_loss_and_residuals(harm, linear_net(2, {0.7, -1.1}, 0.2), b).loss == 0.0);
}

TEST_CASE("batch_loss agrees bit for bit with the full evaluation") {
  // 150 points cross the outputs-only chunk boundary twice.
  const PdeProblem pr = make_problem("heat", {1, 0.25});
  const Parameters p = testutil::lively_params(Architecture{{2, 8, 8, 1}}, 34, 1.5);
  const Batch b = sample_batch(pr, 150, 10, 34);
  const LossParts fast = batch_loss(pr, p, b);
  CHECK(fast.interior == interior_loss_and_residuals(pr, p, b).loss);
  CHECK(fast.boundary == boundary_loss(pr, p, b).loss);
}

TEST_CASE("interior loss matches a finite-difference recomputation") {
  const PdeProblem pr = make_problem("poisson2d_sin");
  const Parameters p = testutil::lively_params(Architecture{{2, 8, 8, 1}}, 33, 1.5);
  const Batch b = sample_batch(pr, 16, 1, 33);
  const InteriorEval e = interior_loss_and_residuals(pr, p, b);
  const oracle::ScalarFn u = [&](std::span<const double> x) { return evaluate(p, x); };
  double loss = 0;
  for (std::size_t n = 0; n < 16; ++n) {
    const auto x = row_of(b.interior, n);
    const double r = pr.residual(x, u(x), oracle::fd_gradient(u, x), oracle::fd_operator(u, x, pr.coeffs.matrix()));
    CHECK(oracle::rel_err(e.residuals[n], r) <= 1e-5);
    loss += r * r;
  }
  CHECK(oracle::rel_err(e.loss, loss / 32) <= 1e-5);
}

TEST_CASE("boundary loss arithmetic and re-evaluation") {
  const PdeProblem pr = make_problem("poisson2d_sin");
  const Parameters zero = zeros_like(init_params(Architecture{{2, 4, 1}}, 0));
  Batch b = sample_batch(pr, 1, 12, 5);
  CHECK(boundary_loss(pr, zero, b).loss <= 1e-30);  // sin(π) is not exactly zero

  b.boundary = DenseMatrix(2, 2);
  b.targets = {-1.0, 1.0};
  const BoundaryEval e = boundary_loss(pr, zero, b);
  CHECK(e.residuals == Vector{1.0, -1.0});
  CHECK(e.loss == 0.5);

  const Parameters p = init_params(Architecture{{2, 6, 1}}, 34);
  b = sample_batch(pr, 1, 9, 34);
  double loss = 0;
  for (std::size_t n = 0; n < 9; ++n) {
    const double r = oracle::scalar_forward(p, row_of(b.boundary, n)) - b.targets[n];
    loss += r * r;
  }
  CHECK(std::abs(boundary_loss(pr, p, b).loss - loss / 18) <= 1e-12);
}

TEST_CASE("loss gradient matches finite differences of the loss") {
  for (const char* name : {"poisson2d_sin", "heat", "log_fokker_planck"}) {
    const PdeProblem pr = make_problem(name, {name[0] == 'l' ? std::size_t{2} : std::size_t{0}, 0.25});
    const Parameters p = testutil::lively_params(Architecture{{pr.dim, 5, 1}}, 35);
    const Batch b = sample_batch(pr, 6, 4, 35);
    const LossGradient lg = loss_and_gradient(pr, p, b);
    CHECK(lg.loss.total() == batch_loss(pr, p, b).total());
    const Vector analytic = flatten(lg.grad);
    const Vector theta = flatten(p);
    Vector fd(theta.size());
    const double h = 1e-6;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      Vector dir(theta.size(), 0.0);
      dir[k] = 1.0;
      fd[k] = (batch_loss(pr, add_scaled(p, h, dir), b).total() - batch_loss(pr, add_scaled(p, -h, dir), b).total()) /
              (2 * h);
    }
    INFO(name);
    CHECK(oracle::rel_err(analytic, fd) <= 1e-6);
  }
}

TEST_CASE("empty interior contributes zero loss") {
  const PdeProblem pr = make_problem("poisson2d_sin");
  const Batch b = sample_batch(pr, 0, 3, 1);
  CHECK(interior_loss_and_residuals(pr, init_params(Architecture{{2, 3, 1}}, 1), b).loss == 0.0);
}

TEST_CASE("relative L2 on rigged predictions") {
  const Vector ref{1.0, -2.0, 0.5};
  CHECK(relative_l2(ref, ref) == 0.0);
  CHECK(relative_l2(Vector(3, 0.0), ref) == 1.0);
  Vector scaled = ref;
  for (double& v : scaled) v *= 1.1;
  CHECK(std::abs(relative_l2(scaled, ref) - 0.1) <= 1e-12);
  expect_code(ErrorCode::numerical, [] { relative_l2(Vector{1.0}, Vector{0.0}); });
}

TEST_CASE("relative L2 of the zero network is one") {
  const PdeProblem pr = make_problem("poisson_cos_sum");
  const Parameters zero = zeros_like(init_params(Architecture{{5, 3, 1}}, 0));
  CHECK(relative_l2(zero, pr, sample_eval_points(pr, 50, 1)) == 1.0);
}

}  // TEST_SUITE
