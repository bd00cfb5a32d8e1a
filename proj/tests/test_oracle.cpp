#include <cmath>

#include "doctest.h"
#include "kfacpinn/checks.hpp"
#include "kfacpinn/oracle.hpp"
#include "test_util.hpp"

using namespace kfacpinn;
using testutil::row_of;

TEST_SUITE("oracle") {

TEST_CASE("fd_gradient is exact on quadratics and zero on constants") {
  const oracle::ScalarFn sq = [](std::span<const double> x) { return x[0] * x[0] + x[1] * x[1]; };
  const Vector g = oracle::fd_gradient(sq, Vector{1.0, 2.0});
  CHECK(std::abs(g[0] - 2.0) <= 1e-8);
  CHECK(std::abs(g[1] - 4.0) <= 1e-8);
  const oracle::ScalarFn c = [](std::span<const double>) { return 3.5; };
  for (double v : oracle::fd_gradient(c, Vector{0.1, 0.2, 0.3})) CHECK(v == 0.0);
}

TEST_CASE("fd_operator on closed forms") {
  const oracle::ScalarFn sq = [](std::span<const double> x) { return x[0] * x[0] + x[1] * x[1] + x[2] * x[2]; };
  CHECK(std::abs(oracle::fd_operator(sq, Vector{0.3, -1.0, 2.0}, DenseMatrix::identity(3)) - 6.0) <= 1e-6);
  const oracle::ScalarFn mixed = [](std::span<const double> x) { return x[0] * x[1]; };
  CHECK(std::abs(oracle::fd_operator(mixed, Vector{0.7, 0.2}, DenseMatrix{{0, 0.5}, {0.5, 0}}) - 1.0) <= 1e-6);
}

TEST_CASE("finite differences agree with the Taylor engine") {
  const Parameters p = testutil::lively_params(Architecture{{3, 10, 1}}, 70, 1.5);
  Rng rng(70, StreamTag::test);
  const DenseMatrix c = oracle::random_symmetric(3, rng);
  const DenseMatrix pts = oracle::random_matrix(5, 3, rng);
  const TaylorForward f = taylor_forward(p, pts, OperatorCoeffs(c));
  const oracle::ScalarFn u = [&](std::span<const double> x) { return evaluate(p, x); };
  for (std::size_t n = 0; n < 5; ++n) {
    const auto x = row_of(pts, n);
    CHECK(oracle::rel_err(oracle::fd_gradient(u, x), std::span<const double>(f.out.grad.row(n), 3)) <= 1e-8);
    CHECK(oracle::rel_err(oracle::fd_operator(u, x, c), f.out.op[n]) <= 1e-6);
    const oracle::Jet j = oracle::fd_jet(u, x, c);
    CHECK(oracle::rel_err(j.op, f.out.op[n]) <= 1e-7);
    CHECK(j.u == f.out.u[n]);
  }
}

TEST_CASE("scalar_forward agrees with the network module") {
  const Parameters p = testutil::lively_params(Architecture{{4, 6, 5, 1}}, 71);
  Rng rng(71, StreamTag::test);
  for (int k = 0; k < 10; ++k) {
    const Vector x = oracle::random_vector(4, rng);
    CHECK(std::abs(oracle::scalar_forward(p, x) - evaluate(p, x)) <= 1e-12);
  }
}

TEST_CASE("boundary residual jacobian of a linear net is the augmented input") {
  const PdeProblem pr = make_problem("poisson2d_sin");
  const Parameters p = init_params(Architecture{{2, 1}}, 72);
  const Vector x{0.25, 1.0};
  const Vector j = oracle::fd_residual_jacobian(pr, p, x, true);
  CHECK(std::abs(j[0] - 0.25) <= 1e-12);
  CHECK(std::abs(j[1] - 1.0) <= 1e-12);
  CHECK(std::abs(j[2] - 1.0) <= 1e-12);
}

TEST_CASE("residual jacobian in a zero direction leaves the residual unchanged") {
  const PdeProblem pr = make_problem("heat", {1});
  const Parameters p = init_params(Architecture{{2, 5, 1}}, 73);
  const Vector x{0.4, 0.6};
  const Vector j = oracle::fd_residual_jacobian(pr, p, x, false);
  CHECK(dot(j, Vector(j.size(), 0.0)) == 0.0);
  const Parameters same = add_scaled(p, 1.0, Vector(p.size(), 0.0));
  CHECK(flatten(same) == flatten(p));
}

TEST_CASE("interior residual jacobians agree with the engine") {
  for (const char* name : {"poisson2d_sin", "heat", "log_fokker_planck"}) {
    const PdeProblem pr = make_problem(name, {name[0] == 'l' ? std::size_t{2} : std::size_t{0}, 0.25});
    const Parameters p = testutil::lively_params(Architecture{{pr.dim, 6, 1}}, 74, 1.5);
    const Batch b = sample_batch(pr, 4, 3, 74);
    const ResidualJacobians rj = residual_jacobians(pr, p, b);
    INFO(name);
    for (std::size_t n = 0; n < 4; ++n) {
      const Vector fd = oracle::fd_residual_jacobian(pr, p, row_of(b.interior, n), false);
      CHECK(oracle::rel_err(std::span<const double>(rj.interior.row(n), p.size()), fd) <= 1e-5);
    }
    for (std::size_t n = 0; n < 3; ++n) {
      const Vector fd = oracle::fd_residual_jacobian(pr, p, row_of(b.boundary, n), true);
      CHECK(oracle::rel_err(std::span<const double>(rj.boundary.row(n), p.size()), fd) <= 1e-8);
    }
  }
}

TEST_CASE("dense solvers") {
  Rng rng(75, StreamTag::test);
  const DenseMatrix a = oracle::random_spd(6, rng);
  const Vector b = oracle::random_vector(6, rng);
  CHECK(oracle::rel_err(matvec(a, oracle::dense_solve(a, b)), b) <= 1e-12);
  const DenseMatrix a1 = oracle::random_spd(2, rng), a2 = oracle::random_spd(2, rng);
  const DenseMatrix b1 = oracle::random_spd(3, rng), b2 = oracle::random_spd(3, rng);
  const Vector g = oracle::random_vector(6, rng);
  const Vector v = oracle::dense_kron_sum_solve(a1, b1, a2, b2, g);
  CHECK(oracle::rel_err(matvec(kron(a1, b1) + kron(a2, b2), v), g) <= 1e-12);
}

TEST_CASE("generators produce the promised structure") {
  Rng rng(76, StreamTag::test);
  for (int k = 0; k < 10; ++k) {
    const DenseMatrix s = oracle::random_symmetric(5, rng);
    CHECK(asymmetry(s) == 0.0);
    CHECK(sym_eig(oracle::random_spd(5, rng)).eigenvalues.front() >= 0.1 - 1e-12);
    const std::vector<double> ev = sym_eig(oracle::random_psd(6, 2, rng)).eigenvalues;
    CHECK(std::abs(ev[3]) <= 1e-12);
    CHECK(ev[4] > 1e-6);
  }
  const PdeProblem pr = make_problem("log_fokker_planck", {3});
  const DenseMatrix pts = oracle::random_points(pr, 50, rng);
  for (std::size_t n = 0; n < 50; ++n)
    for (std::size_t i = 0; i < pr.dim; ++i) {
      CHECK(pts(n, i) >= pr.lo[i]);
      CHECK(pts(n, i) <= pr.hi[i]);
    }
}

TEST_CASE("relative error uses a floor of one") {
  CHECK(oracle::rel_err(1e-3, 0.0) == 1e-3);
  CHECK(oracle::rel_err(110.0, 100.0) == doctest::Approx(0.1));
  CHECK(oracle::rel_err(Vector{1.0, 2.0}, Vector{1.0, 4.0}) == doctest::Approx(0.5));
}

TEST_CASE("the check suite passes") {
  int count = 0;
  const std::vector<CheckResult> results = run_checks([&](const CheckResult&) { ++count; });
  CHECK(count == static_cast<int>(results.size()));
  CHECK(results.size() >= 10);
  for (const CheckResult& r : results) {
    INFO(r.name, ": ", r.detail);
    CHECK(r.passed);
  }
}

}  // TEST_SUITE
