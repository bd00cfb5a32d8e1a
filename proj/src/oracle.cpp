#include "kfacpinn/oracle.hpp"

#include <cmath>
#include <numbers>
#include <utility>

#include "kfacpinn/error.hpp"

namespace kfacpinn::oracle {

namespace {

constexpr double kPi = std::numbers::pi;

// Fourth-order first-derivative weights at offsets -2, -1, 1, 2.
constexpr double kOff[4] = {-2.0, -1.0, 1.0, 2.0};
constexpr double kW1[4] = {1.0 / 12.0, -8.0 / 12.0, 8.0 / 12.0, -1.0 / 12.0};

}  // namespace

Vector fd_gradient(const ScalarFn& f, std::span<const double> x, FdSpec spec) {
  require(spec.h > 0.0, ErrorCode::invalid_argument, "fd step must be positive");
  Vector g(x.size());
  Vector y(x.begin(), x.end());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = x[i] + spec.h;
    const double fp = f(y);
    y[i] = x[i] - spec.h;
    const double fm = f(y);
    y[i] = x[i];
    g[i] = (fp - fm) / (2.0 * spec.h);
  }
  return g;
}

double fd_operator(const ScalarFn& f, std::span<const double> x, const DenseMatrix& c, FdSpec spec) {
  require(spec.h > 0.0, ErrorCode::invalid_argument, "fd step must be positive");
  require(c.rows() == x.size() && c.cols() == x.size(), ErrorCode::dimension, "fd_operator: shape mismatch");
  const double h = spec.h;
  Vector y(x.begin(), x.end());
  const double f0 = f(y);
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (c(i, j) == 0.0) continue;
      double d2;
      if (i == j) {
        y[i] = x[i] + h;
        const double fp = f(y);
        y[i] = x[i] - h;
        const double fm = f(y);
        y[i] = x[i];
        d2 = (fp - 2.0 * f0 + fm) / (h * h);
      } else {
        double acc = 0.0;
        for (int si : {1, -1})
          for (int sj : {1, -1}) {
            y[i] = x[i] + si * h;
            y[j] = x[j] + sj * h;
            acc += si * sj * f(y);
          }
        y[i] = x[i];
        y[j] = x[j];
        d2 = acc / (4.0 * h * h);
      }
      total += c(i, j) * d2;
    }
  }
  return total;
}

Jet fd_jet(const ScalarFn& f, std::span<const double> x, const DenseMatrix& c, double h) {
  const std::size_t d = x.size();
  require(c.rows() == d && c.cols() == d, ErrorCode::dimension, "fd_jet: shape mismatch");
  Jet jet;
  Vector y(x.begin(), x.end());
  jet.u = f(y);
  jet.grad.assign(d, 0.0);
  Vector fi(4 * d);  // f at x + kOff[k] h e_i
  for (std::size_t i = 0; i < d; ++i) {
    for (int k = 0; k < 4; ++k) {
      y[i] = x[i] + kOff[k] * h;
      fi[4 * i + k] = f(y);
    }
    y[i] = x[i];
    double g = 0.0;
    for (int k = 0; k < 4; ++k) g += kW1[k] * fi[4 * i + k];
    jet.grad[i] = g / h;
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      if (c(i, j) == 0.0) continue;
      double d2 = 0.0;
      if (i == j) {
        const double* v = &fi[4 * i];
        d2 = (-v[0] + 16.0 * v[1] - 30.0 * jet.u + 16.0 * v[2] - v[3]) / (12.0 * h * h);
      } else {
        for (int a = 0; a < 4; ++a)
          for (int b = 0; b < 4; ++b) {
            y[i] = x[i] + kOff[a] * h;
            y[j] = x[j] + kOff[b] * h;
            d2 += kW1[a] * kW1[b] * f(y);
          }
        y[i] = x[i];
        y[j] = x[j];
        d2 /= h * h;
      }
      jet.op += c(i, j) * d2;
    }
  }
  return jet;
}

double scalar_forward(const Parameters& params, std::span<const double> x) {
  std::vector<double> cur(x.begin(), x.end());
  const std::size_t nl = params.layers.size();
  for (std::size_t k = 0; k < nl; ++k) {
    const auto& l = params.layers[k];
    std::vector<double> next(l.weight.rows());
    for (std::size_t i = 0; i < l.weight.rows(); ++i) {
      double s = l.bias[i];
      for (std::size_t j = 0; j < l.weight.cols(); ++j) s += l.weight(i, j) * cur[j];
      next[i] = k + 1 < nl ? std::tanh(s) : s;
    }
    cur = std::move(next);
  }
  return cur[0];
}

Vector fd_residual_jacobian(const PdeProblem& problem, const Parameters& params, std::span<const double> point,
                            bool boundary, double h) {
  require(point.size() == problem.dim, ErrorCode::dimension, "fd_residual_jacobian: point dimension mismatch");
  const Vector x(point.begin(), point.end());
  Parameters p = params;
  auto residual = [&](const Parameters& q) {
    auto f = [&q](std::span<const double> y) { return evaluate(q, y); };
    if (boundary) return f(x) - problem.boundary_target(x);
    const Jet jet = fd_jet(f, x, problem.coeffs.matrix());
    return problem.residual(x, jet.u, jet.grad, jet.op);
  };
  const Vector theta = flatten(params);
  Vector jac(theta.size());
  Vector t = theta;
  for (std::size_t k = 0; k < theta.size(); ++k) {
    double acc = 0.0;
    for (int a = 0; a < 4; ++a) {
      t[k] = theta[k] + kOff[a] * h;
      unflatten(t, p);
      acc += kW1[a] * residual(p);
    }
    t[k] = theta[k];
    jac[k] = acc / h;
  }
  return jac;
}

Jet true_solution_jet(const PdeProblem& problem, std::span<const double> x) {
  const std::size_t d = problem.dim;
  Jet j;
  j.u = problem.true_solution(x);
  j.grad.assign(d, 0.0);
  switch (problem.kind) {
    case ProblemKind::poisson2d_sin:
      j.grad[0] = kPi * std::cos(kPi * x[0]) * std::sin(kPi * x[1]);
      j.grad[1] = kPi * std::sin(kPi * x[0]) * std::cos(kPi * x[1]);
      j.op = -2.0 * kPi * kPi * j.u;
      break;
    case ProblemKind::poisson_cos_sum:
      for (std::size_t i = 0; i < d; ++i) j.grad[i] = -kPi * std::sin(kPi * x[i]);
      j.op = -kPi * kPi * j.u;
      break;
    case ProblemKind::poisson_harmonic_mixed:
      for (std::size_t k = 0; k + 1 < d; k += 2) {
        j.grad[k] = x[k + 1];
        j.grad[k + 1] = x[k];
      }
      j.op = 0.0;
      break;
    case ProblemKind::poisson_norm2:
      for (std::size_t i = 0; i < d; ++i) j.grad[i] = 2.0 * x[i];
      j.op = 2.0 * static_cast<double>(d);
      break;
    case ProblemKind::heat: {
      const double t = x[0];
      const double ds = static_cast<double>(problem.spatial_dim);
      if (problem.spatial_dim == 4) {
        const double e = std::exp(-t);
        j.grad[0] = -j.u;
        double lap = 0.0;
        for (std::size_t i = 1; i < d; ++i) {
          j.grad[i] = 2.0 * e * std::cos(2.0 * x[i]);
          lap -= 4.0 * e * std::sin(2.0 * x[i]);
        }
        j.op = lap;
      } else {
        const double e = std::exp(-kPi * kPi * ds * t / 4.0);
        j.grad[0] = -kPi * kPi * ds / 4.0 * j.u;
        for (std::size_t i = 1; i < d; ++i) {
          double g = e * kPi * std::cos(kPi * x[i]);
          for (std::size_t m = 1; m < d; ++m)
            if (m != i) g *= std::sin(kPi * x[m]);
          j.grad[i] = g;
        }
        j.op = -kPi * kPi * ds * j.u;
      }
      break;
    }
    case ProblemKind::log_fokker_planck: {
      const double et = std::exp(-x[0]);
      const double var = 2.0 - et;
      const double ds = static_cast<double>(problem.spatial_dim);
      double r2 = 0.0;
      for (std::size_t i = 1; i < d; ++i) {
        r2 += x[i] * x[i];
        j.grad[i] = -x[i] / var;
      }
      j.grad[0] = -0.5 * ds * et / var + r2 * et / (2.0 * var * var);
      j.op = -ds / var;
      break;
    }
  }
  return j;
}

Vector dense_solve(DenseMatrix a, Vector b) {
  const std::size_t n = a.rows();
  require(a.is_square() && b.size() == n, ErrorCode::dimension, "dense_solve: shape mismatch");
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    require(a(piv, col) != 0.0, ErrorCode::numerical, "dense_solve: singular matrix");
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(piv, c), a(col, c));
      std::swap(b[piv], b[col]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) / a(col, col);
      for (std::size_t c = col; c < n; ++c) a(r, c) -= f * a(col, c);
      b[r] -= f * b[col];
    }
  }
  Vector x(n);
  for (std::size_t r = n; r-- > 0;) {
    double s = b[r];
    for (std::size_t c = r + 1; c < n; ++c) s -= a(r, c) * x[c];
    x[r] = s / a(r, r);
  }
  return x;
}

Vector dense_kron_sum_solve(const DenseMatrix& a1, const DenseMatrix& b1, const DenseMatrix& a2,
                            const DenseMatrix& b2, std::span<const double> g) {
  return dense_solve(kron(a1, b1) + kron(a2, b2), Vector(g.begin(), g.end()));
}

LayerFactors interior_factors_literal(const TaylorState& states, const std::vector<DenseMatrix>& grads) {
  const std::size_t n_samples = states.num_samples;
  const std::size_t s_cols = states.columns_per_sample();
  LayerFactors out;
  for (std::size_t l = 0; l < states.layers.size() / 2; ++l) {
    const DenseMatrix& z = states.layers[2 * l];
    const DenseMatrix& g = grads[2 * l + 1];
    const std::size_t hi = z.rows();
    const std::size_t ho = g.rows();
    DenseMatrix a(hi + 1, hi + 1), b(ho, ho);
    for (std::size_t n = 0; n < n_samples; ++n)
      for (std::size_t s = 0; s < s_cols; ++s) {
        const std::size_t col = n * s_cols + s;
        Vector zt(hi + 1);
        for (std::size_t i = 0; i < hi; ++i) zt[i] = z(i, col);
        zt[hi] = s == 0 ? 1.0 : 0.0;
        for (std::size_t i = 0; i <= hi; ++i)
          for (std::size_t j = 0; j <= hi; ++j) a(i, j) += zt[i] * zt[j];
        for (std::size_t i = 0; i < ho; ++i)
          for (std::size_t j = 0; j < ho; ++j) b(i, j) += g(i, col) * g(j, col);
      }
    a *= 1.0 / static_cast<double>(n_samples * s_cols);
    b *= 1.0 / static_cast<double>(n_samples);
    out.push_back({a, b});
  }
  return out;
}

LayerFactors boundary_factors_literal(const std::vector<DenseMatrix>& states, const std::vector<DenseMatrix>& grads) {
  LayerFactors out;
  for (std::size_t l = 0; l < states.size() / 2; ++l) {
    const DenseMatrix& z = states[2 * l];
    const DenseMatrix& g = grads[2 * l + 1];
    const std::size_t n_samples = z.cols();
    const std::size_t hi = z.rows();
    const std::size_t ho = g.rows();
    DenseMatrix a(hi + 1, hi + 1), b(ho, ho);
    for (std::size_t n = 0; n < n_samples; ++n) {
      Vector zt(hi + 1, 1.0);
      for (std::size_t i = 0; i < hi; ++i) zt[i] = z(i, n);
      for (std::size_t i = 0; i <= hi; ++i)
        for (std::size_t j = 0; j <= hi; ++j) a(i, j) += zt[i] * zt[j];
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < ho; ++j) b(i, j) += g(i, n) * g(j, n);
    }
    a *= 1.0 / static_cast<double>(n_samples);
    b *= 1.0 / static_cast<double>(n_samples);
    out.push_back({a, b});
  }
  return out;
}

DenseMatrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale) {
  DenseMatrix m(rows, cols);
  for (double& v : m.data()) v = rng.uniform(-scale, scale);
  return m;
}

DenseMatrix random_symmetric(std::size_t n, Rng& rng) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) m(i, j) = m(j, i) = rng.uniform(-1.0, 1.0);
  return m;
}

DenseMatrix random_spd(std::size_t n, Rng& rng, double shift) {
  const DenseMatrix b = random_matrix(n, n, rng);
  DenseMatrix m = matmul_nt(b, b);
  for (std::size_t i = 0; i < n; ++i) m(i, i) += shift;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m(j, i) = m(i, j);
  return m;
}

DenseMatrix random_psd(std::size_t n, std::size_t rank, Rng& rng) {
  const DenseMatrix b = random_matrix(n, rank, rng);
  DenseMatrix m = matmul_nt(b, b);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m(j, i) = m(i, j);
  return m;
}

Vector random_vector(std::size_t n, Rng& rng, double scale) {
  Vector v(n);
  for (double& x : v) x = rng.uniform(-scale, scale);
  return v;
}

DenseMatrix random_points(const PdeProblem& problem, std::size_t n, Rng& rng) {
  DenseMatrix pts(n, problem.dim);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < problem.dim; ++i) pts(k, i) = rng.uniform(problem.lo[i], problem.hi[i]);
  return pts;
}

double rel_err(std::span<const double> a, std::span<const double> ref) {
  require(a.size() == ref.size(), ErrorCode::dimension, "rel_err: length mismatch");
  double num = 0.0, den = 1.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - ref[i]));
    den = std::max(den, std::abs(ref[i]));
  }
  return num / den;
}

}  // namespace kfacpinn::oracle
