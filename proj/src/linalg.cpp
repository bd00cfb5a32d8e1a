#include "kfacpinn/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kfacpinn/error.hpp"

namespace kfacpinn {

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    require(r.size() == cols_, ErrorCode::dimension, "ragged matrix initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::diagonal(std::span<const double> diag) {
  DenseMatrix m(diag.size(), diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  return m;
}

void DenseMatrix::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

DenseMatrix DenseMatrix::transposed() const {
  DenseMatrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

double DenseMatrix::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

bool DenseMatrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

DenseMatrix& DenseMatrix::operator+=(const DenseMatrix& other) {
  require(rows_ == other.rows_ && cols_ == other.cols_, ErrorCode::dimension,
          "matrix sum shape mismatch");
  for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += other.data_[k];
  return *this;
}

DenseMatrix& DenseMatrix::operator-=(const DenseMatrix& other) {
  require(rows_ == other.rows_ && cols_ == other.cols_, ErrorCode::dimension,
          "matrix difference shape mismatch");
  for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= other.data_[k];
  return *this;
}

DenseMatrix& DenseMatrix::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b) { return a += b; }
DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b) { return a -= b; }
DenseMatrix operator*(double s, DenseMatrix a) { return a *= s; }

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.cols() == b.rows(), ErrorCode::dimension, "matmul inner dimension mismatch");
  DenseMatrix c(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* ci = c.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* bk = b.row(k);
      for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.cols() == b.cols(), ErrorCode::dimension, "matmul_nt inner dimension mismatch");
  // a b^T with a == b is symmetric; each entry is still summed in k order,
  // so mirroring gives the same bits as the full product.
  const bool self = &a == &b;
  DenseMatrix c(a.rows(), b.rows());
  const std::size_t m = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ai = a.row(i);
    std::size_t j = self ? i : 0;
    // Four independent accumulators hide the add latency.
    for (; j + 4 <= b.rows(); j += 4) {
      const double* b0 = b.row(j);
      const double* b1 = b.row(j + 1);
      const double* b2 = b.row(j + 2);
      const double* b3 = b.row(j + 3);
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      for (std::size_t k = 0; k < m; ++k) {
        const double x = ai[k];
        s0 += x * b0[k];
        s1 += x * b1[k];
        s2 += x * b2[k];
        s3 += x * b3[k];
      }
      c(i, j) = s0;
      c(i, j + 1) = s1;
      c(i, j + 2) = s2;
      c(i, j + 3) = s3;
    }
    for (; j < b.rows(); ++j) {
      const double* bj = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < m; ++k) s += ai[k] * bj[k];
      c(i, j) = s;
    }
  }
  if (self)
    for (std::size_t i = 0; i < c.rows(); ++i)
      for (std::size_t j = 0; j < i; ++j) c(i, j) = c(j, i);
  return c;
}

DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.rows() == b.rows(), ErrorCode::dimension, "matmul_tn inner dimension mismatch");
  const bool self = &a == &b;
  DenseMatrix c(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* ak = a.row(k);
    const double* bk = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = ak[i];
      if (aki == 0.0) continue;
      double* ci = c.row(i);
      for (std::size_t j = self ? i : 0; j < n; ++j) ci[j] += aki * bk[j];
    }
  }
  if (self)
    for (std::size_t i = 0; i < c.rows(); ++i)
      for (std::size_t j = 0; j < i; ++j) c(i, j) = c(j, i);
  return c;
}

Vector matvec(const DenseMatrix& a, std::span<const double> x) {
  require(a.cols() == x.size(), ErrorCode::dimension, "matvec dimension mismatch");
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ai = a.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += ai[j] * x[j];
    y[i] = s;
  }
  return y;
}

Vector matvec_t(const DenseMatrix& a, std::span<const double> x) {
  require(a.rows() == x.size(), ErrorCode::dimension, "matvec_t dimension mismatch");
  Vector y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ai = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) y[j] += ai[j] * x[i];
  }
  return y;
}

DenseMatrix kron(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix k(a.rows() * b.rows(), a.cols() * b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      for (std::size_t p = 0; p < b.rows(); ++p)
        for (std::size_t q = 0; q < b.cols(); ++q)
          k(i * b.rows() + p, j * b.cols() + q) = a(i, j) * b(p, q);
  return k;
}

double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::dimension, "dot dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void axpy(double s, std::span<const double> x, std::span<double> y) {
  require(x.size() == y.size(), ErrorCode::dimension, "axpy dimension mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

double asymmetry(const DenseMatrix& m) {
  double worst = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = i + 1; j < m.cols(); ++j)
      worst = std::max(worst, std::abs(m(i, j) - m(j, i)));
  return worst;
}

namespace {

// Householder reduction to tridiagonal form. On return v holds the
// accumulated orthogonal transform, d the diagonal and e the sub-diagonal
// (e[0] unused).
void tridiagonalize(DenseMatrix& v, Vector& d, Vector& e) {
  const std::size_t n = v.rows();
  for (std::size_t j = 0; j < n; ++j) d[j] = v(n - 1, j);

  for (std::size_t i = n - 1; i > 0; --i) {
    double scale = 0.0;
    double h = 0.0;
    for (std::size_t k = 0; k < i; ++k) scale += std::abs(d[k]);
    if (scale == 0.0) {
      e[i] = d[i - 1];
      for (std::size_t j = 0; j < i; ++j) {
        d[j] = v(i - 1, j);
        v(i, j) = 0.0;
        v(j, i) = 0.0;
      }
    } else {
      for (std::size_t k = 0; k < i; ++k) {
        d[k] /= scale;
        h += d[k] * d[k];
      }
      double f = d[i - 1];
      double g = std::sqrt(h);
      if (f > 0) g = -g;
      e[i] = scale * g;
      h -= f * g;
      d[i - 1] = f - g;
      for (std::size_t j = 0; j < i; ++j) e[j] = 0.0;

      for (std::size_t j = 0; j < i; ++j) {
        f = d[j];
        v(j, i) = f;
        g = e[j] + v(j, j) * f;
        for (std::size_t k = j + 1; k <= i - 1; ++k) {
          g += v(k, j) * d[k];
          e[k] += v(k, j) * f;
        }
        e[j] = g;
      }
      f = 0.0;
      for (std::size_t j = 0; j < i; ++j) {
        e[j] /= h;
        f += e[j] * d[j];
      }
      const double hh = f / (h + h);
      for (std::size_t j = 0; j < i; ++j) e[j] -= hh * d[j];
      for (std::size_t j = 0; j < i; ++j) {
        f = d[j];
        g = e[j];
        for (std::size_t k = j; k <= i - 1; ++k) v(k, j) -= (f * e[k] + g * d[k]);
        d[j] = v(i - 1, j);
        v(i, j) = 0.0;
      }
    }
    d[i] = h;
  }

  for (std::size_t i = 0; i + 1 < n; ++i) {
    v(n - 1, i) = v(i, i);
    v(i, i) = 1.0;
    const double h = d[i + 1];
    if (h != 0.0) {
      for (std::size_t k = 0; k <= i; ++k) d[k] = v(k, i + 1) / h;
      for (std::size_t j = 0; j <= i; ++j) {
        double g = 0.0;
        for (std::size_t k = 0; k <= i; ++k) g += v(k, i + 1) * v(k, j);
        for (std::size_t k = 0; k <= i; ++k) v(k, j) -= g * d[k];
      }
    }
    for (std::size_t k = 0; k <= i; ++k) v(k, i + 1) = 0.0;
  }
  for (std::size_t j = 0; j < n; ++j) {
    d[j] = v(n - 1, j);
    v(n - 1, j) = 0.0;
  }
  v(n - 1, n - 1) = 1.0;
  e[0] = 0.0;
}

// Implicit-shift QL on the tridiagonal (d, e). vt holds the eigenvector
// matrix transposed so that the plane rotations touch contiguous rows.
void tridiagonal_ql(DenseMatrix& vt, Vector& d, Vector& e) {
  const std::size_t n = d.size();
  constexpr int kMaxIterations = 100;
  for (std::size_t i = 1; i < n; ++i) e[i - 1] = e[i];
  e[n - 1] = 0.0;

  double f = 0.0;
  double tst1 = 0.0;
  const double eps = std::ldexp(1.0, -52);
  for (std::size_t l = 0; l < n; ++l) {
    tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
    std::size_t m = l;
    while (m < n) {
      if (std::abs(e[m]) <= eps * tst1) break;
      ++m;
    }
    if (m > l) {
      int iter = 0;
      do {
        if (++iter > kMaxIterations)
          fail(ErrorCode::numerical, "sym_eig: QL iteration did not converge");
        double g = d[l];
        double p = (d[l + 1] - g) / (2.0 * e[l]);
        double r = std::hypot(p, 1.0);
        if (p < 0) r = -r;
        d[l] = e[l] / (p + r);
        d[l + 1] = e[l] * (p + r);
        const double dl1 = d[l + 1];
        double h = g - d[l];
        for (std::size_t i = l + 2; i < n; ++i) d[i] -= h;
        f += h;

        p = d[m];
        double c = 1.0, c2 = c, c3 = c;
        const double el1 = e[l + 1];
        double s = 0.0, s2 = 0.0;
        for (std::size_t ii = m; ii-- > l;) {
          c3 = c2;
          c2 = c;
          s2 = s;
          g = c * e[ii];
          h = c * p;
          r = std::hypot(p, e[ii]);
          e[ii + 1] = s * r;
          s = e[ii] / r;
          c = p / r;
          p = c * d[ii] - s * g;
          d[ii + 1] = h + s * (c * g + s * d[ii]);
          double* vi = vt.row(ii);
          double* vi1 = vt.row(ii + 1);
          for (std::size_t k = 0; k < n; ++k) {
            const double t = vi1[k];
            vi1[k] = s * vi[k] + c * t;
            vi[k] = c * vi[k] - s * t;
          }
        }
        p = -s * s2 * c3 * el1 * e[l] / dl1;
        e[l] = s * p;
        d[l] = c * p;
      } while (std::abs(e[l]) > eps * tst1);
    }
    d[l] += f;
    e[l] = 0.0;
  }
}

void check_symmetric(const DenseMatrix& m, const char* who) {
  require(m.is_square(), ErrorCode::dimension, std::string(who) + ": matrix is not square");
  const double tol = 1e-10 * std::max(1.0, m.max_abs());
  require(asymmetry(m) <= tol, ErrorCode::dimension, std::string(who) + ": matrix is not symmetric");
}

double spectral_scale(const Vector& evals) {
  double s = 0.0;
  for (double v : evals) s = std::max(s, std::abs(v));
  return s;
}

void check_psd(const Vector& evals, const char* who) {
  if (evals.empty()) return;
  const double scale = spectral_scale(evals);
  require(evals.front() >= -1e-6 * scale, ErrorCode::not_psd,
          std::string(who) + ": matrix is not positive semi-definite");
}

// Q diag(w) Q^T
DenseMatrix reassemble(const DenseMatrix& q, const Vector& w) {
  const std::size_t n = q.rows();
  DenseMatrix scaled(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) scaled(i, k) = q(i, k) * w[k];
  DenseMatrix out = matmul_nt(scaled, q);
  // Exact symmetry; roundoff in the product is not mirrored otherwise.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = 0.5 * (out(i, j) + out(j, i));
      out(i, j) = v;
      out(j, i) = v;
    }
  return out;
}

DenseMatrix symmetrized(DenseMatrix m) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = i + 1; j < m.cols(); ++j) {
      const double v = 0.5 * (m(i, j) + m(j, i));
      m(i, j) = v;
      m(j, i) = v;
    }
  return m;
}

// Q^T X
DenseMatrix apply_t(const DenseMatrix& q, const DenseMatrix& x) { return matmul_tn(q, x); }

}  // namespace

SymEig sym_eig(const DenseMatrix& m) {
  check_symmetric(m, "sym_eig");
  require(m.all_finite(), ErrorCode::numerical, "sym_eig: non-finite input");
  const std::size_t n = m.rows();
  SymEig out;
  if (n == 0) return out;

  DenseMatrix v = m;
  Vector d(n), e(n);
  tridiagonalize(v, d, e);
  DenseMatrix vt = v.transposed();
  tridiagonal_ql(vt, d, e);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return d[a] < d[b]; });
  out.eigenvalues.resize(n);
  out.eigenvectors = DenseMatrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    out.eigenvalues[k] = d[order[k]];
    const double* src = vt.row(order[k]);
    for (std::size_t i = 0; i < n; ++i) out.eigenvectors(i, k) = src[i];
  }
  return out;
}

DenseMatrix inv_sqrt_psd(const DenseMatrix& m, double jitter) {
  require(jitter >= 0.0, ErrorCode::invalid_argument, "inv_sqrt_psd: negative jitter");
  const SymEig eig = sym_eig(m);
  check_psd(eig.eigenvalues, "inv_sqrt_psd");
  Vector w(eig.eigenvalues.size());
  for (std::size_t k = 0; k < w.size(); ++k) {
    const double shifted = std::max(eig.eigenvalues[k], 0.0) + jitter;
    require(shifted > 0.0, ErrorCode::numerical, "inv_sqrt_psd: matrix is singular");
    w[k] = 1.0 / std::sqrt(shifted);
  }
  return reassemble(eig.eigenvectors, w);
}

DenseMatrix pinv(const DenseMatrix& m, double rcond) {
  require(rcond >= 0.0, ErrorCode::invalid_argument, "pinv: negative rcond");
  const SymEig eig = sym_eig(m);
  check_psd(eig.eigenvalues, "pinv");
  const std::size_t n = eig.eigenvalues.size();
  if (n == 0) return {};
  const double cutoff = rcond * std::max(eig.eigenvalues.back(), 0.0);
  Vector w(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const double lam = eig.eigenvalues[k];
    if (lam > cutoff && lam > 0.0) w[k] = 1.0 / lam;
  }
  return reassemble(eig.eigenvectors, w);
}

Vector kron_sum_solve(const DenseMatrix& a1, const DenseMatrix& b1,
                      const DenseMatrix& a2, const DenseMatrix& b2,
                      std::span<const double> g) {
  require(a1.is_square() && a2.is_square() && b1.is_square() && b2.is_square(),
          ErrorCode::dimension, "kron_sum_solve: factors must be square");
  const std::size_t p = a1.rows();
  const std::size_t q = b1.rows();
  require(a2.rows() == p && b2.rows() == q, ErrorCode::dimension,
          "kron_sum_solve: factor size mismatch");
  require(g.size() == p * q, ErrorCode::dimension, "kron_sum_solve: vector length mismatch");

  const DenseMatrix a2_is = inv_sqrt_psd(a2);
  const DenseMatrix b2_is = inv_sqrt_psd(b2);
  const SymEig ea = sym_eig(symmetrized(matmul(matmul(a2_is, a1), a2_is)));
  const SymEig eb = sym_eig(symmetrized(matmul(matmul(b2_is, b1), b2_is)));
  check_psd(ea.eigenvalues, "kron_sum_solve");
  check_psd(eb.eigenvalues, "kron_sum_solve");

  // Column-stacked g is the q x p matrix X with X(i, j) = g[i + q j].
  DenseMatrix x(q, p);
  for (std::size_t j = 0; j < p; ++j)
    for (std::size_t i = 0; i < q; ++i) x(i, j) = g[i + q * j];

  // (A ⊗ B) vec(X) = vec(B X A^T); every transform below is symmetric or
  // orthogonal, so each Kronecker factor acts from one side of X.
  DenseMatrix y = matmul(matmul(b2_is, x), a2_is);
  y = matmul(apply_t(eb.eigenvectors, y), ea.eigenvectors);
  for (std::size_t i = 0; i < q; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      const double denom = ea.eigenvalues[j] * eb.eigenvalues[i] + 1.0;
      require(denom > 0.0, ErrorCode::not_psd, "kron_sum_solve: Kronecker sum is not PD");
      y(i, j) /= denom;
    }
  y = matmul_nt(matmul(eb.eigenvectors, y), ea.eigenvectors);
  y = matmul(matmul(b2_is, y), a2_is);

  Vector v(p * q);
  for (std::size_t j = 0; j < p; ++j)
    for (std::size_t i = 0; i < q; ++i) v[i + q * j] = y(i, j);
  return v;
}

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid argument";
    case ErrorCode::dimension: return "dimension error";
    case ErrorCode::numerical: return "numerical error";
    case ErrorCode::not_psd: return "matrix not positive semi-definite";
    case ErrorCode::capacity: return "capacity exceeded";
    case ErrorCode::line_search_failure: return "line search failure";
    case ErrorCode::io: return "i/o error";
  }
  return "unknown error";
}

}  // namespace kfacpinn
