#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace kfacpinn {

using Vector = std::vector<double>;

/// Dense real matrix stored row-major.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

  static DenseMatrix identity(std::size_t n);
  static DenseMatrix diagonal(std::span<const double> diag);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool is_square() const noexcept { return rows_ == cols_; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* row(std::size_t i) { return data_.data() + i * cols_; }
  const double* row(std::size_t i) const { return data_.data() + i * cols_; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  void set_zero();
  DenseMatrix transposed() const;
  double max_abs() const;
  bool all_finite() const;

  DenseMatrix& operator+=(const DenseMatrix& other);
  DenseMatrix& operator-=(const DenseMatrix& other);
  DenseMatrix& operator*=(double s);

  bool operator==(const DenseMatrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b);
DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b);
DenseMatrix operator*(double s, DenseMatrix a);

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
/// a * b^T
DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b);
/// a^T * b
DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b);
Vector matvec(const DenseMatrix& a, std::span<const double> x);
Vector matvec_t(const DenseMatrix& a, std::span<const double> x);

/// Kronecker product a ⊗ b.
DenseMatrix kron(const DenseMatrix& a, const DenseMatrix& b);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
/// y += s * x
void axpy(double s, std::span<const double> x, std::span<double> y);

/// Largest |m_ij - m_ji|.
double asymmetry(const DenseMatrix& m);

/// Symmetric eigendecomposition. Eigenvalues ascending; eigenvector k is column k.
struct SymEig {
  Vector eigenvalues;
  DenseMatrix eigenvectors;
};

SymEig sym_eig(const DenseMatrix& m);

/// Q diag((max(λ,0) + jitter)^{-1/2}) Q^T.
DenseMatrix inv_sqrt_psd(const DenseMatrix& m, double jitter = 0.0);

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix; eigenvalues at or
/// below rcond * λ_max are treated as zero.
DenseMatrix pinv(const DenseMatrix& m, double rcond);

/// Solves (A1 ⊗ B1 + A2 ⊗ B2) v = g with A* of size p, B* of size q.
/// g and v are column-stacked vectors of q x p matrices (first index fastest).
Vector kron_sum_solve(const DenseMatrix& a1, const DenseMatrix& b1,
                      const DenseMatrix& a2, const DenseMatrix& b2,
                      std::span<const double> g);

}  // namespace kfacpinn
