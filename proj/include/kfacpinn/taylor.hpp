#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "kfacpinn/linalg.hpp"
#include "kfacpinn/network.hpp"

namespace kfacpinn {

/// Coefficients of the second-order operator L = Σ_ij c_ij ∂²/∂x_i∂x_j.
class OperatorCoeffs {
 public:
  OperatorCoeffs() = default;
  explicit OperatorCoeffs(DenseMatrix c);

  static OperatorCoeffs laplacian(std::size_t d);
  /// Laplacian over the coordinates whose mask entry is true.
  static OperatorCoeffs partial_laplacian(const std::vector<bool>& mask);

  std::size_t dim() const { return c_.rows(); }
  const DenseMatrix& matrix() const { return c_; }

  /// Non-zero upper-triangle entries, off-diagonal weights doubled, so that
  /// Σ_terms weight * a_i * a_j == Σ_ij c_ij a_i a_j.
  struct Term {
    std::size_t i, j;
    double weight;
  };
  const std::vector<Term>& terms() const { return terms_; }

  /// Σ_ij c_ij a_i a_j for contiguous a.
  double quadratic_form(const double* a) const {
    double q = 0.0;
    for (const Term& t : terms_) q += t.weight * a[t.i] * a[t.j];
    return q;
  }

 private:
  DenseMatrix c_;
  std::vector<Term> terms_;
};

/// Per-state Taylor matrices of a batch of N samples. Each state is an
/// h x (N S) matrix with S = d + 2; the columns of sample n are
/// n S + {0: value, 1..d: ∂_x1..∂_xd, d+1: operator}.
struct TaylorState {
  std::size_t num_samples = 0;
  std::size_t dim = 0;
  std::vector<DenseMatrix> layers;

  std::size_t columns_per_sample() const { return dim + 2; }
  std::size_t col(std::size_t n, std::size_t s) const { return n * (dim + 2) + s; }
};

/// Network outputs read from the last state.
struct TaylorOutputs {
  Vector u;           // N
  DenseMatrix grad;   // N x d
  Vector op;          // N
};

DenseMatrix taylor_input(const DenseMatrix& points);

DenseMatrix taylor_forward_linear(const DenseMatrix& weight, std::span<const double> bias,
                                  const DenseMatrix& zin, std::size_t columns_per_sample);

/// `derivs` holds σ..σ''' at the value entries of `zin`, unit-major
/// (entry i N + n for unit i of sample n).
DenseMatrix taylor_forward_activation(const ActivationDerivs& derivs, const DenseMatrix& zin,
                                      const OperatorCoeffs& coeffs);

struct TaylorForward {
  TaylorState states;
  TaylorOutputs out;
};

/// `points` holds one sample per row.
TaylorForward taylor_forward(const Parameters& p, const DenseMatrix& points,
                             const OperatorCoeffs& coeffs);

/// Outputs only, without keeping the states; cheaper for loss evaluation.
TaylorOutputs taylor_outputs(const Parameters& p, const DenseMatrix& points, const OperatorCoeffs& coeffs);

struct TaylorGrads {
  std::vector<DenseMatrix> state_grads;  // mirrors TaylorState::layers
  Parameters param_grad;
};

/// Reverse pass. `seeds` is N x S: per sample the cotangent of
/// (u, ∇u, Lu). `sample_weights` (empty = all ones) scales each sample's
/// contribution to param_grad only; state_grads stay unweighted.
TaylorGrads taylor_backward(const Parameters& p, const TaylorState& states,
                            const DenseMatrix& seeds, const OperatorCoeffs& coeffs,
                            std::span<const double> sample_weights = {});

/// Tangent of the output columns along the parameter direction `tangent`;
/// returns N x S.
DenseMatrix taylor_jvp(const Parameters& p, const TaylorState& states, const Parameters& tangent,
                       const OperatorCoeffs& coeffs);

}  // namespace kfacpinn
