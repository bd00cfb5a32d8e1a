#include "kfacpinn/taylor.hpp"

#include <algorithm>

#include "kfacpinn/error.hpp"

namespace kfacpinn {

OperatorCoeffs::OperatorCoeffs(DenseMatrix c) : c_(std::move(c)) {
  require(c_.is_square(), ErrorCode::dimension, "operator coefficients must be square");
  require(asymmetry(c_) <= 1e-12 * std::max(1.0, c_.max_abs()), ErrorCode::invalid_argument,
          "operator coefficients must be symmetric");
  for (std::size_t i = 0; i < c_.rows(); ++i)
    for (std::size_t j = i; j < c_.cols(); ++j) {
      const double v = c_(i, j);
      if (v != 0.0) terms_.push_back({i, j, i == j ? v : 2.0 * v});
    }
}

OperatorCoeffs OperatorCoeffs::laplacian(std::size_t d) {
  return OperatorCoeffs(DenseMatrix::identity(d));
}

OperatorCoeffs OperatorCoeffs::partial_laplacian(const std::vector<bool>& mask) {
  DenseMatrix c(mask.size(), mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) c(i, i) = mask[i] ? 1.0 : 0.0;
  return OperatorCoeffs(std::move(c));
}

DenseMatrix taylor_input(const DenseMatrix& points) {
  const std::size_t n = points.rows();
  const std::size_t d = points.cols();
  const std::size_t s = d + 2;
  DenseMatrix z(d, n * s);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < d; ++i) {
      z(i, k * s) = points(k, i);
      z(i, k * s + 1 + i) = 1.0;
    }
  return z;
}

DenseMatrix taylor_forward_linear(const DenseMatrix& weight, std::span<const double> bias,
                                  const DenseMatrix& zin, std::size_t columns_per_sample) {
  require(weight.cols() == zin.rows() && bias.size() == weight.rows(), ErrorCode::dimension,
          "taylor_forward_linear: shape mismatch");
  require(columns_per_sample > 0 && zin.cols() % columns_per_sample == 0, ErrorCode::dimension,
          "taylor_forward_linear: column count is not a multiple of S");
  DenseMatrix out = matmul(weight, zin);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    double* oi = out.row(i);
    for (std::size_t c = 0; c < out.cols(); c += columns_per_sample) oi[c] += bias[i];
  }
  return out;
}

DenseMatrix taylor_forward_activation(const ActivationDerivs& derivs, const DenseMatrix& zin,
                                      const OperatorCoeffs& coeffs) {
  const std::size_t d = coeffs.dim();
  const std::size_t s = d + 2;
  require(zin.cols() % s == 0, ErrorCode::dimension,
          "taylor_forward_activation: column count does not match operator dimension");
  const std::size_t n = zin.cols() / s;
  const std::size_t h = zin.rows();
  require(derivs.s0.size() == h * n && derivs.s1.size() == h * n && derivs.s2.size() == h * n,
          ErrorCode::dimension, "taylor_forward_activation: derivative count mismatch");
  DenseMatrix out(h, zin.cols());
  for (std::size_t r = 0; r < h; ++r) {
    const double* in = zin.row(r);
    double* o = out.row(r);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t idx = r * n + k;
      const double s1 = derivs.s1[idx];
      const double s2 = derivs.s2[idx];
      const std::size_t base = k * s;
      o[base] = derivs.s0[idx];
      for (std::size_t i = 1; i <= d; ++i) o[base + i] = s1 * in[base + i];
      o[base + d + 1] = s1 * in[base + d + 1] + s2 * coeffs.quadratic_form(in + base + 1);
    }
  }
  return out;
}

namespace {

// Fused taylor_forward_activation: σ and its derivatives are taken from one
// tanh evaluation per value entry.
DenseMatrix activate(const DenseMatrix& zin, const OperatorCoeffs& coeffs) {
  const std::size_t d = coeffs.dim();
  const std::size_t s = d + 2;
  const std::size_t n = zin.cols() / s;
  DenseMatrix out(zin.rows(), zin.cols());
  for (std::size_t r = 0; r < zin.rows(); ++r) {
    const double* in = zin.row(r);
    double* o = out.row(r);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t base = k * s;
      const ActivationPoint a = tanh_point(in[base]);
      o[base] = a.s0;
      for (std::size_t i = 1; i <= d; ++i) o[base + i] = a.s1 * in[base + i];
      o[base + d + 1] = a.s1 * in[base + d + 1] + a.s2 * coeffs.quadratic_form(in + base + 1);
    }
  }
  return out;
}

TaylorState forward_states(const Parameters& p, const DenseMatrix& points, const OperatorCoeffs& coeffs) {
  const std::size_t d = p.arch.input_dim();
  require(points.cols() == d, ErrorCode::dimension, "taylor_forward: input dimension mismatch");
  require(coeffs.dim() == d, ErrorCode::dimension, "taylor_forward: operator dimension mismatch");
  const std::size_t s = d + 2;
  TaylorState st;
  st.num_samples = points.rows();
  st.dim = d;
  st.layers.reserve(num_states(p.arch));
  st.layers.push_back(taylor_input(points));
  const std::size_t nl = p.layers.size();
  for (std::size_t k = 0; k < nl; ++k) {
    st.layers.push_back(taylor_forward_linear(p.layers[k].weight, p.layers[k].bias, st.layers.back(), s));
    if (k + 1 < nl) st.layers.push_back(activate(st.layers.back(), coeffs));
  }
  return st;
}

void read_outputs(const DenseMatrix& last, std::size_t d, std::size_t offset, TaylorOutputs& out) {
  const std::size_t s = d + 2;
  const std::size_t n = last.cols() / s;
  for (std::size_t k = 0; k < n; ++k) {
    out.u[offset + k] = last(0, k * s);
    for (std::size_t i = 0; i < d; ++i) out.grad(offset + k, i) = last(0, k * s + 1 + i);
    out.op[offset + k] = last(0, k * s + d + 1);
  }
}

}  // namespace

TaylorForward taylor_forward(const Parameters& p, const DenseMatrix& points,
                             const OperatorCoeffs& coeffs) {
  TaylorForward f;
  f.states = forward_states(p, points, coeffs);
  const std::size_t n = points.rows();
  const std::size_t d = f.states.dim;
  f.out = {Vector(n), DenseMatrix(n, d), Vector(n)};
  read_outputs(f.states.layers.back(), d, 0, f.out);
  return f;
}

TaylorOutputs taylor_outputs(const Parameters& p, const DenseMatrix& points, const OperatorCoeffs& coeffs) {
  // Chunks keep the intermediate states cache-resident.
  constexpr std::size_t kChunk = 64;
  const std::size_t n = points.rows();
  const std::size_t d = points.cols();
  require(d == p.arch.input_dim() && coeffs.dim() == d, ErrorCode::dimension,
          "taylor_outputs: dimension mismatch");
  TaylorOutputs out{Vector(n), DenseMatrix(n, d), Vector(n)};
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t m = std::min(kChunk, n - start);
    DenseMatrix chunk(m, d);
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t i = 0; i < d; ++i) chunk(k, i) = points(start + k, i);
    read_outputs(forward_states(p, chunk, coeffs).layers.back(), d, start, out);
  }
  return out;
}

TaylorGrads taylor_backward(const Parameters& p, const TaylorState& states,
                            const DenseMatrix& seeds, const OperatorCoeffs& coeffs,
                            std::span<const double> sample_weights) {
  const std::size_t d = states.dim;
  const std::size_t s = d + 2;
  const std::size_t n = states.num_samples;
  require(states.layers.size() == num_states(p.arch), ErrorCode::dimension,
          "taylor_backward: state count does not match network");
  require(seeds.rows() == n && seeds.cols() == s, ErrorCode::dimension,
          "taylor_backward: seed shape mismatch");
  require(sample_weights.empty() || sample_weights.size() == n, ErrorCode::dimension,
          "taylor_backward: weight count mismatch");
  require(coeffs.dim() == d, ErrorCode::dimension, "taylor_backward: operator dimension mismatch");

  TaylorGrads g;
  g.state_grads.resize(states.layers.size());
  g.param_grad = zeros_like(p);

  DenseMatrix grad(1, n * s);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t c = 0; c < s; ++c) grad(0, k * s + c) = seeds(k, c);

  const std::size_t nl = p.layers.size();
  for (std::size_t layer = nl; layer-- > 0;) {
    const auto& l = p.layers[layer];
    const DenseMatrix& input = states.layers[linear_input_state(layer)];
    g.state_grads[linear_output_state(layer)] = grad;

    auto& pg = g.param_grad.layers[layer];
    if (sample_weights.empty()) {
      pg.weight = matmul_nt(grad, input);
      for (std::size_t i = 0; i < grad.rows(); ++i) {
        double b = 0.0;
        for (std::size_t k = 0; k < n; ++k) b += grad(i, k * s);
        pg.bias[i] = b;
      }
    } else {
      DenseMatrix weighted = grad;
      for (std::size_t i = 0; i < weighted.rows(); ++i) {
        double* wi = weighted.row(i);
        double b = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          for (std::size_t c = 0; c < s; ++c) wi[k * s + c] *= sample_weights[k];
          b += wi[k * s];
        }
        pg.bias[i] = b;
      }
      pg.weight = matmul_nt(weighted, input);
    }

    DenseMatrix in_grad = matmul_tn(l.weight, grad);
    if (layer == 0) {
      g.state_grads[0] = std::move(in_grad);
      break;
    }
    g.state_grads[linear_input_state(layer)] = in_grad;

    // Activation between linear layer-1 and linear layer.
    const DenseMatrix& zin = states.layers[linear_output_state(layer - 1)];
    const DenseMatrix& post = states.layers[linear_input_state(layer)];
    const std::size_t h = zin.rows();
    DenseMatrix out_grad(h, n * s);
    for (std::size_t r = 0; r < h; ++r) {
      const double* zr = zin.row(r);
      const double* tr = post.row(r);
      const double* gr = in_grad.row(r);
      double* o = out_grad.row(r);
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t base = k * s;
        const ActivationPoint a = tanh_from_value(tr[base]);
        const double* gi = zr + base + 1;       // ∂_i z
        const double* gbar = gr + base + 1;     // cotangents of ∂_i z_out
        const double lbar = gr[base + d + 1];
        const double ell = zr[base + d + 1];

        o[base + d + 1] = a.s1 * lbar;
        for (std::size_t i = 0; i < d; ++i) o[base + 1 + i] = a.s1 * gbar[i];
        const double w = a.s2 * lbar;
        for (const auto& t : coeffs.terms()) {
          if (t.i == t.j) {
            o[base + 1 + t.i] += 2.0 * t.weight * w * gi[t.i];
          } else {
            o[base + 1 + t.i] += t.weight * w * gi[t.j];
            o[base + 1 + t.j] += t.weight * w * gi[t.i];
          }
        }
        double cross = 0.0;
        for (std::size_t i = 0; i < d; ++i) cross += gi[i] * gbar[i];
        o[base] = a.s1 * gr[base] + a.s2 * cross + a.s2 * ell * lbar +
                  a.s3 * coeffs.quadratic_form(gi) * lbar;
      }
    }
    grad = std::move(out_grad);
  }
  return g;
}

DenseMatrix taylor_jvp(const Parameters& p, const TaylorState& states, const Parameters& tangent,
                       const OperatorCoeffs& coeffs) {
  const std::size_t d = states.dim;
  const std::size_t s = d + 2;
  const std::size_t n = states.num_samples;
  require(states.layers.size() == num_states(p.arch), ErrorCode::dimension,
          "taylor_jvp: state count does not match network");
  tangent.check_shapes();
  require(tangent.arch.widths == p.arch.widths, ErrorCode::dimension,
          "taylor_jvp: tangent shape mismatch");

  DenseMatrix dz(d, n * s);  // input does not depend on θ
  const std::size_t nl = p.layers.size();
  for (std::size_t layer = 0; layer < nl; ++layer) {
    const DenseMatrix& zin = states.layers[linear_input_state(layer)];
    DenseMatrix out = matmul(tangent.layers[layer].weight, zin);
    out += matmul(p.layers[layer].weight, dz);
    for (std::size_t i = 0; i < out.rows(); ++i)
      for (std::size_t k = 0; k < n; ++k) out(i, k * s) += tangent.layers[layer].bias[i];
    if (layer + 1 == nl) {
      dz = std::move(out);
      break;
    }

    const DenseMatrix& pre = states.layers[linear_output_state(layer)];
    const DenseMatrix& post = states.layers[linear_input_state(layer + 1)];
    DenseMatrix act(out.rows(), n * s);
    for (std::size_t r = 0; r < out.rows(); ++r) {
      const double* zr = pre.row(r);
      const double* pr = post.row(r);
      const double* tr = out.row(r);
      double* o = act.row(r);
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t base = k * s;
        const ActivationPoint a = tanh_from_value(pr[base]);
        const double zdot = tr[base];
        const double* gi = zr + base + 1;
        const double* gdot = tr + base + 1;
        o[base] = a.s1 * zdot;
        for (std::size_t i = 0; i < d; ++i) o[base + 1 + i] = a.s2 * zdot * gi[i] + a.s1 * gdot[i];
        double qdot = 0.0;
        for (const auto& t : coeffs.terms()) qdot += t.weight * (gdot[t.i] * gi[t.j] + gi[t.i] * gdot[t.j]);
        o[base + d + 1] = a.s2 * zdot * zr[base + d + 1] + a.s1 * tr[base + d + 1] +
                          a.s3 * zdot * coeffs.quadratic_form(gi) + a.s2 * qdot;
      }
    }
    dz = std::move(act);
  }

  DenseMatrix result(n, s);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t c = 0; c < s; ++c) result(k, c) = dz(0, k * s + c);
  return result;
}

}  // namespace kfacpinn
