#include "kfacpinn/pde.hpp"

#include <cmath>
#include <numbers>

#include "kfacpinn/error.hpp"
#include "kfacpinn/rng.hpp"

namespace kfacpinn {

namespace {

constexpr double kPi = std::numbers::pi;

double fp_variance(double t) { return 2.0 - std::exp(-t); }

void fill_uniform(Rng& rng, const PdeProblem& p, double* row) {
  for (std::size_t i = 0; i < p.dim; ++i) row[i] = rng.uniform(p.lo[i], p.hi[i]);
}

// Moves a uniformly drawn point onto a face spanned by coordinates >= first,
// choosing the face with probability proportional to its measure.
void project_to_face(Rng& rng, const PdeProblem& p, std::size_t first, double* row) {
  Vector measure(p.dim - first);
  double total = 0.0;
  for (std::size_t c = first; c < p.dim; ++c) {
    double m = 1.0;
    for (std::size_t j = first; j < p.dim; ++j)
      if (j != c) m *= p.hi[j] - p.lo[j];
    measure[c - first] = m;
    total += m;
  }
  double pick = rng.uniform() * total;
  std::size_t coord = p.dim - 1;
  for (std::size_t c = first; c < p.dim; ++c) {
    if (pick < measure[c - first]) {
      coord = c;
      break;
    }
    pick -= measure[c - first];
  }
  row[coord] = rng.below(2) == 0 ? p.lo[coord] : p.hi[coord];
}

}  // namespace

const std::vector<std::string>& problem_names() {
  static const std::vector<std::string> names{"poisson2d_sin",  "poisson_cos_sum", "poisson_harmonic_mixed",
                                              "poisson_norm2",  "heat",            "log_fokker_planck"};
  return names;
}

PdeProblem make_problem(const std::string& name, const ProblemParams& params) {
  PdeProblem p;
  p.name = name;
  std::size_t d = params.dim;
  if (name == "poisson2d_sin") {
    require(d == 0 || d == 2, ErrorCode::invalid_argument, "poisson2d_sin is two-dimensional");
    p.kind = ProblemKind::poisson2d_sin;
    d = 2;
  } else if (name == "poisson_cos_sum") {
    p.kind = ProblemKind::poisson_cos_sum;
    if (d == 0) d = 5;
  } else if (name == "poisson_harmonic_mixed") {
    p.kind = ProblemKind::poisson_harmonic_mixed;
    if (d == 0) d = 10;
    require(d % 2 == 0, ErrorCode::invalid_argument, "poisson_harmonic_mixed needs an even dimension");
  } else if (name == "poisson_norm2") {
    p.kind = ProblemKind::poisson_norm2;
    if (d == 0) d = 100;
  } else if (name == "heat") {
    p.kind = ProblemKind::heat;
    if (d == 0) d = 1;
    require(params.kappa == 0.25, ErrorCode::invalid_argument,
            "heat: the catalog solution is exact only for kappa = 0.25");
  } else if (name == "log_fokker_planck") {
    p.kind = ProblemKind::log_fokker_planck;
    if (d == 0) d = 9;
  } else {
    fail(ErrorCode::invalid_argument, "unknown problem '" + name + "'");
  }

  p.spatial_dim = d;
  p.kappa = params.kappa;
  if (p.time_dependent()) {
    p.dim = d + 1;
    std::vector<bool> mask(p.dim, true);
    mask[0] = false;
    p.coeffs = OperatorCoeffs::partial_laplacian(mask);
    const double bound = p.kind == ProblemKind::log_fokker_planck ? 5.0 : 0.0;
    p.lo.assign(p.dim, p.kind == ProblemKind::log_fokker_planck ? -bound : 0.0);
    p.hi.assign(p.dim, p.kind == ProblemKind::log_fokker_planck ? bound : 1.0);
    p.lo[0] = 0.0;
    p.hi[0] = 1.0;
    p.boundary = p.kind == ProblemKind::heat ? BoundaryKind::heat : BoundaryKind::initial;
  } else {
    p.dim = d;
    p.coeffs = OperatorCoeffs::laplacian(d);
    p.lo.assign(d, 0.0);
    p.hi.assign(d, 1.0);
    p.boundary = BoundaryKind::faces;
  }
  return p;
}

double PdeProblem::residual(std::span<const double> x, double u, std::span<const double> grad,
                            double op) const {
  (void)u;
  switch (kind) {
    case ProblemKind::poisson2d_sin:
      return -op - 2.0 * kPi * kPi * std::sin(kPi * x[0]) * std::sin(kPi * x[1]);
    case ProblemKind::poisson_cos_sum: {
      double f = 0.0;
      for (double xi : x) f += std::cos(kPi * xi);
      return -op - kPi * kPi * f;
    }
    case ProblemKind::poisson_harmonic_mixed:
      return -op;
    case ProblemKind::poisson_norm2:
      return -op + 2.0 * static_cast<double>(dim);
    case ProblemKind::heat:
      return grad[0] - kappa * op;
    case ProblemKind::log_fokker_planck: {
      double r = grad[0] - 0.5 * static_cast<double>(spatial_dim) - op;
      for (std::size_t i = 1; i < dim; ++i) r -= 0.5 * grad[i] * x[i] + grad[i] * grad[i];
      return r;
    }
  }
  return 0.0;
}

void PdeProblem::residual_jacobian(std::span<const double> x, double u, std::span<const double> grad,
                                   double op, std::span<double> out) const {
  (void)u;
  (void)op;
  require(out.size() == dim + 2, ErrorCode::dimension, "residual_jacobian: output length mismatch");
  std::fill(out.begin(), out.end(), 0.0);
  double& d_op = out[dim + 1];
  switch (kind) {
    case ProblemKind::poisson2d_sin:
    case ProblemKind::poisson_cos_sum:
    case ProblemKind::poisson_harmonic_mixed:
    case ProblemKind::poisson_norm2:
      d_op = -1.0;
      break;
    case ProblemKind::heat:
      out[1] = 1.0;
      d_op = -kappa;
      break;
    case ProblemKind::log_fokker_planck:
      out[1] = 1.0;
      for (std::size_t i = 1; i < dim; ++i) out[1 + i] = -0.5 * x[i] - 2.0 * grad[i];
      d_op = -1.0;
      break;
  }
}

double PdeProblem::true_solution(std::span<const double> x) const {
  switch (kind) {
    case ProblemKind::poisson2d_sin:
      return std::sin(kPi * x[0]) * std::sin(kPi * x[1]);
    case ProblemKind::poisson_cos_sum: {
      double s = 0.0;
      for (double xi : x) s += std::cos(kPi * xi);
      return s;
    }
    case ProblemKind::poisson_harmonic_mixed: {
      double s = 0.0;
      for (std::size_t k = 0; k + 1 < dim; k += 2) s += x[k] * x[k + 1];
      return s;
    }
    case ProblemKind::poisson_norm2: {
      double s = 0.0;
      for (double xi : x) s += xi * xi;
      return s;
    }
    case ProblemKind::heat: {
      const double t = x[0];
      if (spatial_dim == 4) {
        double s = 0.0;
        for (std::size_t i = 1; i < dim; ++i) s += std::sin(2.0 * x[i]);
        return std::exp(-t) * s;
      }
      double prod = std::exp(-kPi * kPi * static_cast<double>(spatial_dim) * t / 4.0);
      for (std::size_t i = 1; i < dim; ++i) prod *= std::sin(kPi * x[i]);
      return prod;
    }
    case ProblemKind::log_fokker_planck: {
      const double var = fp_variance(x[0]);
      double r2 = 0.0;
      for (std::size_t i = 1; i < dim; ++i) r2 += x[i] * x[i];
      return -0.5 * static_cast<double>(spatial_dim) * std::log(2.0 * kPi * var) - r2 / (2.0 * var);
    }
  }
  return 0.0;
}

Batch sample_batch(const PdeProblem& problem, std::size_t n_interior, std::size_t n_boundary,
                   std::uint64_t seed, std::uint64_t index) {
  Batch b{DenseMatrix(n_interior, problem.dim), DenseMatrix(n_boundary, problem.dim), Vector(n_boundary)};
  Rng interior(seed, StreamTag::interior, index);
  for (std::size_t n = 0; n < n_interior; ++n) fill_uniform(interior, problem, b.interior.row(n));

  Rng boundary(seed, StreamTag::boundary, index);
  const std::size_t n_initial = problem.boundary == BoundaryKind::heat ? n_boundary / 2 : 0;
  for (std::size_t n = 0; n < n_boundary; ++n) {
    double* row = b.boundary.row(n);
    fill_uniform(boundary, problem, row);
    switch (problem.boundary) {
      case BoundaryKind::faces:
        project_to_face(boundary, problem, 0, row);
        break;
      case BoundaryKind::heat:
        if (n < n_initial)
          row[0] = problem.lo[0];
        else
          project_to_face(boundary, problem, 1, row);
        break;
      case BoundaryKind::initial:
        row[0] = problem.lo[0];
        break;
    }
    b.targets[n] = problem.boundary_target({row, problem.dim});
  }
  return b;
}

DenseMatrix sample_eval_points(const PdeProblem& problem, std::size_t n, std::uint64_t seed) {
  DenseMatrix pts(n, problem.dim);
  Rng rng(seed, StreamTag::eval);
  for (std::size_t k = 0; k < n; ++k) fill_uniform(rng, problem, pts.row(k));
  return pts;
}

InteriorEval interior_loss_and_residuals(const PdeProblem& problem, const Parameters& params,
                                         const Batch& batch) {
  require(batch.interior.cols() == problem.dim, ErrorCode::dimension, "interior batch dimension mismatch");
  InteriorEval e;
  const std::size_t n = batch.interior.rows();
  const std::size_t s = problem.dim + 2;
  e.residuals.assign(n, 0.0);
  e.jac = DenseMatrix(n, s);
  if (n == 0) return e;
  e.fwd = taylor_forward(params, batch.interior, problem.coeffs);
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::span<const double> x(batch.interior.row(k), problem.dim);
    std::span<const double> g(e.fwd.out.grad.row(k), problem.dim);
    e.residuals[k] = problem.residual(x, e.fwd.out.u[k], g, e.fwd.out.op[k]);
    problem.residual_jacobian(x, e.fwd.out.u[k], g, e.fwd.out.op[k], {e.jac.row(k), s});
    sum += e.residuals[k] * e.residuals[k];
  }
  e.loss = sum / (2.0 * static_cast<double>(n));
  return e;
}

BoundaryEval boundary_loss(const PdeProblem& problem, const Parameters& params, const Batch& batch) {
  require(batch.boundary.cols() == problem.dim && batch.targets.size() == batch.boundary.rows(),
          ErrorCode::dimension, "boundary batch shape mismatch");
  BoundaryEval e;
  const std::size_t n = batch.boundary.rows();
  e.residuals.assign(n, 0.0);
  if (n == 0) return e;
  e.fwd = forward_batch(params, batch.boundary);
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    e.residuals[k] = e.fwd.output(k) - batch.targets[k];
    sum += e.residuals[k] * e.residuals[k];
  }
  e.loss = sum / (2.0 * static_cast<double>(n));
  return e;
}

LossParts batch_loss(const PdeProblem& problem, const Parameters& params, const Batch& batch) {
  require(batch.interior.cols() == problem.dim, ErrorCode::dimension, "interior batch dimension mismatch");
  const std::size_t n = batch.interior.rows();
  double interior = 0.0;
  if (n > 0) {
    const TaylorOutputs out = taylor_outputs(params, batch.interior, problem.coeffs);
    double sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double r = problem.residual({batch.interior.row(k), problem.dim}, out.u[k],
                                        {out.grad.row(k), problem.dim}, out.op[k]);
      sum += r * r;
    }
    interior = sum / (2.0 * static_cast<double>(n));
  }
  return {interior, boundary_loss(problem, params, batch).loss};
}

LossGradient loss_and_gradient(const PdeProblem& problem, const Parameters& params, const Batch& batch) {
  LossGradient out;
  out.interior = interior_loss_and_residuals(problem, params, batch);
  out.boundary = boundary_loss(problem, params, batch);
  out.loss = {out.interior.loss, out.boundary.loss};
  out.grad = zeros_like(params);

  const std::size_t ni = batch.interior.rows();
  if (ni > 0) {
    DenseMatrix seeds = out.interior.jac;
    for (std::size_t k = 0; k < ni; ++k) {
      const double w = out.interior.residuals[k] / static_cast<double>(ni);
      for (std::size_t c = 0; c < seeds.cols(); ++c) seeds(k, c) *= w;
    }
    out.grad = taylor_backward(params, out.interior.fwd.states, seeds, problem.coeffs).param_grad;
  }
  const std::size_t nb = batch.boundary.rows();
  if (nb > 0) {
    Vector w(nb);
    for (std::size_t k = 0; k < nb; ++k) w[k] = out.boundary.residuals[k] / static_cast<double>(nb);
    const Parameters gb = backward_batch(params, out.boundary.fwd, w).param_grad;
    for (std::size_t l = 0; l < gb.layers.size(); ++l) {
      out.grad.layers[l].weight += gb.layers[l].weight;
      axpy(1.0, gb.layers[l].bias, out.grad.layers[l].bias);
    }
  }
  return out;
}

double relative_l2(std::span<const double> pred, std::span<const double> ref) {
  require(pred.size() == ref.size(), ErrorCode::dimension, "relative_l2: length mismatch");
  require(!ref.empty(), ErrorCode::invalid_argument, "relative_l2 needs at least one point");
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < ref.size(); ++k) {
    const double diff = pred[k] - ref[k];
    num += diff * diff;
    den += ref[k] * ref[k];
  }
  require(den > 0.0, ErrorCode::numerical, "relative_l2: true solution vanishes on the evaluation set");
  return std::sqrt(num / den);
}

double relative_l2(const Parameters& params, const PdeProblem& problem, const DenseMatrix& points) {
  require(points.rows() >= 1, ErrorCode::invalid_argument, "relative_l2 needs at least one point");
  const BatchForward fwd = forward_batch(params, points);
  Vector pred(points.rows()), ref(points.rows());
  for (std::size_t k = 0; k < points.rows(); ++k) {
    pred[k] = fwd.output(k);
    ref[k] = problem.true_solution({points.row(k), problem.dim});
  }
  return relative_l2(pred, ref);
}

}  // namespace kfacpinn
