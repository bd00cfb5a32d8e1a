#include "kfacpinn/network.hpp"

#include <cmath>
#include <fstream>
#include "json.hpp"

#include "kfacpinn/error.hpp"
#include "kfacpinn/rng.hpp"

namespace kfacpinn {

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  fail(ErrorCode::invalid_argument, "unknown activation '" + name + "'");
}

std::string to_string(Activation act) {
  switch (act) {
    case Activation::tanh: return "tanh";
  }
  return "unknown";
}

void Architecture::validate() const {
  require(widths.size() >= 2, ErrorCode::invalid_argument,
          "architecture needs at least an input and an output width");
  for (std::size_t w : widths)
    require(w >= 1, ErrorCode::invalid_argument, "layer widths must be >= 1");
  require(widths.back() == 1, ErrorCode::invalid_argument, "final width must be 1");
}

std::size_t Architecture::num_params() const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < num_linear(); ++k) n += layer_size(k);
  return n;
}

bool Parameters::all_finite() const {
  for (const auto& l : layers) {
    if (!l.weight.all_finite()) return false;
    for (double b : l.bias)
      if (!std::isfinite(b)) return false;
  }
  return true;
}

void Parameters::check_shapes() const {
  arch.validate();
  require(layers.size() == arch.num_linear(), ErrorCode::dimension, "layer count mismatch");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    require(layers[k].weight.rows() == arch.widths[k + 1] &&
                layers[k].weight.cols() == arch.widths[k] &&
                layers[k].bias.size() == arch.widths[k + 1],
            ErrorCode::dimension, "layer " + std::to_string(k) + " has inconsistent shape");
  }
}

Parameters zeros_like(const Parameters& p) {
  Parameters z;
  z.arch = p.arch;
  z.layers.reserve(p.layers.size());
  for (const auto& l : p.layers)
    z.layers.push_back({DenseMatrix(l.weight.rows(), l.weight.cols()), Vector(l.bias.size(), 0.0)});
  return z;
}

Parameters init_params(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  Parameters p;
  p.arch = arch;
  Rng rng(seed, StreamTag::init);
  for (std::size_t k = 0; k < arch.num_linear(); ++k) {
    const std::size_t in = arch.widths[k];
    const std::size_t out = arch.widths[k + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    LinearLayer layer{DenseMatrix(out, in), Vector(out)};
    for (double& w : layer.weight.data()) w = rng.uniform(-bound, bound);
    for (double& b : layer.bias) b = rng.uniform(-bound, bound);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

std::size_t layer_offset(const Architecture& arch, std::size_t k) {
  std::size_t off = 0;
  for (std::size_t j = 0; j < k; ++j) off += arch.layer_size(j);
  return off;
}

Vector flatten(const Parameters& p) {
  Vector flat(p.size());
  std::size_t off = 0;
  for (const auto& l : p.layers) {
    const std::size_t rows = l.weight.rows();
    const std::size_t cols = l.weight.cols();
    for (std::size_t j = 0; j < cols; ++j)
      for (std::size_t i = 0; i < rows; ++i) flat[off + i + rows * j] = l.weight(i, j);
    for (std::size_t i = 0; i < rows; ++i) flat[off + i + rows * cols] = l.bias[i];
    off += rows * (cols + 1);
  }
  return flat;
}

void unflatten(std::span<const double> flat, Parameters& p) {
  require(flat.size() == p.size(), ErrorCode::dimension, "flat parameter length mismatch");
  std::size_t off = 0;
  for (auto& l : p.layers) {
    const std::size_t rows = l.weight.rows();
    const std::size_t cols = l.weight.cols();
    for (std::size_t j = 0; j < cols; ++j)
      for (std::size_t i = 0; i < rows; ++i) l.weight(i, j) = flat[off + i + rows * j];
    for (std::size_t i = 0; i < rows; ++i) l.bias[i] = flat[off + i + rows * cols];
    off += rows * (cols + 1);
  }
}

Parameters add_scaled(const Parameters& p, double alpha, std::span<const double> direction) {
  require(direction.size() == p.size(), ErrorCode::dimension, "direction length mismatch");
  Parameters out = p;
  std::size_t off = 0;
  for (auto& l : out.layers) {
    const std::size_t rows = l.weight.rows();
    const std::size_t cols = l.weight.cols();
    for (std::size_t j = 0; j < cols; ++j)
      for (std::size_t i = 0; i < rows; ++i) l.weight(i, j) += alpha * direction[off + i + rows * j];
    for (std::size_t i = 0; i < rows; ++i) l.bias[i] += alpha * direction[off + i + rows * cols];
    off += rows * (cols + 1);
  }
  return out;
}

ActivationDerivs activation_derivs(std::span<const double> z, Activation act) {
  ActivationDerivs d{Vector(z.size()), Vector(z.size()), Vector(z.size()), Vector(z.size())};
  for (std::size_t i = 0; i < z.size(); ++i) {
    ActivationPoint s{};
    switch (act) {
      case Activation::tanh: s = tanh_point(z[i]); break;
    }
    d.s0[i] = s.s0;
    d.s1[i] = s.s1;
    d.s2[i] = s.s2;
    d.s3[i] = s.s3;
  }
  return d;
}

ForwardResult forward(const Parameters& p, std::span<const double> x) {
  require(x.size() == p.arch.input_dim(), ErrorCode::dimension, "forward: input dimension mismatch");
  ForwardResult r;
  r.intermediates.reserve(num_states(p.arch));
  r.intermediates.emplace_back(x.begin(), x.end());
  const std::size_t nl = p.layers.size();
  for (std::size_t k = 0; k < nl; ++k) {
    const auto& l = p.layers[k];
    Vector z = matvec(l.weight, r.intermediates.back());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += l.bias[i];
    r.intermediates.push_back(z);
    if (k + 1 < nl) {
      for (double& v : z) v = std::tanh(v);
      r.intermediates.push_back(std::move(z));
    }
  }
  r.u = r.intermediates.back()[0];
  return r;
}

double evaluate(const Parameters& p, std::span<const double> x) { return forward(p, x).u; }

BatchForward forward_batch(const Parameters& p, const DenseMatrix& points) {
  require(points.cols() == p.arch.input_dim(), ErrorCode::dimension,
          "forward_batch: input dimension mismatch");
  const std::size_t n = points.rows();
  BatchForward f;
  f.states.reserve(num_states(p.arch));
  f.states.push_back(points.transposed());
  const std::size_t nl = p.layers.size();
  for (std::size_t k = 0; k < nl; ++k) {
    const auto& l = p.layers[k];
    DenseMatrix z = matmul(l.weight, f.states.back());
    for (std::size_t i = 0; i < z.rows(); ++i) {
      double* zi = z.row(i);
      for (std::size_t c = 0; c < n; ++c) zi[c] += l.bias[i];
    }
    f.states.push_back(z);
    if (k + 1 < nl) {
      for (double& v : z.data()) v = std::tanh(v);
      f.states.push_back(std::move(z));
    }
  }
  return f;
}

BatchBackward backward_batch(const Parameters& p, const BatchForward& fwd,
                             std::span<const double> sample_weights) {
  const std::size_t n = fwd.states.front().cols();
  require(sample_weights.size() == n, ErrorCode::dimension, "backward_batch: weight count mismatch");
  const std::size_t nl = p.layers.size();
  BatchBackward b;
  b.state_grads.resize(fwd.states.size());
  b.param_grad = zeros_like(p);

  DenseMatrix grad(1, n, 1.0);
  for (std::size_t k = nl; k-- > 0;) {
    const auto& l = p.layers[k];
    const DenseMatrix& input = fwd.states[linear_input_state(k)];
    b.state_grads[linear_output_state(k)] = grad;

    // Weighted copy for the parameter gradient.
    DenseMatrix weighted = grad;
    for (std::size_t i = 0; i < weighted.rows(); ++i) {
      double* wi = weighted.row(i);
      double s = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        wi[c] *= sample_weights[c];
        s += wi[c];
      }
      b.param_grad.layers[k].bias[i] = s;
    }
    b.param_grad.layers[k].weight = matmul_nt(weighted, input);

    DenseMatrix in_grad = matmul_tn(l.weight, grad);
    if (k > 0) {
      b.state_grads[linear_input_state(k)] = in_grad;
      // Through the activation preceding this layer.
      const DenseMatrix& act_out = fwd.states[linear_input_state(k)];
      for (std::size_t idx = 0; idx < in_grad.size(); ++idx) {
        const double t = act_out.data()[idx];
        in_grad.data()[idx] *= 1.0 - t * t;
      }
    } else {
      b.state_grads[0] = in_grad;
    }
    grad = std::move(in_grad);
  }
  return b;
}

Vector jvp_batch(const Parameters& p, const BatchForward& fwd, const Parameters& tangent) {
  require(tangent.arch.widths == p.arch.widths, ErrorCode::dimension, "jvp_batch: tangent shape mismatch");
  const std::size_t n = fwd.states.front().cols();
  const std::size_t nl = p.layers.size();
  DenseMatrix dz(p.arch.input_dim(), n);
  for (std::size_t k = 0; k < nl; ++k) {
    DenseMatrix out = matmul(tangent.layers[k].weight, fwd.states[linear_input_state(k)]);
    out += matmul(p.layers[k].weight, dz);
    for (std::size_t i = 0; i < out.rows(); ++i) {
      double* oi = out.row(i);
      for (std::size_t c = 0; c < n; ++c) oi[c] += tangent.layers[k].bias[i];
    }
    if (k + 1 < nl) {
      const DenseMatrix& act = fwd.states[linear_input_state(k + 1)];
      for (std::size_t idx = 0; idx < out.size(); ++idx) {
        const double t = act.data()[idx];
        out.data()[idx] *= 1.0 - t * t;
      }
    }
    dz = std::move(out);
  }
  return Vector(dz.row(0), dz.row(0) + n);
}

namespace {

nlohmann::json layer_to_json(const LinearLayer& l) {
  return {{"rows", l.weight.rows()},
          {"cols", l.weight.cols()},
          {"weight", std::vector<double>(l.weight.data().begin(), l.weight.data().end())},
          {"bias", l.bias}};
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Parameters& p,
                     const CheckpointMeta& meta) {
  nlohmann::json j;
  j["format"] = "kfacpinn-checkpoint";
  j["version"] = 1;
  j["widths"] = p.arch.widths;
  j["activation"] = to_string(p.arch.activation);
  j["layers"] = nlohmann::json::array();
  for (const auto& l : p.layers) j["layers"].push_back(layer_to_json(l));
  j["meta"] = {{"problem", meta.problem},     {"problem_dim", meta.problem_dim},
               {"kappa", meta.kappa},         {"n_eval_points", meta.n_eval_points},
               {"seed", meta.seed},           {"step", meta.step}};
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write checkpoint " + path.string());
  out << j.dump(1) << '\n';
  require(static_cast<bool>(out), ErrorCode::io, "failed writing checkpoint " + path.string());
}

Parameters load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    require(j.at("format") == "kfacpinn-checkpoint", ErrorCode::io, "not a kfacpinn checkpoint");
    Parameters p;
    p.arch.widths = j.at("widths").get<std::vector<std::size_t>>();
    p.arch.activation = activation_from_string(j.at("activation").get<std::string>());
    p.arch.validate();
    for (const auto& jl : j.at("layers")) {
      const auto rows = jl.at("rows").get<std::size_t>();
      const auto cols = jl.at("cols").get<std::size_t>();
      const auto w = jl.at("weight").get<std::vector<double>>();
      require(w.size() == rows * cols, ErrorCode::io, "checkpoint weight size mismatch");
      LinearLayer l{DenseMatrix(rows, cols), jl.at("bias").get<Vector>()};
      std::copy(w.begin(), w.end(), l.weight.data().begin());
      p.layers.push_back(std::move(l));
    }
    p.check_shapes();
    if (meta && j.contains("meta")) {
      const auto& m = j["meta"];
      meta->problem = m.value("problem", std::string{});
      meta->problem_dim = m.value("problem_dim", std::size_t{0});
      meta->kappa = m.value("kappa", 0.25);
      meta->n_eval_points = m.value("n_eval_points", std::size_t{0});
      meta->seed = m.value("seed", std::uint64_t{0});
      meta->step = m.value("step", std::size_t{0});
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io, std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace kfacpinn
