#include "kfacpinn/kfacpinn.h"

#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <string>

#include "kfacpinn/checks.hpp"
#include "kfacpinn/error.hpp"
#include "kfacpinn/harness.hpp"
#include "kfacpinn/network.hpp"
#include "kfacpinn/pde.hpp"

using namespace kfacpinn;

struct kp_problem {
  PdeProblem problem;
};

struct kp_params {
  Parameters params;
};

struct kp_run {
  TrainLog log;
  std::string output_dir;
};

namespace {

thread_local std::string g_last_error;

kp_status status_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return KP_ERR_INVALID_ARGUMENT;
    case ErrorCode::dimension: return KP_ERR_DIMENSION;
    case ErrorCode::numerical: return KP_ERR_NUMERICAL;
    case ErrorCode::not_psd: return KP_ERR_NOT_PSD;
    case ErrorCode::capacity: return KP_ERR_CAPACITY;
    case ErrorCode::line_search_failure: return KP_ERR_LINE_SEARCH;
    case ErrorCode::io: return KP_ERR_IO;
  }
  return KP_ERR_INTERNAL;
}

template <typename F>
kp_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return KP_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return KP_ERR_CAPACITY;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return KP_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown exception";
    return KP_ERR_INTERNAL;
  }
}

void need(const void* ptr, const char* what) {
  require(ptr != nullptr, ErrorCode::invalid_argument, std::string(what) + " must not be NULL");
}

kp_status train_impl(const RunConfig& config, kp_row_callback callback, void* user, kp_run** out) {
  auto run = std::make_unique<kp_run>();
  RowCallback cb;
  if (callback)
    cb = [callback, user](const LogRow& r) {
      const kp_log_row row{r.step,       r.wall_time_s,  r.loss_interior, r.loss_boundary,
                           r.loss_total, r.l2_rel_error, r.alpha,         r.mu};
      callback(&row, user);
    };
  run->log = run_training(config, cb);
  run->output_dir = run->log.output_dir.string();
  *out = run.release();
  return KP_OK;
}

}  // namespace

extern "C" {

const char* kp_version(void) { return "0.1.0"; }

const char* kp_status_string(kp_status status) {
  switch (status) {
    case KP_OK: return "ok";
    case KP_ERR_INVALID_ARGUMENT: return "invalid argument";
    case KP_ERR_DIMENSION: return "dimension mismatch";
    case KP_ERR_NUMERICAL: return "numerical failure";
    case KP_ERR_NOT_PSD: return "matrix not positive semi-definite";
    case KP_ERR_CAPACITY: return "capacity exceeded";
    case KP_ERR_LINE_SEARCH: return "line search failure";
    case KP_ERR_IO: return "i/o error";
    case KP_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* kp_last_error(void) { return g_last_error.c_str(); }

kp_status kp_problem_create(const char* name, size_t dim, double kappa, kp_problem** out) {
  return guarded([&] {
    need(name, "name");
    need(out, "out");
    *out = new kp_problem{make_problem(name, {dim, kappa})};
  });
}

void kp_problem_destroy(kp_problem* problem) { delete problem; }

kp_status kp_problem_input_dim(const kp_problem* problem, size_t* out) {
  return guarded([&] {
    need(problem, "problem");
    need(out, "out");
    *out = problem->problem.dim;
  });
}

kp_status kp_problem_true_solution(const kp_problem* problem, const double* x, size_t n_points, double* out) {
  return guarded([&] {
    need(problem, "problem");
    need(x, "x");
    need(out, "out");
    const std::size_t d = problem->problem.dim;
    for (std::size_t n = 0; n < n_points; ++n) out[n] = problem->problem.true_solution({x + n * d, d});
  });
}

kp_status kp_params_init(const size_t* widths, size_t n_widths, uint64_t seed, kp_params** out) {
  return guarded([&] {
    need(widths, "widths");
    need(out, "out");
    Architecture arch;
    arch.widths.assign(widths, widths + n_widths);
    *out = new kp_params{init_params(arch, seed)};
  });
}

kp_status kp_params_load(const char* path, kp_params** out, kp_checkpoint_info* info) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    CheckpointMeta meta;
    auto p = std::make_unique<kp_params>(kp_params{load_checkpoint(path, &meta)});
    if (info) {
      std::memset(info->problem, 0, sizeof(info->problem));
      std::strncpy(info->problem, meta.problem.c_str(), sizeof(info->problem) - 1);
      info->problem_dim = meta.problem_dim;
      info->kappa = meta.kappa;
      info->n_eval_points = meta.n_eval_points;
      info->seed = meta.seed;
      info->step = meta.step;
    }
    *out = p.release();
  });
}

kp_status kp_params_save(const kp_params* params, const char* path, const kp_checkpoint_info* info) {
  return guarded([&] {
    need(params, "params");
    need(path, "path");
    CheckpointMeta meta;
    if (info) {
      meta.problem = std::string(info->problem, strnlen(info->problem, sizeof(info->problem)));
      meta.problem_dim = info->problem_dim;
      meta.kappa = info->kappa;
      meta.n_eval_points = info->n_eval_points;
      meta.seed = info->seed;
      meta.step = info->step;
    }
    save_checkpoint(path, params->params, meta);
  });
}

void kp_params_destroy(kp_params* params) { delete params; }

kp_status kp_params_count(const kp_params* params, size_t* out) {
  return guarded([&] {
    need(params, "params");
    need(out, "out");
    *out = params->params.size();
  });
}

kp_status kp_params_input_dim(const kp_params* params, size_t* out) {
  return guarded([&] {
    need(params, "params");
    need(out, "out");
    *out = params->params.arch.input_dim();
  });
}

kp_status kp_params_get(const kp_params* params, double* out, size_t n) {
  return guarded([&] {
    need(params, "params");
    need(out, "out");
    require(n == params->params.size(), ErrorCode::dimension, "kp_params_get: length mismatch");
    const Vector flat = flatten(params->params);
    std::copy(flat.begin(), flat.end(), out);
  });
}

kp_status kp_params_set(kp_params* params, const double* values, size_t n) {
  return guarded([&] {
    need(params, "params");
    need(values, "values");
    unflatten({values, n}, params->params);
  });
}

kp_status kp_params_forward(const kp_params* params, const double* x, size_t n_points, size_t dim, double* out) {
  return guarded([&] {
    need(params, "params");
    need(x, "x");
    need(out, "out");
    require(dim == params->params.arch.input_dim(), ErrorCode::dimension, "kp_params_forward: input dimension");
    DenseMatrix pts(n_points, dim);
    std::copy(x, x + n_points * dim, pts.data().begin());
    if (n_points == 0) return;
    const BatchForward f = forward_batch(params->params, pts);
    for (std::size_t n = 0; n < n_points; ++n) out[n] = f.output(n);
  });
}

kp_status kp_eval_l2(const kp_params* params, const kp_problem* problem, size_t n_points, uint64_t seed,
                     double* out) {
  return guarded([&] {
    need(params, "params");
    need(problem, "problem");
    need(out, "out");
    require(params->params.arch.input_dim() == problem->problem.dim, ErrorCode::dimension,
            "network input dimension does not match the problem");
    *out = eval_l2(params->params, problem->problem, n_points, seed);
  });
}

kp_status kp_train(const char* config_json, kp_row_callback callback, void* user, kp_run** out) {
  kp_status inner = KP_OK;
  const kp_status s = guarded([&] {
    need(config_json, "config_json");
    need(out, "out");
    inner = train_impl(parse_run_config(config_json), callback, user, out);
  });
  return s != KP_OK ? s : inner;
}

kp_status kp_train_file(const char* config_path, kp_row_callback callback, void* user, kp_run** out) {
  kp_status inner = KP_OK;
  const kp_status s = guarded([&] {
    need(config_path, "config_path");
    need(out, "out");
    inner = train_impl(load_run_config(config_path), callback, user, out);
  });
  return s != KP_OK ? s : inner;
}

void kp_run_destroy(kp_run* run) { delete run; }

kp_status kp_run_row_count(const kp_run* run, size_t* out) {
  return guarded([&] {
    need(run, "run");
    need(out, "out");
    *out = run->log.rows.size();
  });
}

kp_status kp_run_row(const kp_run* run, size_t index, kp_log_row* out) {
  return guarded([&] {
    need(run, "run");
    need(out, "out");
    require(index < run->log.rows.size(), ErrorCode::invalid_argument, "row index out of range");
    const LogRow& r = run->log.rows[index];
    *out = {r.step, r.wall_time_s, r.loss_interior, r.loss_boundary, r.loss_total, r.l2_rel_error, r.alpha, r.mu};
  });
}

kp_status kp_run_diverged(const kp_run* run, int* out) {
  return guarded([&] {
    need(run, "run");
    need(out, "out");
    *out = run->log.diverged ? 1 : 0;
  });
}

const char* kp_run_failure(const kp_run* run) { return run ? run->log.failure.c_str() : ""; }

const char* kp_run_output_dir(const kp_run* run) { return run ? run->output_dir.c_str() : ""; }

kp_status kp_run_params(const kp_run* run, kp_params** out) {
  return guarded([&] {
    need(run, "run");
    need(out, "out");
    *out = new kp_params{run->log.final_params};
  });
}

kp_status kp_run_checks(kp_check_callback callback, void* user, size_t* n_failed) {
  return guarded([&] {
    std::size_t failed = 0;
    run_checks([&](const CheckResult& r) {
      if (!r.passed) ++failed;
      if (callback) callback(r.name.c_str(), r.passed ? 1 : 0, r.detail.c_str(), user);
    });
    if (n_failed) *n_failed = failed;
  });
}

}  // extern "C"
