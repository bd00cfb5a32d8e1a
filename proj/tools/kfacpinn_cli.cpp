// Command-line front end; talks to the library only through the C API.
#include <charconv>
#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "kfacpinn/kfacpinn.h"

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;

int report(kp_status s, const char* what) {
  std::fprintf(stderr, "error: %s: %s (%s)\n", what, kp_last_error(), kp_status_string(s));
  return kExitError;
}

void print_row(const kp_log_row* row, void* user) {
  const bool quiet = *static_cast<bool*>(user);
  if (quiet) return;
  std::printf("step %6zu  t=%8.2fs  loss=%.6e  l2=%.6e  alpha=%.3g  mu=%.3g\n", row->step, row->wall_time_s,
              row->loss_total, row->l2_rel_error, row->alpha, row->mu);
  std::fflush(stdout);
}

int cmd_train(const std::string& config, bool quiet) {
  kp_run* run = nullptr;
  if (kp_status s = kp_train_file(config.c_str(), print_row, &quiet, &run); s != KP_OK) return report(s, "train");
  int diverged = 0;
  kp_run_diverged(run, &diverged);
  size_t rows = 0;
  kp_run_row_count(run, &rows);
  kp_log_row last{};
  if (rows > 0) kp_run_row(run, rows - 1, &last);
  const std::string dir = kp_run_output_dir(run);
  if (diverged) std::fprintf(stderr, "run diverged: %s\n", kp_run_failure(run));
  std::printf("final step %zu  loss=%.17g  l2=%.17g\n", last.step, last.loss_total, last.l2_rel_error);
  if (!dir.empty()) std::printf("output: %s\n", dir.c_str());
  kp_run_destroy(run);
  return diverged ? kExitDiverged : 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& problem_name, size_t dim, double kappa,
             size_t n_points, long long seed) {
  kp_params* params = nullptr;
  kp_checkpoint_info info{};
  if (kp_status s = kp_params_load(checkpoint.c_str(), &params, &info); s != KP_OK) return report(s, "load");
  if (dim == 0) dim = info.problem_dim;
  if (n_points == 0) n_points = info.n_eval_points > 0 ? info.n_eval_points : 9000;
  const uint64_t eval_seed = seed >= 0 ? static_cast<uint64_t>(seed) : info.seed;
  kp_problem* problem = nullptr;
  if (kp_status s = kp_problem_create(problem_name.c_str(), dim, kappa, &problem); s != KP_OK) {
    kp_params_destroy(params);
    return report(s, "problem");
  }
  double l2 = 0.0;
  const kp_status s = kp_eval_l2(params, problem, n_points, eval_seed, &l2);
  kp_problem_destroy(problem);
  kp_params_destroy(params);
  if (s != KP_OK) return report(s, "eval");
  // Shortest round-trip form, matching the CSV log.
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), l2);
  std::printf("l2_rel_error %.*s\n", static_cast<int>(res.ptr - buf), buf);
  return 0;
}

void print_check(const char* name, int passed, const char* detail, void*) {
  std::printf("%s %s %s\n", passed ? "PASS" : "FAIL", name, detail);
  std::fflush(stdout);
}

int cmd_check() {
  size_t failed = 0;
  if (kp_status s = kp_run_checks(print_check, nullptr, &failed); s != KP_OK) return report(s, "check");
  std::printf("%zu check(s) failed\n", failed);
  return failed == 0 ? 0 : kExitError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train and evaluate PINNs with Kronecker-factored curvature"};
  app.require_subcommand(1);

  std::string config;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Run training from a JSON config");
  train->add_option("--config", config, "Path to the run config")->required();
  train->add_flag("--quiet", quiet, "Suppress per-row progress");

  std::string checkpoint, problem;
  size_t dim = 0, n_points = 0;
  double kappa = 0.25;
  long long seed = -1;
  auto* eval = app.add_subcommand("eval", "Relative L2 error of a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
  eval->add_option("--problem", problem, "Problem name")->required();
  eval->add_option("--dim", dim, "Spatial dimension (default: from checkpoint)");
  eval->add_option("--kappa", kappa, "Heat diffusivity");
  eval->add_option("--n-eval-points", n_points, "Evaluation points (default: from checkpoint)");
  eval->add_option("--seed", seed, "Evaluation seed (default: from checkpoint)");

  auto* check = app.add_subcommand("check", "Run the oracle and property checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string usage = app.help();
    for (const CLI::App* sub : {train, eval, check})
      if (sub->parsed()) usage = sub->help();
    std::fprintf(stderr, "%s\n\n%s", e.what(), usage.c_str());
    return kExitUsage;
  }

  if (train->parsed()) return cmd_train(config, quiet);
  if (eval->parsed()) return cmd_eval(checkpoint, problem, dim, kappa, n_points, seed);
  if (check->parsed()) return cmd_check();
  return kExitUsage;
}
