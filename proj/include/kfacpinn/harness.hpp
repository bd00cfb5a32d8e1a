#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kfacpinn/network.hpp"
#include "kfacpinn/optim.hpp"
#include "kfacpinn/pde.hpp"

namespace kfacpinn {

inline constexpr const char* kOutputDirEnv = "KFACPINN_OUTPUT_DIR";
inline constexpr const char* kCsvHeader = "step,wall_time_s,loss_interior,loss_boundary,loss_total,l2_rel_error,alpha,mu";

struct RunConfig {
  std::string problem = "poisson2d_sin";
  ProblemParams problem_params;
  std::vector<std::size_t> widths;  // empty: input -> 64 -> 1
  Activation activation = Activation::tanh;
  OptimizerConfig optimizer;
  std::size_t n_interior = 900;
  std::size_t n_boundary = 120;
  std::optional<std::size_t> resample_every;  // 0 keeps the first batch
  std::size_t max_steps = 1000;
  double max_wall_seconds = 0.0;  // 0: unlimited
  std::size_t eval_every = 10;
  std::size_t n_eval_points = 9000;
  std::uint64_t seed = 0;
  std::string output;  // empty: no files

  /// Batch refresh period after applying the per-optimizer default.
  std::size_t resolved_resample_every() const;
  Architecture architecture(const PdeProblem& problem) const;
  void validate() const;
};

/// Parses the flat JSON config; unknown keys are rejected.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& config);

struct LogRow {
  std::size_t step = 0;
  double wall_time_s = 0.0;
  double loss_interior = 0.0;
  double loss_boundary = 0.0;
  double loss_total = 0.0;
  double l2_rel_error = 0.0;
  double alpha = 0.0;
  double mu = 0.0;
};

/// One CSV line without the trailing newline; shortest round-trip decimals.
std::string format_row(const LogRow& row);

struct TrainLog {
  std::vector<LogRow> rows;
  bool diverged = false;
  std::string failure;
  Parameters final_params;
  std::filesystem::path output_dir;  // empty when nothing was written
};

/// Relative L2 error on n_points uniform interior points of the eval stream.
double eval_l2(const Parameters& params, const PdeProblem& problem, std::size_t n_points, std::uint64_t seed);

/// Called after every appended row.
using RowCallback = std::function<void(const LogRow&)>;

TrainLog run_training(const RunConfig& config, const RowCallback& on_row = {});

}  // namespace kfacpinn
