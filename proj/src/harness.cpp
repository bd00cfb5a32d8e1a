#include "kfacpinn/harness.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "kfacpinn/error.hpp"
#include "kfacpinn/rng.hpp"

namespace kfacpinn {

using nlohmann::json;

std::size_t RunConfig::resolved_resample_every() const {
  if (resample_every) return *resample_every;
  const bool kfac_like = optimizer.kind == OptimizerKind::kfac || optimizer.kind == OptimizerKind::kfac_star;
  return kfac_like ? 100 : 1;
}

Architecture RunConfig::architecture(const PdeProblem& problem) const {
  Architecture a;
  a.activation = activation;
  a.widths = widths.empty() ? std::vector<std::size_t>{problem.dim, 64, 1} : widths;
  a.validate();
  require(a.input_dim() == problem.dim, ErrorCode::invalid_argument,
          "widths[0] must equal the problem input dimension " + std::to_string(problem.dim));
  return a;
}

void RunConfig::validate() const {
  const PdeProblem p = make_problem(problem, problem_params);
  architecture(p);
  optimizer.validate();
  require(n_interior + n_boundary >= 1, ErrorCode::invalid_argument, "the batch must contain points");
  require(eval_every >= 1, ErrorCode::invalid_argument, "eval_every must be >= 1");
  require(n_eval_points >= 1, ErrorCode::invalid_argument, "n_eval_points must be >= 1");
  require(max_wall_seconds >= 0.0, ErrorCode::invalid_argument, "max_wall_seconds must be >= 0");
}

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "problem",   "dim",         "kappa",      "widths",         "activation",       "optimizer",
      "lr",        "momentum",    "ema",        "damping",        "init",             "ls_min_exp",
      "ls_max_exp", "adam_beta1", "adam_beta2", "adam_eps",       "rcond",            "gramian_cap",
      "n_interior", "n_boundary", "resample_every", "max_steps",   "max_wall_seconds", "eval_every",
      "n_eval_points", "seed",    "output"};
  return keys;
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("config is not valid JSON: ") + e.what());
  }
  require(j.is_object(), ErrorCode::invalid_argument, "config must be a JSON object");
  for (const auto& [key, value] : j.items())
    require(known_keys().count(key) == 1, ErrorCode::invalid_argument, "unknown config key '" + key + "'");

  RunConfig c;
  try {
    read(j, "problem", c.problem);
    read(j, "dim", c.problem_params.dim);
    read(j, "kappa", c.problem_params.kappa);
    read(j, "widths", c.widths);
    if (j.contains("activation")) c.activation = activation_from_string(j.at("activation").get<std::string>());
    const std::string opt = j.value("optimizer", std::string("kfac"));
    c.optimizer = OptimizerConfig::defaults(optimizer_from_string(opt));
    auto& o = c.optimizer;
    read(j, "lr", o.lr);
    read(j, "momentum", o.momentum);
    read(j, "ema", o.ema_beta);
    read(j, "damping", o.damping);
    if (j.contains("init")) o.init = factor_init_from_string(j.at("init").get<std::string>());
    read(j, "ls_min_exp", o.ls_min_exp);
    read(j, "ls_max_exp", o.ls_max_exp);
    read(j, "adam_beta1", o.adam_beta1);
    read(j, "adam_beta2", o.adam_beta2);
    read(j, "adam_eps", o.adam_eps);
    read(j, "rcond", o.rcond);
    read(j, "gramian_cap", o.gramian_cap);
    read(j, "n_interior", c.n_interior);
    read(j, "n_boundary", c.n_boundary);
    if (j.contains("resample_every") && !j.at("resample_every").is_null())
      c.resample_every = j.at("resample_every").get<std::size_t>();
    read(j, "max_steps", c.max_steps);
    read(j, "max_wall_seconds", c.max_wall_seconds);
    read(j, "eval_every", c.eval_every);
    read(j, "n_eval_points", c.n_eval_points);
    read(j, "seed", c.seed);
    read(j, "output", c.output);
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("config has a value of the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_to_json(const RunConfig& c) {
  const auto& o = c.optimizer;
  const PdeProblem p = make_problem(c.problem, c.problem_params);
  json j{{"problem", c.problem},
         {"dim", p.spatial_dim},
         {"kappa", c.problem_params.kappa},
         {"widths", c.architecture(p).widths},
         {"activation", to_string(c.activation)},
         {"optimizer", to_string(o.kind)},
         {"lr", o.lr},
         {"momentum", o.momentum},
         {"ema", o.ema_beta},
         {"damping", o.damping},
         {"init", to_string(o.init)},
         {"ls_min_exp", o.ls_min_exp},
         {"ls_max_exp", o.ls_max_exp},
         {"adam_beta1", o.adam_beta1},
         {"adam_beta2", o.adam_beta2},
         {"adam_eps", o.adam_eps},
         {"rcond", o.rcond},
         {"gramian_cap", o.gramian_cap},
         {"n_interior", c.n_interior},
         {"n_boundary", c.n_boundary},
         {"resample_every", c.resolved_resample_every()},
         {"max_steps", c.max_steps},
         {"max_wall_seconds", c.max_wall_seconds},
         {"eval_every", c.eval_every},
         {"n_eval_points", c.n_eval_points},
         {"seed", c.seed},
         {"output", c.output}};
  return j.dump(2);
}

namespace {

void append_number(std::string& out, double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

}  // namespace

std::string format_row(const LogRow& r) {
  std::string s = std::to_string(r.step);
  for (double v : {r.wall_time_s, r.loss_interior, r.loss_boundary, r.loss_total, r.l2_rel_error, r.alpha, r.mu}) {
    s.push_back(',');
    append_number(s, v);
  }
  return s;
}

double eval_l2(const Parameters& params, const PdeProblem& problem, std::size_t n_points, std::uint64_t seed) {
  require(n_points >= 1, ErrorCode::invalid_argument, "eval_l2 needs at least one point");
  return relative_l2(params, problem, sample_eval_points(problem, n_points, seed));
}

namespace {

std::filesystem::path output_dir(const RunConfig& c) {
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return c.output;
}

void write_meta(const std::filesystem::path& dir, const RunConfig& c, const TrainLog& log, bool finished) {
  json meta{{"rng", std::string(kRngDescription)},
            {"config", json::parse(run_config_to_json(c))},
            {"csv_columns", kCsvHeader},
            {"finished", finished},
            {"diverged", log.diverged},
            {"failure", log.failure},
            {"rows", log.rows.size()}};
  std::ofstream out(dir / "meta.json");
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + (dir / "meta.json").string());
  out << meta.dump(2) << '\n';
}

}  // namespace

TrainLog run_training(const RunConfig& config, const RowCallback& on_row) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  const PdeProblem problem = make_problem(config.problem, config.problem_params);
  const Architecture arch = config.architecture(problem);
  TrainState state = make_train_state(init_params(arch, config.seed), config.optimizer);
  const DenseMatrix eval_points = sample_eval_points(problem, config.n_eval_points, config.seed);
  const std::size_t resample = config.resolved_resample_every();

  TrainLog log;
  log.output_dir = output_dir(config);
  std::ofstream csv;
  if (!log.output_dir.empty()) {
    std::filesystem::create_directories(log.output_dir);
    write_meta(log.output_dir, config, log, false);
    csv.open(log.output_dir / "log.csv");
    require(static_cast<bool>(csv), ErrorCode::io, "cannot write " + (log.output_dir / "log.csv").string());
    csv << kCsvHeader << '\n' << std::flush;
  }
  const auto emit = [&](const LogRow& row) {
    log.rows.push_back(row);
    if (csv.is_open()) csv << format_row(row) + '\n' << std::flush;
    if (on_row) on_row(row);
  };

  std::uint64_t batch_index = 0;
  Batch batch = sample_batch(problem, config.n_interior, config.n_boundary, config.seed, batch_index);
  {
    const LossParts l = batch_loss(problem, state.params, batch);
    emit({0, elapsed(), l.interior, l.boundary, l.total(), relative_l2(state.params, problem, eval_points), 0.0, 0.0});
  }

  for (std::size_t step = 0; step < config.max_steps; ++step) {
    if (step > 0 && resample > 0 && step % resample == 0)
      batch = sample_batch(problem, config.n_interior, config.n_boundary, config.seed, ++batch_index);
    StepInfo info;
    const Parameters before = state.params;
    try {
      info = optimizer_step(state, config.optimizer, problem, batch);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::numerical && e.code() != ErrorCode::line_search_failure &&
          e.code() != ErrorCode::not_psd)
        throw;
      log.diverged = true;
      log.failure = e.what();
      state.params = before;
      break;
    }
    const std::size_t t = step + 1;
    const bool last = t == config.max_steps;
    const bool out_of_time = config.max_wall_seconds > 0.0 && elapsed() >= config.max_wall_seconds;
    if (t % config.eval_every == 0 || last || out_of_time) {
      const LossParts l = batch_loss(problem, state.params, batch);
      const double l2 = relative_l2(state.params, problem, eval_points);
      if (!std::isfinite(l.total()) || !std::isfinite(l2)) {
        log.diverged = true;
        log.failure = "non-finite loss at step " + std::to_string(t);
        state.params = before;
        break;
      }
      emit({t, elapsed(), l.interior, l.boundary, l.total(), l2, info.alpha, info.mu});
    }
    if (out_of_time) break;
  }

  log.final_params = state.params;
  if (!log.output_dir.empty()) {
    CheckpointMeta meta{config.problem, problem.spatial_dim, config.problem_params.kappa, config.n_eval_points,
                        config.seed, log.rows.back().step};
    save_checkpoint(log.output_dir / "checkpoint.json", state.params, meta);
    write_meta(log.output_dir, config, log, true);
  }
  return log;
}

}  // namespace kfacpinn
