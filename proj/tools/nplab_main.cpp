// nplab: train, evaluate and generate tasks for neural-process objectives.

#include "nplab/checkpoint.hpp"
#include "nplab/config.hpp"
#include "nplab/errors.hpp"
#include "nplab/selftest.hpp"
#include "nplab/tasks.hpp"
#include "nplab/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nplab;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Exit { kOk = 0, kUsage = 1, kNumerical = 2, kIo = 3 };

std::string utc_now(const char* format) {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, format);
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::size_t> parse_counts(const std::string& raw) {
  std::vector<std::size_t> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    long v = -1;
    try {
      v = std::stol(item, &used);
    } catch (const std::exception&) {
    }
    if (v <= 0 || used != item.size()) throw ConfigError("--context-counts: bad entry '" + item + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw ConfigError("--context-counts: no counts given");
  return out;
}

// Named override flags plus any `--section.key value` extras.
struct Overrides {
  std::map<std::string, std::string> named;
  std::vector<std::string> extras;

  void attach(CLI::App* app) {
    for (const char* flag :
         {"seed", "objective", "particles", "kernel", "steps", "lr", "eval-particles", "context-counts"}) {
      app->add_option(std::string("--") + flag, named[flag], std::string("override ") + config_key_for_flag(flag));
    }
    app->allow_extras();
  }

  void apply(ConfigMap& map, const CLI::App& app) const {
    for (const auto& [flag, value] : named) {
      if (app.count(std::string("--") + flag) > 0) map[config_key_for_flag(flag)] = value;
    }
    const auto rest = app.remaining();
    for (std::size_t i = 0; i < rest.size(); ++i) {
      std::string flag = rest[i];
      if (flag.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + flag + "'");
      flag = flag.substr(2);
      std::string value;
      if (const auto eq = flag.find('='); eq != std::string::npos) {
        value = flag.substr(eq + 1);
        flag = flag.substr(0, eq);
      } else {
        if (i + 1 >= rest.size()) throw ConfigError("option --" + flag + " needs a value");
        value = rest[++i];
      }
      map[config_key_for_flag(flag)] = value;
    }
  }
};

json record_json(const EvalRecord& r) {
  return json{{"ll_context", r.ll_context},   {"ll_target", r.ll_target},     {"ll_target_stderr", r.ll_target_stderr},
              {"ll_target_sum", r.ll_target_sum}, {"prior_trace", r.prior_trace}, {"ess", r.ess},
              {"tasks", r.tasks}};
}

std::string csv_row(const EvalRecord& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.step << "," << r.split << "," << r.ll_context << "," << r.ll_target << "," << r.prior_trace << ","
     << r.ess << "," << r.seconds << "\n";
  return os.str();
}

int cmd_train(const std::string& config_path, const std::string& out_root, const Overrides& ov,
              const CLI::App& app) {
  ConfigMap map = config_path.empty() ? ConfigMap{} : load_config_file(config_path);
  ov.apply(map, app);
  RunConfig run = run_config_from(map);
  TrainConfig& cfg = run.train;
  std::tie(cfg.dims.x_dim, cfg.dims.y_dim) = cfg.source.io_dims();
  cfg.threads = threads_from_env();

  fs::path dir = fs::path(out_root) / (utc_now("%Y%m%dT%H%M%SZ") + "-seed" + std::to_string(cfg.seed));
  for (int k = 1; fs::exists(dir); ++k) {
    dir = fs::path(out_root) / (utc_now("%Y%m%dT%H%M%SZ") + "-seed" + std::to_string(cfg.seed) + "-" + std::to_string(k));
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create run directory " + dir.string() + ": " + ec.message());

  json manifest{{"tool", "nplab"},
                {"version", kVersion},
                {"command", "train"},
                {"config", to_config_text(run)},
                {"seed", cfg.seed},
                {"status", "running"},
                {"started", utc_now("%Y-%m-%dT%H:%M:%SZ")},
                {"artifacts", {{"checkpoint", "checkpoint.json"}, {"metrics", "metrics.csv"}}}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");

  std::ofstream metrics(dir / "metrics.csv", std::ios::binary);
  if (!metrics) throw IoError("cannot write " + (dir / "metrics.csv").string());
  metrics << "step,split,ll_context,ll_target,prior_trace,ess,seconds\n";
  metrics.flush();

  auto finish = [&](const std::string& status, const std::string& error) {
    manifest["status"] = status;
    manifest["finished"] = utc_now("%Y-%m-%dT%H:%M:%SZ");
    if (!error.empty()) manifest["error"] = error;
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  };

  try {
    const TrainResult result = train(cfg, [&](const EvalRecord& r) {
      metrics << csv_row(r);
      metrics.flush();
      std::cerr << "step " << r.step << "  ll_target " << r.ll_target << "  ll_context " << r.ll_context
                << "  prior_trace " << r.prior_trace << "\n";
    });
    const bool deterministic = cfg.objective.kind == ObjectiveKind::kCnp;
    save_checkpoint(dir / "checkpoint.json",
                    {result.params, objective_name(cfg.objective.kind), deterministic, cfg.seed, result.steps_done});
  } catch (const NumericalError& e) {
    finish("failed", e.what());
    throw;
  }
  finish("completed", "");
  std::cout << dir.string() << "\n";
  return kOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& tasks_path, const std::string& kernel, std::size_t count,
             std::uint64_t seed, std::size_t particles, const std::string& counts_raw, const std::string& out_dir) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (particles == 0) throw ConfigError("--eval-particles must be at least 1");
  TaskBatch tasks;
  if (!tasks_path.empty()) {
    tasks = load_tasks(tasks_path);
  } else {
    if (count == 0) throw ConfigError("--count must be at least 1");
    Rng rng = Rng(seed).split(1);
    const KernelKind kind = parse_kernel(kernel);
    // Sweeps re-split each task, so generated sweep tasks use the full 50 points.
    for (std::size_t i = 0; i < count; ++i) {
      tasks.push_back(counts_raw.empty() ? sample_gp_task(kind, rng) : sample_gp_task_sized(kind, 50, 3, rng));
    }
  }
  if (tasks.empty()) throw ConfigError("no tasks to evaluate");
  const ModelDims& d = ckpt.params.dims;
  for (const auto& t : tasks) {
    if (t.x_dim != d.x_dim || t.y_dim != d.y_dim) {
      throw ConfigError("checkpoint dims (x=" + std::to_string(d.x_dim) + ", y=" + std::to_string(d.y_dim) +
                        ") do not match task dims (x=" + std::to_string(t.x_dim) + ", y=" + std::to_string(t.y_dim) +
                        ")");
    }
  }

  Rng draws = Rng(seed).split(2);
  json out{{"checkpoint_objective", ckpt.objective}, {"particles", particles}, {"tasks", tasks.size()},
           {"seed", seed}};
  std::ostringstream csv;
  csv.precision(17);
  csv << "n_context,ll_context,ll_target,ll_target_stderr,prior_trace,ess\n";
  if (counts_raw.empty()) {
    const EvalRecord r = evaluate_mc(ckpt.params, tasks, particles, draws, ckpt.deterministic_latent);
    out["mode"] = "mc";
    out["record"] = record_json(r);
    csv << "," << r.ll_context << "," << r.ll_target << "," << r.ll_target_stderr << "," << r.prior_trace << ","
        << r.ess << "\n";
  } else {
    const auto counts = parse_counts(counts_raw);
    const auto sweep = asymptotic_sweep(ckpt.params, tasks, counts, particles, draws, ckpt.deterministic_latent);
    out["mode"] = "sweep";
    json records = json::array();
    for (const auto& p : sweep) {
      json rec = record_json(p.record);
      rec["n_context"] = p.n_context;
      records.push_back(rec);
      csv << p.n_context << "," << p.record.ll_context << "," << p.record.ll_target << ","
          << p.record.ll_target_stderr << "," << p.record.prior_trace << "," << p.record.ess << "\n";
    }
    out["records"] = records;
  }
  const fs::path dir = out_dir.empty() ? fs::path(ckpt_path).parent_path() : fs::path(out_dir);
  if (!dir.empty()) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  }
  write_text(dir / "eval.json", out.dump(2) + "\n");
  write_text(dir / "eval.csv", csv.str());
  std::cout << (dir / "eval.json").string() << "\n";
  return kOk;
}

int cmd_gen_tasks(const std::string& kernel, const std::string& grid, std::size_t context, std::size_t count,
                  std::uint64_t seed, const std::string& out) {
  if (count == 0) throw ConfigError("--count must be at least 1");
  Rng rng = Rng(seed).split(3);
  TaskBatch tasks;
  if (!grid.empty()) {
    const Grid g = load_grid(grid);
    for (std::size_t i = 0; i < count; ++i) tasks.push_back(grid_task(g, context, rng));
  } else {
    const KernelKind kind = parse_kernel(kernel);
    for (std::size_t i = 0; i < count; ++i) tasks.push_back(sample_gp_task(kind, rng));
  }
  save_tasks(out, tasks);
  std::cout << out << "\n";
  return kOk;
}

int cmd_selftest(const std::string& fault) {
  SelftestOptions opts;
  if (fault == "sigma-floor") {
    opts.sigma_floor = 0.2;
  } else if (!fault.empty()) {
    throw ConfigError("unknown fault '" + fault + "' (expected sigma-floor)");
  }
  const SelftestReport report = run_selftest(opts, &std::cout);
  std::cout << (report.ok() ? "selftest passed" : "selftest FAILED") << " in " << report.seconds << " s\n";
  return report.ok() ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nplab: neural-process objectives lab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string config_path;
  std::string out_root = "runs";
  Overrides train_ov;
  auto* train_cmd = app.add_subcommand("train", "train a model and write a run directory");
  train_cmd->add_option("--config", config_path, "config file");
  train_cmd->add_option("--out", out_root, "parent directory for run directories");
  train_ov.attach(train_cmd);

  std::string ckpt, tasks_path, eval_kernel = "rbf", counts_raw, eval_out;
  std::size_t eval_count = 100, eval_particles = 32;
  std::uint64_t eval_seed = 0;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--tasks", tasks_path, "task file");
  eval_cmd->add_option("--kernel", eval_kernel, "kernel for generated tasks");
  eval_cmd->add_option("--count", eval_count, "number of generated tasks");
  eval_cmd->add_option("--seed", eval_seed, "seed for tasks and draws");
  eval_cmd->add_option("--eval-particles", eval_particles, "particles B");
  eval_cmd->add_option("--context-counts", counts_raw, "comma-separated context sizes for a sweep");
  eval_cmd->add_option("--out", eval_out, "output directory (default: the checkpoint's directory)");

  std::string gen_kernel = "rbf", gen_grid, gen_out;
  std::size_t gen_count = 1, gen_context = 10;
  std::uint64_t gen_seed = 0;
  auto* gen_cmd = app.add_subcommand("gen-tasks", "write a task file");
  gen_cmd->add_option("--kernel", gen_kernel, "rbf, matern52 or periodic");
  gen_cmd->add_option("--grid", gen_grid, "PGM or CSV grid to sample completion tasks from");
  gen_cmd->add_option("--context", gen_context, "context pixels per grid task");
  gen_cmd->add_option("--count", gen_count, "number of tasks");
  gen_cmd->add_option("--seed", gen_seed, "seed");
  gen_cmd->add_option("--out", gen_out, "output task file")->required();

  std::string fault;
  auto* self_cmd = app.add_subcommand("selftest", "run the built-in checks");
  self_cmd->add_option("--inject-fault", fault, "deliberately break a component (sigma-floor)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(config_path, out_root, train_ov, *train_cmd);
    if (eval_cmd->parsed()) {
      return cmd_eval(ckpt, tasks_path, eval_kernel, eval_count, eval_seed, eval_particles, counts_raw, eval_out);
    }
    if (gen_cmd->parsed()) return cmd_gen_tasks(gen_kernel, gen_grid, gen_context, gen_count, gen_seed, gen_out);
    if (self_cmd->parsed()) return cmd_selftest(fault);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const ad::DomainError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const json::exception& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  }
  return kUsage;
}
