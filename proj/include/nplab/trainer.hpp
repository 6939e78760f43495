#pragma once

// Training loop, Adam, Monte Carlo evaluation and context-size sweeps.

#include "nplab/model.hpp"
#include "nplab/objectives.hpp"
#include "nplab/rng.hpp"
#include "nplab/task.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nplab {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t t = 0;

  static AdamState zeros_like(std::span<const Tensor> params);
};

// One bias-corrected Adam update of every leaf in `params` from `grads`.
void adam_step(std::span<Tensor> params, std::span<const std::vector<double>> grads, AdamState& state,
               const AdamConfig& cfg);

// Where training tasks come from. A non-empty fixed set wins, then a task
// file, then grid files, else fresh GP draws from `kernel`.
struct TaskSource {
  KernelKind kernel = KernelKind::kRbf;
  TaskBatch fixed;
  std::optional<std::filesystem::path> task_file;
  std::vector<std::filesystem::path> grid_files;

  // Dimensions (x, y) of the tasks this source yields.
  std::pair<std::size_t, std::size_t> io_dims() const;
};

struct TrainConfig {
  ObjectiveConfig objective;
  TaskSource source;
  ModelDims dims;
  std::size_t batch_size = 16;
  std::size_t steps = 1000;
  AdamConfig adam;
  double proposal_lr = 5e-4;
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;  // 0: evaluate only after the last step
  std::size_t eval_particles = 32;
  std::size_t eval_tasks = 64;
  std::size_t threads = 1;  // worker threads for per-task gradients

  void validate() const;
};

struct EvalRecord {
  std::size_t step = 0;
  std::string split = "eval";
  double ll_context = 0.0;         // per point, averaged over tasks
  double ll_target = 0.0;          // per point, averaged over tasks
  double ll_target_stderr = 0.0;   // standard error of the per-task target values
  double ll_target_sum = 0.0;      // per-task sums, averaged over tasks
  double prior_trace = 0.0;
  double ess = 0.0;
  double seconds = 0.0;
  std::size_t tasks = 0;
  std::vector<double> per_task_target;
};

// Every task needs a non-empty context. With deterministic_latent every draw
// is the prior mean (CNP).
EvalRecord evaluate_mc(const ModelParams& params, const TaskBatch& tasks, std::size_t particles, Rng& rng,
                       bool deterministic_latent = false);

struct SweepPoint {
  std::size_t n_context = 0;
  EvalRecord record;
};

// Re-splits every task to exactly n context points for each requested n.
std::vector<SweepPoint> asymptotic_sweep(const ModelParams& params, const TaskBatch& tasks,
                                         std::span<const std::size_t> context_counts, std::size_t particles,
                                         Rng& rng, bool deterministic_latent = false);

struct TrainResult {
  ModelParams params;
  std::optional<EncoderParams> proposal;
  std::vector<EvalRecord> log;
  std::size_t steps_done = 0;
};

using EvalCallback = std::function<void(const EvalRecord&)>;

// Throws NumericalError naming the step and task when a loss, gradient or
// parameter turns non-finite.
TrainResult train(const TrainConfig& cfg, const EvalCallback& on_eval = {});

// Fixed evaluation tasks for a config, drawn from a stream that training
// never touches.
TaskBatch evaluation_tasks(const TrainConfig& cfg, std::size_t count);

// Worker count from NP_LAB_THREADS (default 1, at least 1).
std::size_t threads_from_env();

}  // namespace nplab
