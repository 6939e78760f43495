#include "nplab/trainer.hpp"

#include "nplab/errors.hpp"
#include "nplab/tasks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <sstream>
#include <thread>

namespace nplab {

namespace {

// Substreams of the run seed.
constexpr std::uint64_t kTaskStream = 11;
constexpr std::uint64_t kLossStream = 12;
constexpr std::uint64_t kEvalTaskStream = 13;
constexpr std::uint64_t kEvalDrawStream = 14;
constexpr std::uint64_t kProposalStream = 15;

struct Sampler {
  const TaskSource& source;
  TaskBatch pool;
  std::vector<Grid> grids;

  explicit Sampler(const TaskSource& src) : source(src) {
    if (!src.fixed.empty()) {
      pool = src.fixed;
    } else if (src.task_file) {
      pool = load_tasks(*src.task_file);
      if (pool.empty()) throw ConfigError("task file " + src.task_file->string() + " holds no tasks");
    } else {
      for (const auto& g : src.grid_files) grids.push_back(load_grid(g));
    }
  }

  Task grid_draw(Rng& rng) const {
    const Grid& g = grids[rng.uniform_int(0, grids.size() - 1)];
    const std::size_t total = g.width * g.height;
    const std::size_t hi = std::max<std::size_t>(1, total / 2);
    return grid_task(g, rng.uniform_int(std::min<std::size_t>(3, hi), hi), rng);
  }

  // Batch for one step. From a finite pool the whole pool is used when it fits,
  // else a uniform subset without replacement.
  TaskBatch batch(std::size_t size, Rng rng) const {
    TaskBatch out;
    if (!pool.empty()) {
      if (size >= pool.size()) return pool;
      std::vector<std::size_t> idx(pool.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng.engine());
      for (std::size_t b = 0; b < size; ++b) out.push_back(pool[idx[b]]);
      return out;
    }
    for (std::size_t b = 0; b < size; ++b) {
      Rng task_rng = rng.split(b);
      out.push_back(grids.empty() ? sample_gp_task(source.kernel, task_rng) : grid_draw(task_rng));
    }
    return out;
  }
};

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::vector<std::vector<double>> take_grads(const std::vector<Tensor>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    if (p.has_grad()) {
      out.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      out.emplace_back(p.numel(), 0.0);
    }
  }
  return out;
}

struct TaskGrads {
  std::vector<std::vector<double>> model;
  std::vector<std::vector<double>> proposal;
  LossDiagnostics diag;
  double loss = 0.0;
};

std::string describe_failure(std::size_t step, std::size_t task, const ObjectiveConfig& obj, const TaskGrads& g,
                             const char* what) {
  std::ostringstream os;
  os << "step " << step << ", task " << task << ": non-finite " << what << " (objective " << objective_name(obj.kind)
     << ", loss " << g.loss << ", gen_ll " << g.diag.gen_ll << ", prior_ll " << g.diag.prior_ll << ", kl "
     << g.diag.kl << ", ess " << g.diag.ess << ")";
  return os.str();
}

// Loss and gradients of one task, computed in a fresh graph on `params`.
TaskGrads task_gradients(ModelParams& params, EncoderParams* proposal, const Task& task, const ObjectiveConfig& obj,
                         Rng rng) {
  TaskGrads out;
  params.zero_grad();
  LossBundle bundle = build_loss(params, task, obj, rng, proposal);
  out.loss = bundle.loss.item();
  out.diag = bundle.diag;
  if (!std::isfinite(out.loss)) return out;
  bundle.loss.backward();
  out.model = take_grads(params.parameters());
  if (proposal != nullptr && obj.train_proposal) {
    const auto prop_params = proposal->parameters();
    for (auto p : prop_params) p.zero_grad();
    const LossBundle kl = loss_proposal_kl(*proposal, params.dims.z_dim, task, bundle);
    kl.loss.backward();
    out.proposal = take_grads(prop_params);
  }
  return out;
}

void accumulate(std::vector<std::vector<double>>& into, const std::vector<std::vector<double>>& from) {
  for (std::size_t i = 0; i < into.size(); ++i)
    for (std::size_t k = 0; k < into[i].size(); ++k) into[i][k] += from[i][k];
}

}  // namespace

std::pair<std::size_t, std::size_t> TaskSource::io_dims() const {
  if (!fixed.empty()) return {fixed.front().x_dim, fixed.front().y_dim};
  if (task_file) {
    const TaskBatch tasks = load_tasks(*task_file);
    if (tasks.empty()) throw ConfigError("task file " + task_file->string() + " holds no tasks");
    return {tasks.front().x_dim, tasks.front().y_dim};
  }
  if (!grid_files.empty()) return {2, 1};
  return {1, 1};
}

void TrainConfig::validate() const {
  objective.validate();
  if (!(adam.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(proposal_lr > 0.0)) throw ConfigError("train.proposal_lr must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw ConfigError("train.eps must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be at least 1");
  if (eval_particles == 0) throw ConfigError("eval.particles must be at least 1");
  if (eval_tasks == 0) throw ConfigError("eval.tasks must be at least 1");
  if (threads == 0) throw ConfigError("train.threads must be at least 1");
}

std::size_t threads_from_env() {
  const char* raw = std::getenv("NP_LAB_THREADS");
  if (raw == nullptr || *raw == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(raw, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError(std::string("NP_LAB_THREADS must be a positive integer, got '") + raw + "'");
  return static_cast<std::size_t>(v);
}

TaskBatch evaluation_tasks(const TrainConfig& cfg, std::size_t count) {
  const Sampler sampler(cfg.source);
  if (!sampler.pool.empty()) {
    return TaskBatch(sampler.pool.begin(), sampler.pool.begin() + static_cast<std::ptrdiff_t>(std::min(count, sampler.pool.size())));
  }
  return sampler.batch(count, Rng(cfg.seed).split(kEvalTaskStream));
}

TrainResult train(const TrainConfig& cfg, const EvalCallback& on_eval) {
  cfg.validate();
  const auto [x_dim, y_dim] = cfg.source.io_dims();
  if (x_dim != cfg.dims.x_dim || y_dim != cfg.dims.y_dim) {
    throw ConfigError("model dims " + cfg.dims.describe() + " do not match task dims (x=" + std::to_string(x_dim) +
                      ", y=" + std::to_string(y_dim) + ")");
  }
  const auto start = std::chrono::steady_clock::now();
  const Rng root(cfg.seed);
  const ObjectiveConfig& obj = cfg.objective;
  const bool deterministic = obj.kind == ObjectiveKind::kCnp;

  TrainResult result{ModelParams::init(cfg.dims, cfg.seed), std::nullopt, {}, 0};
  if (obj.kind == ObjectiveKind::kSiNp && obj.proposal == ProposalMode::kLearned) {
    Rng prop_rng = root.split(kProposalStream);
    result.proposal = EncoderParams::init(cfg.dims, prop_rng);
  }
  if (cfg.steps == 0) return result;

  const Sampler sampler(cfg.source);
  const TaskBatch eval_set = evaluation_tasks(cfg, cfg.eval_tasks);

  std::vector<Tensor> live = result.params.parameters();
  AdamState state = AdamState::zeros_like(live);
  std::vector<Tensor> live_prop = result.proposal ? result.proposal->parameters() : std::vector<Tensor>{};
  AdamState prop_state = AdamState::zeros_like(live_prop);
  AdamConfig prop_adam = cfg.adam;
  prop_adam.lr = cfg.proposal_lr;

  auto evaluate = [&](std::size_t step) {
    Rng eval_rng = root.split(kEvalDrawStream).split(step);
    EvalRecord rec = evaluate_mc(result.params, eval_set, cfg.eval_particles, eval_rng, deterministic);
    rec.step = step;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    for (double v : {rec.ll_context, rec.ll_target, rec.prior_trace, rec.ess}) {
      if (!std::isfinite(v)) throw NumericalError("step " + std::to_string(step) + ": non-finite evaluation metric");
    }
    if (on_eval) on_eval(rec);
    result.log.push_back(std::move(rec));
  };

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const TaskBatch batch = sampler.batch(cfg.batch_size, root.split(kTaskStream).split(step));
    const Rng loss_root = root.split(kLossStream).split(step);
    std::vector<TaskGrads> per_task(batch.size());

    const std::size_t workers = std::min(cfg.threads, batch.size());
    if (workers <= 1) {
      EncoderParams* prop = result.proposal ? &*result.proposal : nullptr;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        per_task[b] = task_gradients(result.params, prop, batch[b], obj, loss_root.split(b));
      }
    } else {
      // Each worker owns a copy of the current iterate; the sum below runs in
      // task order, so results do not depend on the worker count.
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          ModelParams local = result.params.snapshot();
          std::optional<EncoderParams> local_prop;
          if (result.proposal) local_prop = result.proposal->snapshot();
          for (std::size_t b = w; b < batch.size(); b += workers) {
            per_task[b] = task_gradients(local, local_prop ? &*local_prop : nullptr, batch[b], obj, loss_root.split(b));
          }
        });
      }
      for (auto& t : pool) t.join();
    }

    std::vector<std::vector<double>> grads = AdamState::zeros_like(live).m;
    std::vector<std::vector<double>> prop_grads = AdamState::zeros_like(live_prop).m;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const TaskGrads& g = per_task[b];
      if (!std::isfinite(g.loss)) throw NumericalError(describe_failure(step, b, obj, g, "loss"));
      for (const auto& v : g.model) {
        if (!all_finite(v)) throw NumericalError(describe_failure(step, b, obj, g, "gradient"));
      }
      accumulate(grads, g.model);
      if (!g.proposal.empty()) accumulate(prop_grads, g.proposal);
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& v : grads)
      for (auto& x : v) x *= inv;
    for (auto& v : prop_grads)
      for (auto& x : v) x *= inv;

    adam_step(live, grads, state, cfg.adam);
    if (obj.train_proposal && result.proposal) adam_step(live_prop, prop_grads, prop_state, prop_adam);
    for (std::size_t i = 0; i < live.size(); ++i) {
      if (!all_finite(live[i].data()) || !all_finite(state.v[i])) {
        throw NumericalError("step " + std::to_string(step) + ": parameter " + result.params.parameter_names()[i] +
                             " became non-finite after the update");
      }
    }
    result.steps_done = step;
    if ((cfg.eval_every > 0 && step % cfg.eval_every == 0) || step == cfg.steps) evaluate(step);
  }
  result.params.zero_grad();
  return result;
}

}  // namespace nplab
