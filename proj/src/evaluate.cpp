#include "nplab/trainer.hpp"

#include <cmath>

namespace nplab {

namespace {

double log_mean_exp(std::span<const double> v) {
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - mx);
  return mx + std::log(acc / static_cast<double>(v.size()));
}

}  // namespace

EvalRecord evaluate_mc(const ModelParams& params, const TaskBatch& tasks, std::size_t particles, Rng& rng,
                       bool deterministic_latent) {
  if (particles == 0) throw std::invalid_argument("evaluate_mc: particle count must be at least 1");
  if (tasks.empty()) throw std::invalid_argument("evaluate_mc: no tasks to evaluate");
  const ModelParams frozen = params.frozen();

  EvalRecord rec;
  rec.tasks = tasks.size();
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const Task& task = tasks[i];
    if (task.n_context == 0) throw std::invalid_argument("evaluate_mc: task " + std::to_string(i) + " has no context");
    const PointSet context = task.context();
    const PointSet target = task.target();
    const DiagGaussian prior = encode(frozen, context);
    const Tensor zs = deterministic_latent ? ad::tile_rows(ad::reshape(prior.mu, {1, prior.dim()}), particles)
                                           : sample_rt(prior, rng, particles).z;
    const Tensor ll_c = gen_loglik_particles(frozen, context, zs);
    const Tensor ll_t = gen_loglik_particles(frozen, target, zs);

    const double points_c = static_cast<double>(context.size() * frozen.dims.y_dim);
    const double points_t = static_cast<double>(target.size() * frozen.dims.y_dim);
    const double sum_t = log_mean_exp(ll_t.data());
    rec.ll_context += log_mean_exp(ll_c.data()) / points_c;
    rec.per_task_target.push_back(sum_t / points_t);
    rec.ll_target_sum += sum_t;
    rec.prior_trace += trace_cov(prior);
    rec.ess += effective_sample_size(self_normalize(ll_t.data()));
  }
  const double n = static_cast<double>(tasks.size());
  double mean = 0.0;
  for (double v : rec.per_task_target) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : rec.per_task_target) var += (v - mean) * (v - mean);
  rec.ll_target = mean;
  rec.ll_target_stderr = tasks.size() > 1 ? std::sqrt(var / (n - 1.0) / n) : 0.0;
  rec.ll_context /= n;
  rec.ll_target_sum /= n;
  rec.prior_trace /= n;
  rec.ess /= n;
  return rec;
}

std::vector<SweepPoint> asymptotic_sweep(const ModelParams& params, const TaskBatch& tasks,
                                         std::span<const std::size_t> context_counts, std::size_t particles,
                                         Rng& rng, bool deterministic_latent) {
  if (context_counts.empty()) throw std::invalid_argument("asymptotic_sweep: no context counts given");
  std::vector<SweepPoint> out;
  for (std::size_t n : context_counts) {
    if (n == 0) throw std::invalid_argument("asymptotic_sweep: context counts must be positive");
    TaskBatch split;
    split.reserve(tasks.size());
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (n > tasks[i].size()) {
        throw std::invalid_argument("asymptotic_sweep: context count " + std::to_string(n) + " exceeds the " +
                                    std::to_string(tasks[i].size()) + " points of task " + std::to_string(i));
      }
      split.push_back(tasks[i].with_context(n));
    }
    SweepPoint p;
    p.n_context = n;
    p.record = evaluate_mc(params, split, particles, rng, deterministic_latent);
    p.record.split = "sweep";
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace nplab
