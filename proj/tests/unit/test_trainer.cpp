#include "nplab/checkpoint.hpp"
#include "nplab/errors.hpp"
#include "nplab/tasks.hpp"
#include "nplab/trainer.hpp"

#include <doctest.h>

#include <cmath>

using namespace nplab;

namespace {

ModelDims small_dims() {
  ModelDims d;
  d.r_dim = 8;
  d.z_dim = 4;
  d.hidden = 8;
  return d;
}

TrainConfig small_config(ObjectiveKind kind, std::size_t steps) {
  TrainConfig cfg;
  cfg.objective.kind = kind;
  cfg.objective.particles = 4;
  cfg.dims = small_dims();
  cfg.batch_size = 4;
  cfg.steps = steps;
  cfg.eval_tasks = 4;
  cfg.eval_particles = 4;
  cfg.seed = 3;
  return cfg;
}

std::string ckpt_text(const TrainResult& r) { return checkpoint_to_json({r.params, "", false, 0, 0}).dump(); }

}  // namespace

TEST_CASE("adam: zero gradient leaves parameters and moments untouched") {
  std::vector<Tensor> p{Tensor::vector({1.0, -2.0}, true)};
  AdamState s = AdamState::zeros_like(p);
  const std::vector<std::vector<double>> g{{0.0, 0.0}};
  adam_step(p, g, s, AdamConfig{});
  CHECK(p[0].at(0) == 1.0);
  CHECK(p[0].at(1) == -2.0);
  CHECK(s.m[0] == std::vector<double>{0, 0});
  CHECK(s.v[0] == std::vector<double>{0, 0});
  CHECK(s.t == 1);
}

TEST_CASE("adam: first step moves by about the learning rate") {
  std::vector<Tensor> p{Tensor::vector({0.0}, true)};
  AdamState s = AdamState::zeros_like(p);
  AdamConfig cfg;
  cfg.lr = 0.1;
  adam_step(p, std::vector<std::vector<double>>{{1.0}}, s, cfg);
  CHECK(p[0].at(0) == doctest::Approx(-0.1).epsilon(1e-7));
}

TEST_CASE("adam matches an independent scalar implementation over 100 steps") {
  std::vector<Tensor> p{Tensor::vector({1.5}, true)};
  AdamState s = AdamState::zeros_like(p);
  AdamConfig cfg;
  cfg.lr = 0.05;
  double x = 1.5, m = 0.0, v = 0.0;
  for (int t = 1; t <= 100; ++t) {
    const double g = 2.0 * x;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    x -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
    adam_step(p, std::vector<std::vector<double>>{{2.0 * p[0].at(0)}}, s, cfg);
    REQUIRE(std::abs(p[0].at(0) - x) < 1e-12);
  }
}

TEST_CASE("adam rejects shape mismatches") {
  std::vector<Tensor> p{Tensor::vector({0.0, 1.0}, true)};
  AdamState s = AdamState::zeros_like(p);
  CHECK_THROWS(adam_step(p, std::vector<std::vector<double>>{{1.0}}, s, AdamConfig{}));
  CHECK_THROWS(adam_step(p, std::vector<std::vector<double>>{}, s, AdamConfig{}));
}

TEST_CASE("train with zero steps returns the initialization") {
  const TrainConfig cfg = small_config(ObjectiveKind::kSiNp, 0);
  const TrainResult r = train(cfg);
  CHECK(r.log.empty());
  CHECK(r.steps_done == 0);
  CHECK(ckpt_text(r) == checkpoint_to_json({ModelParams::init(cfg.dims, cfg.seed), "", false, 0, 0}).dump());
}

TEST_CASE("CNP overfits a single fixed task") {
  Rng rng(4);
  const Task task = sample_gp_task_sized(KernelKind::kRbf, 20, 8, rng);
  TrainConfig cfg;
  cfg.objective.kind = ObjectiveKind::kCnp;
  cfg.source.fixed = {task};
  cfg.batch_size = 1;
  cfg.steps = 2000;
  cfg.eval_tasks = 1;
  cfg.seed = 5;
  Rng e0(6), e1(6);
  const double before = evaluate_mc(ModelParams::init(cfg.dims, cfg.seed), {task}, 1, e0, true).ll_target;
  const TrainResult r = train(cfg);
  const double after = evaluate_mc(r.params, {task}, 1, e1, true).ll_target;
  CHECK(after - before >= 0.5);
  CHECK(r.log.back().ll_target == doctest::Approx(after).epsilon(1e-12));
}

TEST_CASE("training is bitwise reproducible and independent of the thread count") {
  for (ObjectiveKind kind : {ObjectiveKind::kNp, ObjectiveKind::kMlNp, ObjectiveKind::kSiNp}) {
    TrainConfig cfg = small_config(kind, 5);
    const std::string one = ckpt_text(train(cfg));
    CHECK(ckpt_text(train(cfg)) == one);
    cfg.threads = 3;
    CHECK(ckpt_text(train(cfg)) == one);
  }
}

TEST_CASE("learned proposal training updates the proposal") {
  TrainConfig cfg = small_config(ObjectiveKind::kSiNp, 3);
  cfg.objective.proposal = ProposalMode::kLearned;
  cfg.objective.train_proposal = true;
  const TrainResult r = train(cfg);
  REQUIRE(r.proposal.has_value());
  Rng rng = Rng(cfg.seed).split(15);
  const EncoderParams init = EncoderParams::init(cfg.dims, rng);
  CHECK(r.proposal->g.bias.data()[0] != init.g.bias.data()[0]);
}

TEST_CASE("eval records arrive every eval_every steps and at the end") {
  TrainConfig cfg = small_config(ObjectiveKind::kCnp, 7);
  cfg.eval_every = 3;
  std::vector<std::size_t> seen;
  const TrainResult r = train(cfg, [&](const EvalRecord& rec) { seen.push_back(rec.step); });
  CHECK(seen == std::vector<std::size_t>{3, 6, 7});
  CHECK(r.log.size() == 3);
  for (const auto& rec : r.log) {
    CHECK(std::isfinite(rec.ll_target));
    CHECK(std::isfinite(rec.ll_context));
    CHECK(rec.tasks == 4);
  }
}

TEST_CASE("train config validation") {
  TrainConfig cfg = small_config(ObjectiveKind::kNp, 1);
  cfg.adam.lr = 0.0;
  CHECK_THROWS_AS(train(cfg), ConfigError);
  cfg = small_config(ObjectiveKind::kNp, 1);
  cfg.eval_particles = 0;
  CHECK_THROWS_AS(train(cfg), ConfigError);
  cfg = small_config(ObjectiveKind::kNp, 1);
  cfg.dims.x_dim = 2;
  CHECK_THROWS_AS(train(cfg), ConfigError);
}

TEST_CASE("evaluate_mc with one particle is the single-draw likelihood per point") {
  const ModelParams p = ModelParams::init(small_dims(), 7);
  Rng rng(8);
  const TaskBatch tasks{sample_gp_task(KernelKind::kRbf, rng), sample_gp_task(KernelKind::kRbf, rng)};
  Rng a(9), b(9);
  const EvalRecord rec = evaluate_mc(p, tasks, 1, a);
  double target = 0.0, context = 0.0;
  for (const Task& t : tasks) {
    const Tensor z = sample_rt(encode(p, t.context()), b, 1).z;
    context += gen_loglik_particles(p, t.context(), z).item() / static_cast<double>(t.n_context);
    target += gen_loglik_particles(p, t.target(), z).item() / static_cast<double>(t.size());
  }
  CHECK(rec.ll_target == doctest::Approx(target / 2).epsilon(1e-14));
  CHECK(rec.ll_context == doctest::Approx(context / 2).epsilon(1e-14));
  CHECK(rec.ess == 1.0);
}

TEST_CASE("evaluate_mc under a collapsed prior does not depend on B") {
  ModelParams p = ModelParams::init(small_dims(), 10);
  const std::size_t z = p.dims.z_dim;
  auto w = p.encoder.g.weight.mutable_data();
  for (std::size_t r = 0; r < p.dims.r_dim; ++r)
    for (std::size_t c = z; c < 2 * z; ++c) w[r * 2 * z + c] = 0.0;
  for (std::size_t c = z; c < 2 * z; ++c) p.encoder.g.bias.mutable_data()[c] = -40.0;
  Rng rng(11);
  const TaskBatch tasks{sample_gp_task(KernelKind::kMatern52, rng)};
  Rng a(1), b(2);
  const double one = evaluate_mc(p, tasks, 1, a).ll_target;
  const double many = evaluate_mc(p, tasks, 32, b).ll_target;
  CHECK(std::abs(one - many) < 1e-10);
  CHECK(evaluate_mc(p, tasks, 1, a).prior_trace < 1e-30);
}

TEST_CASE("evaluate_mc leaves the parameters without gradient state") {
  const ModelParams p = ModelParams::init(small_dims(), 12);
  Rng rng(13);
  const TaskBatch tasks{sample_gp_task(KernelKind::kRbf, rng)};
  (void)evaluate_mc(p, tasks, 4, rng);
  for (const Tensor& leaf : p.parameters()) CHECK_FALSE(leaf.has_grad());
  CHECK_THROWS(evaluate_mc(p, tasks, 0, rng));
  CHECK_THROWS(evaluate_mc(p, {}, 4, rng));
}

TEST_CASE("asymptotic sweep re-splits the context") {
  const ModelParams p = ModelParams::init(small_dims(), 14);
  Rng rng(15);
  const TaskBatch tasks{sample_gp_task_sized(KernelKind::kRbf, 10, 3, rng),
                        sample_gp_task_sized(KernelKind::kRbf, 10, 5, rng)};
  const std::vector<std::size_t> counts{1, 5, 10};
  const auto sweep = asymptotic_sweep(p, tasks, counts, 4, rng);
  REQUIRE(sweep.size() == 3);
  CHECK(sweep[2].n_context == 10);
  CHECK(std::isfinite(sweep[2].record.ll_target));
  // With every point in the context both splits cover the same points.
  CHECK(sweep[2].record.ll_context == doctest::Approx(sweep[2].record.ll_target).epsilon(1e-12));
  const std::vector<std::size_t> too_many{11};
  CHECK_THROWS(asymptotic_sweep(p, tasks, too_many, 4, rng));
}
