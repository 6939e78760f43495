#include "nplab/selftest.hpp"

#include "nplab/checkpoint.hpp"
#include "nplab/distributions.hpp"
#include "nplab/model.hpp"
#include "nplab/objectives.hpp"
#include "nplab/tasks.hpp"
#include "nplab/trainer.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>

namespace nplab {

namespace {

using Outcome = std::pair<bool, std::string>;

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

ModelDims small_dims() {
  ModelDims d;
  d.r_dim = 8;
  d.z_dim = 4;
  d.hidden = 8;
  return d;
}

Task small_task(std::uint64_t seed, std::size_t context, std::size_t total) {
  Rng rng(seed);
  return sample_gp_task_sized(KernelKind::kRbf, total, context, rng);
}

Outcome check_gradients() {
  const ModelParams params = ModelParams::init(small_dims(), 3);
  const ModelParams snapshot = params.snapshot();
  const Task task = small_task(4, 3, 7);
  auto leaves = params.parameters();
  double worst = 0.0;
  std::string where;
  for (auto kind : {ObjectiveKind::kNp, ObjectiveKind::kCnp, ObjectiveKind::kMlNp, ObjectiveKind::kSiNp}) {
    ObjectiveConfig cfg;
    cfg.kind = kind;
    cfg.particles = 4;
    const auto f = [&] {
      Rng rng(5);
      if (kind == ObjectiveKind::kSiNp) return loss_si(params, &snapshot, task, cfg, rng).loss;
      return build_loss(params, task, cfg, rng).loss;
    };
    const ad::GradReport r = ad::grad_check(f, leaves, 1e-5);
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      where = objective_name(kind);
    }
  }
  return {worst < 1e-4, "worst relative error " + fmt(worst) + " (" + where + ")"};
}

Outcome check_kl() {
  const DiagGaussian p(Tensor::vector({0.3, -1.2}), Tensor::vector({0.1, -0.4}));
  const double self = kl_diag(p, p).item();
  const DiagGaussian a(Tensor::vector({0.0}), Tensor::vector({0.0}));
  const DiagGaussian b(Tensor::vector({1.0}), Tensor::vector({0.0}));
  const double half = kl_diag(a, b).item();
  Rng rng(11);
  double min_kl = 1e300;
  for (int i = 0; i < 200; ++i) {
    const DiagGaussian q(Tensor::vector({rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)}),
                         Tensor::vector({rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)}));
    const DiagGaussian r(Tensor::vector({rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)}),
                         Tensor::vector({rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)}));
    min_kl = std::min(min_kl, kl_diag(q, r).item());
  }
  const bool ok = std::abs(self) < 1e-12 && std::abs(half - 0.5) < 1e-15 && min_kl >= 0.0;
  return {ok, "KL(p||p)=" + fmt(self) + ", KL(N(0,1)||N(1,1))=" + fmt(half) + ", min random KL " + fmt(min_kl)};
}

Outcome check_self_normalize() {
  Rng rng(12);
  std::vector<double> log_w(9);
  // Multiples of 1/8 keep the shifted values exact.
  for (auto& v : log_w) v = std::round(rng.uniform(-30, 5) * 8.0) / 8.0;
  const auto w = self_normalize(log_w);
  double total = 0.0;
  for (double v : w) total += v;
  std::vector<double> shifted = log_w;
  for (auto& v : shifted) v += 17.25;
  const bool shift_exact = self_normalize(shifted) == w;
  const auto one = self_normalize(std::vector<double>{-123.4});
  const auto pair = self_normalize(std::vector<double>{0.0, std::log(3.0)});
  const bool ok = std::abs(total - 1.0) < 1e-12 && shift_exact && one == std::vector<double>{1.0} &&
                  std::abs(pair[0] - 0.25) < 1e-15 && std::abs(pair[1] - 0.75) < 1e-15 &&
                  std::abs(effective_sample_size(pair) - 1.6) < 1e-12;
  return {ok, "sum-1 " + fmt(total - 1.0) + (shift_exact ? ", shift invariant" : ", shift changes weights")};
}

// Joint Gaussian log-density through an LU factorization, independent of the
// Cholesky path used by the oracle.
double joint_logpdf(const Task& task) {
  const std::size_t n = task.size();
  const std::vector<double> k = gram_matrix(*task.kernel, task.x_all);
  Eigen::MatrixXd kk(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) kk(i, j) = k[i * n + j];
  const Eigen::Map<const Eigen::VectorXd> y(task.y_all.data(), static_cast<Eigen::Index>(n));
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(kk);
  const double quad = y.dot(lu.solve(y));
  return -0.5 * quad - 0.5 * std::log(lu.determinant()) -
         0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
}

Outcome check_gp_oracle() {
  Rng rng(13);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = rng.uniform_int(1, 3);
    const std::size_t m = rng.uniform_int(0, 3);
    const auto kind = static_cast<KernelKind>(rng.uniform_int(0, 2));
    const Task task = sample_gp_task_sized(kind, n + m, n, rng);
    const double brute = joint_logpdf(task) / static_cast<double>(n + m);
    worst = std::max(worst, std::abs(gp_oracle_loglik(task) - brute));
  }
  return {worst < 1e-8, "max |oracle - brute force| " + fmt(worst)};
}

Outcome check_permutation() {
  const ModelParams params = ModelParams::init(ModelDims{}, 21);
  Rng rng(22);
  std::vector<double> x(10), y(10);
  for (auto& v : x) v = rng.uniform(-2, 2);
  for (auto& v : y) v = rng.uniform(-2, 2);
  const DiagGaussian base = encode(params, {Tensor::matrix(10, 1, x), Tensor::matrix(10, 1, y)});
  double worst = 0.0;
  std::vector<std::size_t> order(10);
  for (std::size_t i = 0; i < 10; ++i) order[i] = i;
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    std::vector<double> px, py;
    for (auto i : order) {
      px.push_back(x[i]);
      py.push_back(y[i]);
    }
    const DiagGaussian perm = encode(params, {Tensor::matrix(10, 1, px), Tensor::matrix(10, 1, py)});
    for (const auto& [a, b] : {std::pair{base.mu, perm.mu}, std::pair{base.log_sigma, perm.log_sigma}}) {
      for (std::size_t k = 0; k < a.numel(); ++k) {
        const double denom = std::max(std::abs(a.at(k)), 1e-300);
        worst = std::max(worst, std::abs(a.at(k) - b.at(k)) / denom);
      }
    }
  }
  return {worst < 1e-9, "max relative change " + fmt(worst)};
}

Outcome check_sigma_transform() {
  ModelParams params = ModelParams::init(small_dims(), 31);
  Linear& out = params.decoder.layers.back();
  std::fill(out.weight.mutable_data().begin(), out.weight.mutable_data().end(), 0.0);
  const Tensor x = Tensor::vector({0.3});
  const Tensor z = Tensor::vector(std::vector<double>(params.dims.z_dim, 0.5));
  auto sigma_at = [&](double raw) {
    out.bias.mutable_data()[0] = 0.0;
    out.bias.mutable_data()[1] = raw;
    return decode(params, x, z).sigma_hat.item();
  };
  const double lo = sigma_at(-30.0);
  const double hi = sigma_at(30.0);
  const double mid = sigma_at(0.0);
  const PointSet at_mode{Tensor::matrix(1, 1, {0.3}), Tensor::matrix(1, 1, {0.0})};
  const double ll = gen_loglik(params, at_mode, z).item();
  const double expect = -0.5 * std::log(2.0 * std::numbers::pi) - std::log(0.55);
  const bool ok = std::abs(lo - 0.1) < 1e-6 && std::abs(hi - 1.0) < 1e-6 && std::abs(mid - 0.55) < 1e-12 &&
                  std::abs(ll - expect) < 1e-12;
  return {ok, "sigma_hat(-30)=" + std::to_string(lo) + ", sigma_hat(+30)=" + std::to_string(hi) +
                  ", sigma_hat(0)=" + std::to_string(mid)};
}

Outcome check_determinism() {
  TrainConfig cfg;
  cfg.dims = small_dims();
  cfg.objective.kind = ObjectiveKind::kSiNp;
  cfg.objective.particles = 4;
  cfg.steps = 6;
  cfg.batch_size = 3;
  cfg.eval_tasks = 4;
  cfg.eval_particles = 4;
  cfg.seed = 41;
  auto run = [&](std::size_t threads) {
    TrainConfig c = cfg;
    c.threads = threads;
    const TrainResult r = train(c);
    return checkpoint_to_json({r.params, "SI-NP", false, c.seed, r.steps_done}).dump();
  };
  const std::string a = run(1);
  const std::string b = run(1);
  const std::string c = run(2);
  return {a == b && a == c, a == b ? (a == c ? "identical bytes across runs and thread counts"
                                             : "thread count changes the checkpoint")
                                   : "repeated run changes the checkpoint"};
}

Outcome check_grid_round_trip() {
  Grid g;
  g.width = 3;
  g.height = 2;
  g.values = {0.0, 0.25, 0.5, 0.75, 1.0, 0.125};
  Rng rng(51);
  const Task task = grid_task(g, 2, rng);
  const Task back = task_from_json(nlohmann::json::parse(task_to_json(task).dump()));
  Grid flat = g;
  std::fill(flat.values.begin(), flat.values.end(), 0.4);
  const Task constant = grid_task(flat, 1, rng);
  const bool all_equal = std::all_of(constant.y_all.begin(), constant.y_all.end(), [](double v) { return v == 0.4; });
  const bool ok = back == task && task.size() == 6 && task.n_context == 2 && task.x_dim == 2 && all_equal;
  return {ok, ok ? "bitwise equal after reload" : "task changed across a save/load cycle"};
}

}  // namespace

bool SelftestReport::ok() const {
  return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

const SelftestCheck* SelftestReport::find(const std::string& name) const {
  for (const auto& c : checks)
    if (c.name == name) return &c;
  return nullptr;
}

SelftestReport run_selftest(const SelftestOptions& opts, std::ostream* log) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> checks = {
      {"gradients", check_gradients},
      {"kl_closed_form", check_kl},
      {"self_normalize", check_self_normalize},
      {"gp_oracle_brute_force", check_gp_oracle},
      {"encode_permutation", check_permutation},
      {"sigma_transform", check_sigma_transform},
      {"determinism", check_determinism},
      {"grid_round_trip", check_grid_round_trip},
  };
  const double saved_floor = output_sigma_floor();
  set_output_sigma_floor_for_testing(opts.sigma_floor);
  SelftestReport report;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& [name, fn] : checks) {
    const auto c0 = std::chrono::steady_clock::now();
    SelftestCheck check{name, false, "", 0.0};
    try {
      std::tie(check.passed, check.detail) = fn();
    } catch (const std::exception& e) {
      check.detail = std::string("threw: ") + e.what();
    }
    check.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - c0).count();
    if (log) *log << (check.passed ? "PASS " : "FAIL ") << check.name << ": " << check.detail << "\n";
    report.checks.push_back(std::move(check));
  }
  set_output_sigma_floor_for_testing(saved_floor);
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace nplab
