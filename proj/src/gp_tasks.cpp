#include "nplab/errors.hpp"
#include "nplab/tasks.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

namespace nplab {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Cholesky with diagonal jitter escalation. Jitter levels are relative to s^2:
// (0 when start_rel == 0), then 1e-6, 1e-5, ..., 1e-2.
Eigen::LLT<MatrixXd> factor(const MatrixXd& k, double s2, double start_rel, const char* who) {
  std::vector<double> levels;
  if (start_rel == 0.0) levels.push_back(0.0);
  for (double rel = 1e-6; rel <= 1e-2 * 1.0000001; rel *= 10.0) {
    if (rel >= start_rel) levels.push_back(rel);
  }
  for (double rel : levels) {
    MatrixXd kj = k;
    kj.diagonal().array() += rel * s2;
    Eigen::LLT<MatrixXd> llt(kj);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw NumericalError(std::string(who) + ": Gram matrix not positive definite even with jitter 1e-2 s^2");
}

double gaussian_logpdf(const VectorXd& r, const Eigen::LLT<MatrixXd>& llt) {
  const VectorXd a = llt.matrixL().solve(r);
  const double log_det_half = llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * a.squaredNorm() - log_det_half - 0.5 * static_cast<double>(r.size()) * std::log(2.0 * std::numbers::pi);
}

MatrixXd gram(const KernelConfig& cfg, std::span<const double> xs) {
  const auto n = static_cast<Eigen::Index>(xs.size());
  const std::vector<double> k = gram_matrix(cfg, xs);
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(k.data(), n, n);
}

}  // namespace

Task sample_gp_function(const KernelConfig& cfg, std::vector<double> xs, std::size_t n_context, Rng& rng) {
  if (n_context > xs.size()) throw std::invalid_argument("sample_gp_function: context larger than point count");
  const auto llt = factor(gram(cfg, xs), cfg.s * cfg.s, 1e-6, "sample_gp_function");
  VectorXd eps(static_cast<Eigen::Index>(xs.size()));
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
  const VectorXd y = llt.matrixL() * eps;

  Task task;
  task.x_dim = 1;
  task.y_dim = 1;
  task.x_all = std::move(xs);
  task.y_all.assign(y.data(), y.data() + y.size());
  task.n_context = n_context;
  task.kernel = cfg;
  return task;
}

Task sample_gp_task(KernelKind kind, Rng& rng) {
  const KernelConfig cfg = sample_kernel(kind, rng);
  const std::size_t n = rng.uniform_int(3, 47);
  const std::size_t m = rng.uniform_int(3, 50 - n);
  std::vector<double> xs(n + m);
  for (auto& x : xs) x = rng.uniform(-2.0, 2.0);
  return sample_gp_function(cfg, std::move(xs), n, rng);
}

Task sample_gp_task_sized(KernelKind kind, std::size_t total, std::size_t n_context, Rng& rng) {
  const KernelConfig cfg = sample_kernel(kind, rng);
  std::vector<double> xs(total);
  for (auto& x : xs) x = rng.uniform(-2.0, 2.0);
  return sample_gp_function(cfg, std::move(xs), n_context, rng);
}

double gp_oracle_loglik(const Task& task) {
  if (!task.kernel) throw std::invalid_argument("gp_oracle_loglik: task carries no kernel provenance");
  if (task.x_dim != 1 || task.y_dim != 1) throw std::invalid_argument("gp_oracle_loglik: needs 1-D inputs and outputs");
  task.validate();
  const KernelConfig& cfg = *task.kernel;
  const double s2 = cfg.s * cfg.s;
  const auto total = static_cast<Eigen::Index>(task.size());
  const auto n = static_cast<Eigen::Index>(task.n_context);
  if (total == 0) throw std::invalid_argument("gp_oracle_loglik: empty task");
  const MatrixXd k = gram(cfg, task.x_all);
  const VectorXd y = Eigen::Map<const VectorXd>(task.y_all.data(), total);

  if (n == 0 || n == total) {
    return gaussian_logpdf(y, factor(k, s2, 0.0, "gp_oracle_loglik")) / static_cast<double>(total);
  }
  const Eigen::Index m = total - n;
  const auto llt_c = factor(k.topLeftCorner(n, n), s2, 0.0, "gp_oracle_loglik");
  const VectorXd y_c = y.head(n);
  const double ll_context = gaussian_logpdf(y_c, llt_c);

  const MatrixXd k_tc = k.bottomLeftCorner(m, n);
  const VectorXd mu = k_tc * llt_c.solve(y_c);
  const MatrixXd cov = k.bottomRightCorner(m, m) - k_tc * llt_c.solve(k_tc.transpose());
  const double ll_rest = gaussian_logpdf(y.tail(m) - mu, factor(cov, s2, 0.0, "gp_oracle_loglik"));
  return (ll_context + ll_rest) / static_cast<double>(total);
}

}  // namespace nplab
