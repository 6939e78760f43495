#include "nplab/objectives.hpp"

#include "nplab/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

namespace nplab {

namespace {

void require_split(const Task& task, const char* who) {
  if (task.n_context == 0 || task.size() == 0) {
    throw std::invalid_argument(std::string(who) + ": task needs a non-empty context and target (n_context=" +
                                std::to_string(task.n_context) + ", size=" + std::to_string(task.size()) + ")");
  }
}

double weighted(std::span<const double> w, std::span<const double> v) {
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * v[i];
  return acc;
}

}  // namespace

std::string objective_name(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::kNp: return "NP";
    case ObjectiveKind::kCnp: return "CNP";
    case ObjectiveKind::kMlNp: return "ML-NP";
    case ObjectiveKind::kSiNp: return "SI-NP";
  }
  return "?";
}

ObjectiveKind parse_objective(const std::string& name) {
  std::string key;
  for (char c : name) key += c == '_' ? '-' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (key == "NP") return ObjectiveKind::kNp;
  if (key == "CNP") return ObjectiveKind::kCnp;
  if (key == "ML-NP" || key == "MLNP") return ObjectiveKind::kMlNp;
  if (key == "SI-NP" || key == "SINP") return ObjectiveKind::kSiNp;
  throw ConfigError("unknown objective '" + name + "' (expected NP, CNP, ML-NP or SI-NP)");
}

void ObjectiveConfig::validate() const {
  if (particles == 0) throw ConfigError("objective.particles must be at least 1");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("objective.alpha must lie in [0, 1)");
  if (train_proposal && proposal != ProposalMode::kLearned) {
    throw ConfigError("objective.train_proposal requires objective.proposal = learned");
  }
}

std::vector<double> self_normalize(std::span<const double> log_w) {
  if (log_w.empty()) throw std::invalid_argument("self_normalize: no particles");
  for (std::size_t b = 0; b < log_w.size(); ++b) {
    if (!std::isfinite(log_w[b])) {
      throw NumericalError("self_normalize: non-finite log-weight " + std::to_string(log_w[b]) + " at particle " +
                           std::to_string(b));
    }
  }
  const double mx = *std::max_element(log_w.begin(), log_w.end());
  std::vector<double> w(log_w.size());
  double total = 0.0;
  for (std::size_t b = 0; b < w.size(); ++b) total += (w[b] = std::exp(log_w[b] - mx));
  for (auto& v : w) v /= total;
  return w;
}

double effective_sample_size(std::span<const double> weights) {
  double sq = 0.0;
  for (double w : weights) sq += w * w;
  return 1.0 / sq;
}

LossBundle loss_np(const ModelParams& params, const Task& task, Rng& rng) {
  require_split(task, "loss_np");
  const PointSet target = task.target();
  const auto [prior, posterior] = encode_nested(params, target, task.n_context);
  const Draw draw = sample_rt(posterior, rng);
  const Tensor gen = gen_loglik(params, target, draw.z);
  const Tensor kl = kl_diag(posterior, prior);
  LossBundle out;
  out.loss = ad::neg(gen - kl);
  out.diag.gen_ll = gen.item();
  out.diag.kl = kl.item();
  out.particles = ad::reshape(draw.z.detach(), {1, draw.z.numel()});
  return out;
}

LossBundle loss_cnp(const ModelParams& params, const Task& task) {
  require_split(task, "loss_cnp");
  const DiagGaussian prior = encode(params, task.context());
  const Tensor gen = gen_loglik(params, task.target(), prior.mu);
  LossBundle out;
  out.loss = ad::neg(gen);
  out.diag.gen_ll = gen.item();
  return out;
}

LossBundle loss_ml(const ModelParams& params, const Task& task, std::size_t particles, Rng& rng) {
  require_split(task, "loss_ml");
  if (particles == 0) throw std::invalid_argument("loss_ml: particle count must be at least 1");
  const DiagGaussian prior = encode(params, task.context());
  const Draw draws = sample_rt(prior, rng, particles);
  const Tensor gen = gen_loglik_particles(params, task.target(), draws.z);
  const Tensor objective = ad::add_scalar(ad::logsumexp(gen), -std::log(static_cast<double>(particles)));
  LossBundle out;
  out.loss = ad::neg(objective);
  out.diag.weights = self_normalize(gen.data());
  out.diag.ess = effective_sample_size(out.diag.weights);
  out.diag.gen_ll = objective.item();
  out.particles = draws.z.detach();
  return out;
}

LossBundle loss_si(const ModelParams& params, const ModelParams* snapshot, const Task& task,
                   const ObjectiveConfig& cfg, Rng& rng, const EncoderParams* proposal) {
  require_split(task, "loss_si");
  cfg.validate();
  if (cfg.proposal == ProposalMode::kLearned && proposal == nullptr) {
    throw std::invalid_argument("loss_si: learned proposal mode needs proposal parameters");
  }
  if (snapshot == &params) snapshot = nullptr;
  const std::size_t count = cfg.particles;
  const PointSet context = task.context();
  const PointSet target = task.target();

  const DiagGaussian prior = encode(params, context);
  const DiagGaussian prior_k = snapshot ? encode(*snapshot, context).detached() : prior.detached();

  // Prior proposal: the snapshot draw fixes the weights, and the same noise
  // pushed through the live prior carries the M-step gradient. A learned
  // proposal does not depend on the model, so its draws are constants.
  DiagGaussian q;
  Tensor drawn;
  Tensor particles;
  if (cfg.proposal == ProposalMode::kLearned) {
    q = encode(*proposal, params.dims.z_dim, target).detached();
    drawn = sample_rt(q, rng, count).z.detach();
    particles = drawn;
  } else {
    q = prior_k;
    const Draw d = sample_rt(q, rng, count);
    drawn = d.z.detach();
    particles = reparameterize(prior, d.eps);
  }

  const Tensor gen = gen_loglik_particles(params, target, particles);
  const Tensor prior_ll = log_prob_rows(prior, particles);

  // E-step: weights under the snapshot, constants for the M-step gradient.
  const Tensor gen_k = snapshot ? gen_loglik_particles(*snapshot, target, drawn) : gen;
  std::vector<double> log_w(gen_k.data().begin(), gen_k.data().end());
  if (cfg.proposal == ProposalMode::kLearned) {
    const Tensor prior_k_ll = log_prob_rows(prior_k, drawn);
    const Tensor q_ll = log_prob_rows(q, drawn);
    for (std::size_t b = 0; b < count; ++b) log_w[b] += prior_k_ll.at(b) - q_ll.at(b);
  }
  std::vector<double> weights = self_normalize(log_w);

  const Tensor w = Tensor::vector(weights);
  const Tensor per_particle = gen + ad::scale(prior_ll, 1.0 - cfg.alpha);
  LossBundle out;
  out.loss = ad::neg(ad::sum(w * per_particle));
  out.diag.gen_ll = weighted(weights, gen.data());
  out.diag.prior_ll = weighted(weights, prior_ll.data());
  out.diag.ess = effective_sample_size(weights);
  out.diag.weights = std::move(weights);
  out.particles = drawn;
  return out;
}

LossBundle loss_proposal_kl(const EncoderParams& proposal, std::size_t z_dim, const Task& task,
                            const LossBundle& paired) {
  require_split(task, "loss_proposal_kl");
  if (!paired.particles.defined() || paired.diag.weights.size() != paired.particles.rows()) {
    throw std::invalid_argument("loss_proposal_kl: paired loss carries no particles/weights");
  }
  const DiagGaussian q = encode(proposal, z_dim, task.target());
  const Tensor q_ll = log_prob_rows(q, paired.particles);
  const Tensor w = Tensor::vector(paired.diag.weights);
  LossBundle out;
  out.loss = ad::neg(ad::sum(w * q_ll));
  out.diag.weights = paired.diag.weights;
  out.diag.ess = paired.diag.ess;
  out.particles = paired.particles;
  return out;
}

LossBundle build_loss(const ModelParams& params, const Task& task, const ObjectiveConfig& cfg, Rng& rng,
                      const EncoderParams* proposal) {
  switch (cfg.kind) {
    case ObjectiveKind::kNp: return loss_np(params, task, rng);
    case ObjectiveKind::kCnp: return loss_cnp(params, task);
    case ObjectiveKind::kMlNp: return loss_ml(params, task, cfg.particles, rng);
    case ObjectiveKind::kSiNp: return loss_si(params, nullptr, task, cfg, rng, proposal);
  }
  throw std::logic_error("build_loss: unhandled objective");
}

}  // namespace nplab
