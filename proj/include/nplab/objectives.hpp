#pragma once

// Training losses for the neural-process family. Every loss is the negated
// objective for a single task; the trainer averages them over a batch.

#include "nplab/model.hpp"
#include "nplab/rng.hpp"
#include "nplab/task.hpp"

#include <span>
#include <string>
#include <vector>

namespace nplab {

enum class ObjectiveKind { kNp, kCnp, kMlNp, kSiNp };

std::string objective_name(ObjectiveKind kind);
// Accepts NP, CNP, ML-NP, SI-NP (case-insensitive, '_' allowed for '-').
ObjectiveKind parse_objective(const std::string& name);

enum class ProposalMode { kPrior, kLearned };

struct ObjectiveConfig {
  ObjectiveKind kind = ObjectiveKind::kSiNp;
  std::size_t particles = 16;  // ignored by CNP and NP
  // The prior log-likelihood term of SI-NP is scaled by (1 - alpha).
  double alpha = 0.0;
  ProposalMode proposal = ProposalMode::kPrior;
  bool train_proposal = false;

  void validate() const;
};

struct LossDiagnostics {
  double gen_ll = 0.0;    // (weighted) generative log-likelihood
  double prior_ll = 0.0;  // (weighted) functional prior log-likelihood, SI-NP only
  double kl = 0.0;        // NP only
  double ess = 1.0;
  std::vector<double> weights;
};

struct LossBundle {
  Tensor loss;  // scalar, to minimize
  LossDiagnostics diag;
  Tensor particles;  // detached [B, z_dim] draws, when the loss samples any
};

// Softmax with max-shift. Throws NumericalError naming the first non-finite
// entry.
std::vector<double> self_normalize(std::span<const double> log_w);

// 1 / sum(w^2) for normalized weights.
double effective_sample_size(std::span<const double> weights);

// -(E_q(z|T)[ln p(T|z)] - KL[q(z|T) || q(z|C)]), one reparameterized draw.
LossBundle loss_np(const ModelParams& params, const Task& task, Rng& rng);

// -ln p(T | z = mu(C)).
LossBundle loss_cnp(const ModelParams& params, const Task& task);

// -(logsumexp_b ln p(T|z_b) - ln B), z_b reparameterized prior draws.
LossBundle loss_ml(const ModelParams& params, const Task& task, std::size_t particles, Rng& rng);

// Self-normalized importance-weighted EM surrogate. Weights are constants
// computed under `snapshot`; when snapshot is null (or &params) the live
// forward pass supplies them, detached. With the prior as proposal the
// log-weight of particle b is ln p(T|z_b) under the snapshot, and the M-step
// evaluates the live prior reparameterized with the same noise.
LossBundle loss_si(const ModelParams& params, const ModelParams* snapshot, const Task& task,
                   const ObjectiveConfig& cfg, Rng& rng, const EncoderParams* proposal = nullptr);

// -sum_b w_b ln q_eta(z_b | T) on the particles and weights of a paired
// loss_si call; differentiable only in the proposal weights.
LossBundle loss_proposal_kl(const EncoderParams& proposal, std::size_t z_dim, const Task& task,
                            const LossBundle& paired);

// Dispatches on cfg.kind.
LossBundle build_loss(const ModelParams& params, const Task& task, const ObjectiveConfig& cfg, Rng& rng,
                      const EncoderParams* proposal = nullptr);

}  // namespace nplab
