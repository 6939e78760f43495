#pragma once

#include "nplab/autodiff.hpp"
#include "nplab/rng.hpp"

namespace nplab {

using ad::Tensor;

inline constexpr double kLogSigmaMin = -10.0;
inline constexpr double kLogSigmaMax = 5.0;

// Diagonal Gaussian over a d-dimensional latent, parameterized by log sigma.
struct DiagGaussian {
  Tensor mu;         // [d]
  Tensor log_sigma;  // [d]

  DiagGaussian() = default;
  DiagGaussian(Tensor mu_, Tensor log_sigma_);

  std::size_t dim() const { return mu.numel(); }
  DiagGaussian detached() const { return {mu.detach(), log_sigma.detach()}; }
};

struct Draw {
  Tensor z;    // [d] or [B, d]
  Tensor eps;  // same shape as z, never requires grad
};

// Log-density of x ([d]). log_sigma is clamped to [kLogSigmaMin, kLogSigmaMax].
Tensor log_prob(const DiagGaussian& dist, const Tensor& x);
// Row-wise log-density of xs ([B, d]); returns [B].
Tensor log_prob_rows(const DiagGaussian& dist, const Tensor& xs);

// z = mu + eps * sigma with eps ~ N(0, I). Only the upper log_sigma bound is
// applied here so that a degenerate sigma reproduces mu.
Draw sample_rt(const DiagGaussian& dist, Rng& rng);
// B draws stacked as rows, [B, d].
Draw sample_rt(const DiagGaussian& dist, Rng& rng, std::size_t count);
// mu + eps * sigma for given noise ([d] or [B, d]), attached to dist.
Tensor reparameterize(const DiagGaussian& dist, const Tensor& eps);

Tensor kl_diag(const DiagGaussian& q, const DiagGaussian& p);

// Sum of variances, sum_i exp(2 log_sigma_i).
double trace_cov(const DiagGaussian& dist);

}  // namespace nplab
