#include "nplab/distributions.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace nplab {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

Tensor clamped(const Tensor& log_sigma) { return ad::clamp(log_sigma, kLogSigmaMin, kLogSigmaMax); }

}  // namespace

DiagGaussian::DiagGaussian(Tensor mu_, Tensor log_sigma_) : mu(std::move(mu_)), log_sigma(std::move(log_sigma_)) {
  if (mu.shape() != log_sigma.shape() || mu.rank() != 1) {
    throw ad::ShapeError("DiagGaussian", mu.shape(), log_sigma.shape());
  }
}

Tensor log_prob(const DiagGaussian& dist, const Tensor& x) {
  if (x.shape() != dist.mu.shape()) throw ad::ShapeError("log_prob", dist.mu.shape(), x.shape());
  const Tensor ls = clamped(dist.log_sigma);
  const Tensor z2 = ad::square(x - dist.mu) * ad::exp(ad::scale(ls, -2.0));
  const Tensor per_dim = ad::neg(ad::scale(z2, 0.5) + ls);
  return ad::add_scalar(ad::sum(per_dim), -kHalfLog2Pi * static_cast<double>(dist.dim()));
}

Tensor log_prob_rows(const DiagGaussian& dist, const Tensor& xs) {
  if (xs.rank() != 2 || xs.cols() != dist.dim()) throw ad::ShapeError("log_prob_rows", dist.mu.shape(), xs.shape());
  const Tensor ls = clamped(dist.log_sigma);
  const Tensor z2 = ad::square(xs - dist.mu) * ad::exp(ad::scale(ls, -2.0));
  const Tensor per_dim = ad::scale(z2, -0.5) - ls;
  return ad::add_scalar(ad::sum(per_dim, 1), -kHalfLog2Pi * static_cast<double>(dist.dim()));
}

Tensor reparameterize(const DiagGaussian& dist, const Tensor& eps) {
  if (eps.cols() != dist.dim()) throw ad::ShapeError("reparameterize", eps.shape(), dist.mu.shape());
  const Tensor sigma = ad::exp(ad::clamp(dist.log_sigma, -std::numeric_limits<double>::infinity(), kLogSigmaMax));
  return eps.rank() == 1 ? dist.mu + eps * sigma : (eps * sigma) + dist.mu;
}

Draw sample_rt(const DiagGaussian& dist, Rng& rng) {
  std::vector<double> eps(dist.dim());
  for (auto& e : eps) e = rng.normal();
  Tensor e = Tensor::vector(std::move(eps));
  return {reparameterize(dist, e), e};
}

Draw sample_rt(const DiagGaussian& dist, Rng& rng, std::size_t count) {
  const std::size_t d = dist.dim();
  std::vector<double> eps(count * d);
  for (auto& e : eps) e = rng.normal();
  Tensor e = Tensor::matrix(count, d, std::move(eps));
  return {reparameterize(dist, e), e};
}

Tensor kl_diag(const DiagGaussian& q, const DiagGaussian& p) {
  if (q.mu.shape() != p.mu.shape()) throw ad::ShapeError("kl_diag", q.mu.shape(), p.mu.shape());
  const Tensor lq = clamped(q.log_sigma);
  const Tensor lp = clamped(p.log_sigma);
  const Tensor num = ad::exp(ad::scale(lq, 2.0)) + ad::square(q.mu - p.mu);
  const Tensor ratio = num * ad::exp(ad::scale(lp, -2.0));
  const Tensor per_dim = (lp - lq) + ad::add_scalar(ad::scale(ratio, 0.5), -0.5);
  return ad::sum(per_dim);
}

double trace_cov(const DiagGaussian& dist) {
  double total = 0.0;
  for (double ls : dist.log_sigma.data()) total += std::exp(2.0 * ls);
  return total;
}

}  // namespace nplab
