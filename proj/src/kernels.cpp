#include "nplab/errors.hpp"
#include "nplab/tasks.hpp"

#include <cctype>
#include <cmath>
#include <numbers>

namespace nplab {

std::string kernel_name(KernelKind kind) {
  switch (kind) {
    case KernelKind::kMatern52: return "matern52";
    case KernelKind::kRbf: return "rbf";
    case KernelKind::kPeriodic: return "periodic";
  }
  return "?";
}

KernelKind parse_kernel(const std::string& name) {
  std::string key;
  for (char c : name) {
    if (c != '-' && c != '_') key += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  if (key == "rbf") return KernelKind::kRbf;
  if (key == "matern52" || key == "matern") return KernelKind::kMatern52;
  if (key == "periodic") return KernelKind::kPeriodic;
  throw ConfigError("unknown kernel '" + name + "' (expected rbf, matern52 or periodic)");
}

double kernel_eval(const KernelConfig& cfg, double x, double xp) {
  const double s2 = cfg.s * cfg.s;
  const double diff = x - xp;
  switch (cfg.kind) {
    case KernelKind::kMatern52: {
      const double d = 4.0 * std::abs(diff);
      const double a = std::sqrt(5.0) * d / cfg.l;
      return s2 * (1.0 + a + 5.0 * d * d / (3.0 * cfg.l * cfg.l)) * std::exp(-a);
    }
    case KernelKind::kRbf:
      return s2 * std::exp(-diff * diff / (2.0 * cfg.l * cfg.l));
    case KernelKind::kPeriodic: {
      const double sn = std::sin(std::numbers::pi * std::abs(diff) / cfg.p);
      return s2 * std::exp(-2.0 * sn * sn / (cfg.l * cfg.l));
    }
  }
  return 0.0;
}

KernelConfig sample_kernel(KernelKind kind, Rng& rng) {
  KernelConfig cfg;
  cfg.kind = kind;
  cfg.s = rng.uniform(0.1, 1.0);
  cfg.l = rng.uniform(0.1, 0.6);
  if (kind == KernelKind::kPeriodic) cfg.p = rng.uniform(0.1, 0.5);
  return cfg;
}

std::vector<double> gram_matrix(const KernelConfig& cfg, std::span<const double> xs) {
  const std::size_t n = xs.size();
  std::vector<double> k(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) k[i * n + j] = k[j * n + i] = kernel_eval(cfg, xs[i], xs[j]);
    k[i * n + i] += cfg.noise * cfg.noise;
  }
  return k;
}

}  // namespace nplab
