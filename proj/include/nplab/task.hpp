#pragma once

#include "nplab/autodiff.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace nplab {

using ad::Tensor;

enum class KernelKind { kMatern52, kRbf, kPeriodic };

std::string kernel_name(KernelKind kind);
KernelKind parse_kernel(const std::string& name);

struct KernelConfig {
  KernelKind kind = KernelKind::kRbf;
  double s = 1.0;  // output scale
  double l = 0.5;  // length scale
  double p = 0.0;  // period, periodic kernel only
  // Observation noise standard deviation added to the Gram diagonal.
  double noise = 0.02;

  bool operator==(const KernelConfig&) const = default;
};

// Inputs/outputs as [rows, dim] matrices; constants, no gradient.
struct PointSet {
  Tensor x;
  Tensor y;
  std::size_t size() const { return x.rows(); }
};

// One meta-learning task. The context is always the first n_context points of
// the target arrays.
struct Task {
  std::size_t x_dim = 1;
  std::size_t y_dim = 1;
  std::vector<double> x_all;  // row-major [size, x_dim]
  std::vector<double> y_all;  // row-major [size, y_dim]
  std::size_t n_context = 0;
  std::optional<KernelConfig> kernel;

  std::size_t size() const { return x_dim == 0 ? 0 : x_all.size() / x_dim; }
  std::size_t n_extra() const { return size() - n_context; }

  PointSet prefix(std::size_t count) const;
  PointSet context() const { return prefix(n_context); }
  PointSet target() const { return prefix(size()); }

  // Same points with the first n as context. Throws if n exceeds size().
  Task with_context(std::size_t n) const;

  // Throws std::invalid_argument on inconsistent array lengths or split.
  void validate() const;

  bool operator==(const Task&) const = default;
};

using TaskBatch = std::vector<Task>;

}  // namespace nplab
