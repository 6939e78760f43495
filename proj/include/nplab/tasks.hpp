#pragma once

// Task generation: GP-sampled 1-D regression tasks, the exact GP oracle,
// gridded (image-like) completion tasks and the task file format.

#include "nplab/rng.hpp"
#include "nplab/task.hpp"

#include <json.hpp>

#include <filesystem>
#include <span>
#include <vector>

namespace nplab {

inline constexpr int kTaskFileVersion = 1;

// Matern-5/2 uses d = 4|x - x'|. The periodic kernel is
// s^2 exp(-2 sin^2(pi |x - x'| / p) / l^2); a squared distance inside the sine
// would not give a positive semidefinite Gram matrix.
double kernel_eval(const KernelConfig& cfg, double x, double xp);

// Hyperparameters from s ~ U[0.1, 1], l ~ U[0.1, 0.6], p ~ U[0.1, 0.5].
KernelConfig sample_kernel(KernelKind kind, Rng& rng);

// Gram matrix plus noise^2 on the diagonal, row-major [n, n].
std::vector<double> gram_matrix(const KernelConfig& cfg, std::span<const double> xs);

// Draws y ~ N(0, K + noise^2 I) at the given inputs. Cholesky jitter starts at
// 1e-6 s^2 and grows x10 up to 1e-2 s^2 before a NumericalError.
Task sample_gp_function(const KernelConfig& cfg, std::vector<double> xs, std::size_t n_context, Rng& rng);

// Full generator: kernel hyperparameters, n ~ U{3..47}, m ~ U{3..50-n},
// x ~ U[-2, 2].
Task sample_gp_task(KernelKind kind, Rng& rng);

// As sample_gp_task but with a fixed total size and context count.
Task sample_gp_task_sized(KernelKind kind, std::size_t total, std::size_t n_context, Rng& rng);

// Exact GP log-density of the task outputs, ln p(y_{n+1:n+m} | y_{1:n}) +
// ln p(y_{1:n}), divided by the number of points. Requires kernel provenance.
double gp_oracle_loglik(const Task& task);

struct Grid {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;  // row-major, normalized to [0, 1]
};

// Plain PGM (P2 or P5, scaled by maxval) or CSV rows of values in [0, 1].
Grid load_grid(const std::filesystem::path& path);

// Every pixel becomes a point x = (col, row) / (dim - 1) in [0,1]^2. A random
// subset of n_context pixels forms the context prefix; the rest follow in
// raster order.
Task grid_task(const Grid& grid, std::size_t n_context, Rng& rng);
Task grid_task_from_image(const std::filesystem::path& path, std::size_t n_context, Rng& rng);

nlohmann::json task_to_json(const Task& task);
Task task_from_json(const nlohmann::json& j);
void save_tasks(const std::filesystem::path& path, const TaskBatch& tasks);
TaskBatch load_tasks(const std::filesystem::path& path);

}  // namespace nplab
