#include "nplab/errors.hpp"
#include "nplab/tasks.hpp"

#include <fstream>

namespace nplab {

using nlohmann::json;

PointSet Task::prefix(std::size_t count) const {
  if (count > size()) throw std::invalid_argument("Task::prefix: " + std::to_string(count) + " > " + std::to_string(size()));
  std::vector<double> x(x_all.begin(), x_all.begin() + static_cast<std::ptrdiff_t>(count * x_dim));
  std::vector<double> y(y_all.begin(), y_all.begin() + static_cast<std::ptrdiff_t>(count * y_dim));
  return {Tensor::matrix(count, x_dim, std::move(x)), Tensor::matrix(count, y_dim, std::move(y))};
}

Task Task::with_context(std::size_t n) const {
  if (n > size()) {
    throw std::invalid_argument("context count " + std::to_string(n) + " exceeds the " + std::to_string(size()) +
                                " available points");
  }
  Task t = *this;
  t.n_context = n;
  return t;
}

void Task::validate() const {
  if (x_dim == 0 || y_dim == 0) throw std::invalid_argument("task: x_dim and y_dim must be positive");
  if (x_all.size() % x_dim != 0) throw std::invalid_argument("task: x_all length is not a multiple of x_dim");
  if (y_all.size() != size() * y_dim) throw std::invalid_argument("task: x_all and y_all disagree on point count");
  if (n_context > size()) throw std::invalid_argument("task: n_context exceeds point count");
}

json task_to_json(const Task& task) {
  json j{{"x_dim", task.x_dim}, {"y_dim", task.y_dim}, {"x_all", task.x_all},
         {"y_all", task.y_all}, {"n_context", task.n_context}};
  if (task.kernel) {
    const auto& k = *task.kernel;
    j["kernel"] = json{{"kind", kernel_name(k.kind)}, {"s", k.s}, {"l", k.l}, {"p", k.p}, {"noise", k.noise}};
  }
  return j;
}

Task task_from_json(const json& j) {
  Task t;
  t.x_dim = j.value("x_dim", std::size_t{1});
  t.y_dim = j.value("y_dim", std::size_t{1});
  t.x_all = j.at("x_all").get<std::vector<double>>();
  t.y_all = j.at("y_all").get<std::vector<double>>();
  t.n_context = j.at("n_context").get<std::size_t>();
  if (j.contains("kernel")) {
    const auto& k = j.at("kernel");
    KernelConfig cfg;
    cfg.kind = parse_kernel(k.at("kind").get<std::string>());
    cfg.s = k.at("s").get<double>();
    cfg.l = k.at("l").get<double>();
    cfg.p = k.value("p", 0.0);
    cfg.noise = k.value("noise", 0.0);
    t.kernel = cfg;
  }
  t.validate();
  return t;
}

void save_tasks(const std::filesystem::path& path, const TaskBatch& tasks) {
  json arr = json::array();
  for (const auto& t : tasks) arr.push_back(task_to_json(t));
  const json doc{{"format", "nplab-tasks"}, {"version", kTaskFileVersion}, {"tasks", arr}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write task file " + path.string());
  out << doc.dump() << '\n';
  if (!out) throw IoError("failed writing task file " + path.string());
}

TaskBatch load_tasks(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read task file " + path.string());
  try {
    json doc;
    in >> doc;
    if (doc.value("format", "") != "nplab-tasks") throw IoError(path.string() + ": not an nplab task file");
    if (doc.value("version", 0) != kTaskFileVersion) {
      throw IoError(path.string() + ": unsupported task file version " + std::to_string(doc.value("version", 0)));
    }
    TaskBatch tasks;
    for (const auto& j : doc.at("tasks")) tasks.push_back(task_from_json(j));
    return tasks;
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": malformed task file: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace nplab
