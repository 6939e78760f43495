#include "nplab/errors.hpp"
#include "nplab/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

namespace nplab {

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string ignored;
      std::getline(in, ignored);
      if (!tok.empty()) break;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok += c;
  }
  return tok;
}

std::size_t parse_size(const std::string& tok, const std::string& what, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    const long v = std::stol(tok, &used);
    if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw IoError(path.string() + ": bad PGM " + what + " '" + tok + "'");
  }
}

Grid load_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read grid file " + path.string());
  const std::string magic = pgm_token(in);
  if (magic != "P2" && magic != "P5") throw IoError(path.string() + ": not a P2/P5 PGM file");
  Grid g;
  g.width = parse_size(pgm_token(in), "width", path);
  g.height = parse_size(pgm_token(in), "height", path);
  const std::size_t maxval = parse_size(pgm_token(in), "maxval", path);
  if (maxval > 65535) throw IoError(path.string() + ": PGM maxval above 65535");
  const std::size_t n = g.width * g.height;
  g.values.resize(n);
  if (magic == "P2") {
    for (std::size_t i = 0; i < n; ++i) {
      const std::string tok = pgm_token(in);
      if (tok.empty()) throw IoError(path.string() + ": PGM ends after " + std::to_string(i) + " of " + std::to_string(n) + " pixels");
      g.values[i] = static_cast<double>(std::stoul(tok));
    }
  } else {
    const std::size_t bytes = maxval < 256 ? 1 : 2;
    std::vector<unsigned char> raw(n * bytes);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw IoError(path.string() + ": truncated P5 pixel data");
    for (std::size_t i = 0; i < n; ++i) {
      g.values[i] = bytes == 1 ? raw[i] : static_cast<double>(raw[2 * i] << 8 | raw[2 * i + 1]);
    }
  }
  for (auto& v : g.values) {
    if (v > static_cast<double>(maxval)) throw IoError(path.string() + ": pixel value above maxval");
    v /= static_cast<double>(maxval);
  }
  return g;
}

Grid load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read grid file " + path.string());
  Grid g;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::stringstream row(line);
    std::string cell;
    std::size_t cols = 0;
    while (std::getline(row, cell, ',')) {
      double v = 0.0;
      try {
        std::size_t used = 0;
        v = std::stod(cell, &used);
        if (cell.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw IoError(path.string() + ": bad CSV cell '" + cell + "' on row " + std::to_string(g.height + 1));
      }
      if (v < 0.0 || v > 1.0) throw IoError(path.string() + ": CSV values must lie in [0, 1]");
      g.values.push_back(v);
      ++cols;
    }
    if (g.height == 0) g.width = cols;
    if (cols != g.width) throw IoError(path.string() + ": ragged CSV row " + std::to_string(g.height + 1));
    ++g.height;
  }
  if (g.width == 0 || g.height == 0) throw IoError(path.string() + ": empty grid");
  return g;
}

}  // namespace

Grid load_grid(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".csv") return load_csv(path);
  return load_pgm(path);
}

Task grid_task(const Grid& grid, std::size_t n_context, Rng& rng) {
  const std::size_t n = grid.width * grid.height;
  if (n == 0 || grid.values.size() != n) throw std::invalid_argument("grid_task: malformed grid");
  if (n_context < 1 || n_context >= n) {
    throw std::invalid_argument("grid_task: n_context " + std::to_string(n_context) + " outside [1, " +
                                std::to_string(n - 1) + "]");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  std::vector<bool> chosen(n, false);
  std::vector<std::size_t> pixels(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_context));
  for (auto p : pixels) chosen[p] = true;
  for (std::size_t p = 0; p < n; ++p) {
    if (!chosen[p]) pixels.push_back(p);
  }

  const double sx = grid.width > 1 ? 1.0 / static_cast<double>(grid.width - 1) : 0.0;
  const double sy = grid.height > 1 ? 1.0 / static_cast<double>(grid.height - 1) : 0.0;
  Task task;
  task.x_dim = 2;
  task.y_dim = 1;
  task.n_context = n_context;
  for (auto p : pixels) {
    task.x_all.push_back(static_cast<double>(p % grid.width) * sx);
    task.x_all.push_back(static_cast<double>(p / grid.width) * sy);
    task.y_all.push_back(grid.values[p]);
  }
  return task;
}

Task grid_task_from_image(const std::filesystem::path& path, std::size_t n_context, Rng& rng) {
  return grid_task(load_grid(path), n_context, rng);
}

}  // namespace nplab
