#include "nplab/config.hpp"

#include "nplab/errors.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace nplab {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Drops a trailing '#' comment that sits outside quotes.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

std::string unquote(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, res.ptr};
}

double to_double(const std::string& key, const std::string& raw) {
  double v = 0.0;
  const auto res = std::from_chars(raw.data(), raw.data() + raw.size(), v);
  if (res.ec != std::errc() || res.ptr != raw.data() + raw.size()) {
    throw ConfigError(key + ": expected a number, got '" + raw + "'");
  }
  return v;
}

std::uint64_t to_uint(const std::string& key, const std::string& raw) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(raw.data(), raw.data() + raw.size(), v);
  if (res.ec != std::errc() || res.ptr != raw.data() + raw.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + raw + "'");
  }
  return v;
}

bool to_bool(const std::string& key, const std::string& raw) {
  if (raw == "true") return true;
  if (raw == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + raw + "'");
}

// Accepts "a, b" or "[a, b]"; items may be quoted.
std::vector<std::string> to_list(const std::string& raw) {
  std::string body = trim(raw);
  if (body.size() >= 2 && body.front() == '[' && body.back() == ']') body = body.substr(1, body.size() - 2);
  std::vector<std::string> out;
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = unquote(trim(item));
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string quoted(const std::string& s) { return "\"" + s + "\""; }

std::string list_text(const std::vector<std::string>& items, bool quote) {
  std::string out = "[";
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += quote ? quoted(items[i]) : items[i];
  }
  return out + "]";
}

std::string proposal_name(ProposalMode m) { return m == ProposalMode::kLearned ? "learned" : "prior"; }

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& raw)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"objective.kind", [](RunConfig& c, auto&, auto& v) { c.train.objective.kind = parse_objective(v); }},
      {"objective.particles", [](RunConfig& c, auto& k, auto& v) { c.train.objective.particles = to_uint(k, v); }},
      {"objective.alpha", [](RunConfig& c, auto& k, auto& v) { c.train.objective.alpha = to_double(k, v); }},
      {"objective.proposal",
       [](RunConfig& c, auto& k, auto& v) {
         if (v == "prior") {
           c.train.objective.proposal = ProposalMode::kPrior;
         } else if (v == "learned") {
           c.train.objective.proposal = ProposalMode::kLearned;
         } else {
           throw ConfigError(k + ": expected prior or learned, got '" + v + "'");
         }
       }},
      {"objective.train_proposal",
       [](RunConfig& c, auto& k, auto& v) { c.train.objective.train_proposal = to_bool(k, v); }},
      {"tasks.kernel", [](RunConfig& c, auto&, auto& v) { c.train.source.kernel = parse_kernel(v); }},
      {"tasks.file",
       [](RunConfig& c, auto&, auto& v) {
         if (v.empty()) {
           c.train.source.task_file.reset();
         } else {
           c.train.source.task_file = v;
         }
       }},
      {"tasks.grids",
       [](RunConfig& c, auto&, auto& v) {
         c.train.source.grid_files.clear();
         for (const auto& g : to_list(v)) c.train.source.grid_files.emplace_back(g);
       }},
      {"model.r_dim", [](RunConfig& c, auto& k, auto& v) { c.train.dims.r_dim = to_uint(k, v); }},
      {"model.z_dim", [](RunConfig& c, auto& k, auto& v) { c.train.dims.z_dim = to_uint(k, v); }},
      {"model.hidden", [](RunConfig& c, auto& k, auto& v) { c.train.dims.hidden = to_uint(k, v); }},
      {"model.encoder_hidden_layers",
       [](RunConfig& c, auto& k, auto& v) { c.train.dims.encoder_hidden_layers = to_uint(k, v); }},
      {"model.decoder_hidden_layers",
       [](RunConfig& c, auto& k, auto& v) { c.train.dims.decoder_hidden_layers = to_uint(k, v); }},
      {"train.seed", [](RunConfig& c, auto& k, auto& v) { c.train.seed = to_uint(k, v); }},
      {"train.steps", [](RunConfig& c, auto& k, auto& v) { c.train.steps = to_uint(k, v); }},
      {"train.batch_size", [](RunConfig& c, auto& k, auto& v) { c.train.batch_size = to_uint(k, v); }},
      {"train.lr", [](RunConfig& c, auto& k, auto& v) { c.train.adam.lr = to_double(k, v); }},
      {"train.beta1", [](RunConfig& c, auto& k, auto& v) { c.train.adam.beta1 = to_double(k, v); }},
      {"train.beta2", [](RunConfig& c, auto& k, auto& v) { c.train.adam.beta2 = to_double(k, v); }},
      {"train.eps", [](RunConfig& c, auto& k, auto& v) { c.train.adam.eps = to_double(k, v); }},
      {"train.proposal_lr", [](RunConfig& c, auto& k, auto& v) { c.train.proposal_lr = to_double(k, v); }},
      {"train.eval_every", [](RunConfig& c, auto& k, auto& v) { c.train.eval_every = to_uint(k, v); }},
      {"eval.particles", [](RunConfig& c, auto& k, auto& v) { c.train.eval_particles = to_uint(k, v); }},
      {"eval.tasks", [](RunConfig& c, auto& k, auto& v) { c.train.eval_tasks = to_uint(k, v); }},
      {"eval.context_counts",
       [](RunConfig& c, auto& k, auto& v) {
         c.context_counts.clear();
         for (const auto& item : to_list(v)) c.context_counts.push_back(to_uint(k, item));
       }},
  };
  return table;
}

}  // namespace

bool RunConfig::operator==(const RunConfig& other) const { return to_config_text(*this) == to_config_text(other); }

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap map;
  std::string section;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = trim(strip_comment(line));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section");
      section = trim(body.substr(1, body.size() - 2));
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value, got '" + body + "'");
    }
    const std::string key = trim(body.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    map[section.empty() ? key : section + "." + key] = unquote(trim(body.substr(eq + 1)));
  }
  return map;
}

ConfigMap load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

RunConfig run_config_from(const ConfigMap& map) {
  RunConfig cfg;
  const auto& table = setters();
  for (const auto& [key, raw] : map) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(cfg, key, raw);
  }
  cfg.train.validate();
  return cfg;
}

std::string to_config_text(const RunConfig& c) {
  const TrainConfig& t = c.train;
  std::ostringstream os;
  os << "[objective]\n"
     << "kind = " << quoted(objective_name(t.objective.kind)) << "\n"
     << "particles = " << t.objective.particles << "\n"
     << "alpha = " << format_double(t.objective.alpha) << "\n"
     << "proposal = " << quoted(proposal_name(t.objective.proposal)) << "\n"
     << "train_proposal = " << (t.objective.train_proposal ? "true" : "false") << "\n\n";
  os << "[tasks]\n"
     << "kernel = " << quoted(kernel_name(t.source.kernel)) << "\n"
     << "file = " << quoted(t.source.task_file ? t.source.task_file->string() : "") << "\n";
  std::vector<std::string> grids;
  for (const auto& g : t.source.grid_files) grids.push_back(g.string());
  os << "grids = " << list_text(grids, true) << "\n\n";
  os << "[model]\n"
     << "r_dim = " << t.dims.r_dim << "\n"
     << "z_dim = " << t.dims.z_dim << "\n"
     << "hidden = " << t.dims.hidden << "\n"
     << "encoder_hidden_layers = " << t.dims.encoder_hidden_layers << "\n"
     << "decoder_hidden_layers = " << t.dims.decoder_hidden_layers << "\n\n";
  os << "[train]\n"
     << "seed = " << t.seed << "\n"
     << "steps = " << t.steps << "\n"
     << "batch_size = " << t.batch_size << "\n"
     << "lr = " << format_double(t.adam.lr) << "\n"
     << "beta1 = " << format_double(t.adam.beta1) << "\n"
     << "beta2 = " << format_double(t.adam.beta2) << "\n"
     << "eps = " << format_double(t.adam.eps) << "\n"
     << "proposal_lr = " << format_double(t.proposal_lr) << "\n"
     << "eval_every = " << t.eval_every << "\n\n";
  std::vector<std::string> counts;
  for (auto n : c.context_counts) counts.push_back(std::to_string(n));
  os << "[eval]\n"
     << "particles = " << t.eval_particles << "\n"
     << "tasks = " << t.eval_tasks << "\n"
     << "context_counts = " << list_text(counts, false) << "\n";
  return os.str();
}

std::string config_key_for_flag(const std::string& flag) {
  static const std::map<std::string, std::string> aliases = {
      {"seed", "train.seed"},           {"objective", "objective.kind"},
      {"particles", "objective.particles"}, {"kernel", "tasks.kernel"},
      {"steps", "train.steps"},         {"lr", "train.lr"},
      {"eval-particles", "eval.particles"}, {"context-counts", "eval.context_counts"},
      {"batch-size", "train.batch_size"}, {"alpha", "objective.alpha"},
      {"tasks", "tasks.file"},          {"eval-tasks", "eval.tasks"},
  };
  if (const auto it = aliases.find(flag); it != aliases.end()) return it->second;
  if (setters().count(flag)) return flag;
  throw ConfigError("unknown option --" + flag);
}

}  // namespace nplab
