#include "nplab/checkpoint.hpp"

#include "nplab/errors.hpp"

#include <fstream>

namespace nplab {

using nlohmann::json;

namespace {

json dims_to_json(const ModelDims& d) {
  return json{{"x_dim", d.x_dim},
              {"y_dim", d.y_dim},
              {"r_dim", d.r_dim},
              {"z_dim", d.z_dim},
              {"hidden", d.hidden},
              {"encoder_hidden_layers", d.encoder_hidden_layers},
              {"decoder_hidden_layers", d.decoder_hidden_layers}};
}

ModelDims dims_from_json(const json& j) {
  ModelDims d;
  d.x_dim = j.at("x_dim").get<std::size_t>();
  d.y_dim = j.at("y_dim").get<std::size_t>();
  d.r_dim = j.at("r_dim").get<std::size_t>();
  d.z_dim = j.at("z_dim").get<std::size_t>();
  d.hidden = j.at("hidden").get<std::size_t>();
  d.encoder_hidden_layers = j.at("encoder_hidden_layers").get<std::size_t>();
  d.decoder_hidden_layers = j.at("decoder_hidden_layers").get<std::size_t>();
  return d;
}

}  // namespace

json checkpoint_to_json(const Checkpoint& ckpt) {
  json tensors = json::array();
  const auto params = ckpt.params.parameters();
  const auto names = ckpt.params.parameter_names();
  for (std::size_t i = 0; i < params.size(); ++i) {
    tensors.push_back(json{{"name", names[i]},
                           {"shape", params[i].shape()},
                           {"values", std::vector<double>(params[i].data().begin(), params[i].data().end())}});
  }
  return json{{"format", "nplab-checkpoint"},
              {"version", kCheckpointVersion},
              {"objective", ckpt.objective},
              {"deterministic_latent", ckpt.deterministic_latent},
              {"seed", ckpt.seed},
              {"step", ckpt.step},
              {"dims", dims_to_json(ckpt.params.dims)},
              {"tensors", tensors}};
}

Checkpoint checkpoint_from_json(const json& j) {
  if (j.value("format", "") != "nplab-checkpoint") throw IoError("not an nplab checkpoint");
  if (j.value("version", 0) != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(j.value("version", 0)));
  }
  Checkpoint ckpt;
  ckpt.objective = j.value("objective", "");
  ckpt.deterministic_latent = j.value("deterministic_latent", false);
  ckpt.seed = j.value("seed", std::uint64_t{0});
  ckpt.step = j.value("step", std::size_t{0});
  ckpt.params = ModelParams::init(dims_from_json(j.at("dims")), 0);

  auto params = ckpt.params.parameters();
  const auto names = ckpt.params.parameter_names();
  const auto& tensors = j.at("tensors");
  if (tensors.size() != params.size()) {
    throw IoError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                  std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = tensors[i];
    if (t.at("name").get<std::string>() != names[i] || t.at("shape").get<ad::Shape>() != params[i].shape()) {
      throw IoError("checkpoint tensor " + std::to_string(i) + " (" + t.at("name").get<std::string>() +
                    ") does not match " + names[i] + " " + ad::to_string(params[i].shape()));
    }
    const auto values = t.at("values").get<std::vector<double>>();
    auto dst = params[i].mutable_data();
    if (values.size() != dst.size()) throw IoError("checkpoint tensor " + names[i] + " has wrong length");
    std::copy(values.begin(), values.end(), dst.begin());
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(ckpt).dump() << '\n';
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  try {
    return checkpoint_from_json(j);
  } catch (const json::exception& e) {
    throw IoError("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace nplab
