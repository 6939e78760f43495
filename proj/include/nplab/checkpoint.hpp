#pragma once

#include "nplab/model.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace nplab {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  std::string objective;             // objective the weights were trained with
  bool deterministic_latent = false;  // CNP: use the prior mean instead of draws
  std::uint64_t seed = 0;
  std::size_t step = 0;
};

// Versioned JSON record of dims and flat weight arrays. Doubles are written
// with round-trip precision, so equal weights give equal bytes.
nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nplab
