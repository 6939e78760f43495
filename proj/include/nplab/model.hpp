#pragma once

// Neural-process architecture: a mean-pooled set encoder producing a
// diagonal Gaussian over the global latent z, and a decoder mapping (x, z)
// to a per-point Gaussian over y.

#include "nplab/autodiff.hpp"
#include "nplab/distributions.hpp"
#include "nplab/rng.hpp"
#include "nplab/task.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace nplab {

struct ModelDims {
  std::size_t x_dim = 1;
  std::size_t y_dim = 1;
  std::size_t r_dim = 128;
  std::size_t z_dim = 128;
  std::size_t hidden = 128;
  std::size_t encoder_hidden_layers = 2;
  std::size_t decoder_hidden_layers = 1;

  bool operator==(const ModelDims&) const = default;
  std::string describe() const;
};

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Tensor forward(const Tensor& x) const { return ad::matmul(x, weight) + bias; }
};

// ReLU between layers, identity after the last one.
struct Mlp {
  std::vector<Linear> layers;

  Tensor forward(Tensor x) const;
};

// Per-point embedder h and the head g emitting (mu, log_sigma).
struct EncoderParams {
  Mlp h;
  Linear g;

  static EncoderParams init(const ModelDims& dims, Rng& rng);
  std::vector<Tensor> parameters() const;
  EncoderParams snapshot() const;
};

class ModelParams {
 public:
  ModelDims dims;
  EncoderParams encoder;
  Mlp decoder;

  static ModelParams init(const ModelDims& dims, std::uint64_t seed);

  // Handles to every trainable leaf, in a fixed order.
  std::vector<Tensor> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::size_t parameter_count() const;

  // Deep copy sharing no state with *this.
  ModelParams snapshot() const;
  // Copy whose leaves need no gradient, for graph-free evaluation.
  ModelParams frozen() const;
  void zero_grad();
};

struct PredictiveGaussian {
  Tensor mean;       // [rows, y_dim]
  Tensor sigma_hat;  // [rows, y_dim], inside (0.1, 1.0)
};

struct Mixture {
  std::size_t particles = 0;
  std::size_t points = 0;
  std::size_t y_dim = 0;
  std::vector<double> means;   // [particles][points * y_dim]
  std::vector<double> sigmas;  // [particles][points * y_dim]
  std::vector<double> pooled_mean;
  std::vector<double> pooled_var;
};

DiagGaussian encode(const EncoderParams& enc, std::size_t z_dim, const PointSet& points);
DiagGaussian encode(const ModelParams& params, const PointSet& points);

// Encodes the first `prefix` rows and all rows of `points` while sharing the
// per-point embeddings. Returns {prefix encoding, full encoding}.
std::pair<DiagGaussian, DiagGaussian> encode_nested(const ModelParams& params, const PointSet& points,
                                                    std::size_t prefix);

// Decodes every input row under every latent row. zs is [B, z_dim], xs is
// [N, x_dim]; rows of the result are particle-major (b * N + i).
PredictiveGaussian decode_particles(const ModelParams& params, const Tensor& xs, const Tensor& zs);
// Single input point ([x_dim]) under a single latent ([z_dim]).
PredictiveGaussian decode(const ModelParams& params, const Tensor& x, const Tensor& z);

// Sum over points of log N(y_i; mean(x_i, z), sigma_hat(x_i, z)^2).
Tensor gen_loglik(const ModelParams& params, const PointSet& targets, const Tensor& z);
// One summed log-likelihood per latent row of zs; returns [B].
Tensor gen_loglik_particles(const ModelParams& params, const PointSet& targets, const Tensor& zs);

// Mixture predictive from B prior draws. With deterministic_latent the prior
// mean is used for every component.
Mixture predict(const ModelParams& params, const PointSet& context, const Tensor& xs, std::size_t particles,
                Rng& rng, bool deterministic_latent = false);

// sigma_hat = floor + 0.9 * sigma. The floor is 0.1; tests swap it to check
// that the self-test catches a broken transform.
double output_sigma_floor();
void set_output_sigma_floor_for_testing(double floor);

}  // namespace nplab
