#include "nplab/model.hpp"

#include <atomic>
#include <cmath>
#include <numbers>
#include <sstream>

namespace nplab {

namespace {

std::atomic<double> g_sigma_floor{0.1};

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

Linear init_linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * out);
  for (auto& v : w) v = rng.uniform(-bound, bound);
  std::vector<double> b(out);
  for (auto& v : b) v = rng.uniform(-bound, bound);
  return {Tensor::matrix(in, out, std::move(w), true), Tensor::vector(std::move(b), true)};
}

Tensor copy_tensor(const Tensor& t, bool trainable) {
  return trainable ? t.deep_copy() : Tensor::from(t.shape(), {t.data().begin(), t.data().end()});
}

Linear copy_linear(const Linear& l, bool trainable = true) {
  return {copy_tensor(l.weight, trainable), copy_tensor(l.bias, trainable)};
}

Mlp copy_mlp(const Mlp& m, bool trainable = true) {
  Mlp out;
  for (const auto& l : m.layers) out.layers.push_back(copy_linear(l, trainable));
  return out;
}

void append(std::vector<Tensor>& out, const Mlp& m) {
  for (const auto& l : m.layers) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
}

Tensor set_input(const PointSet& points) { return ad::concat({points.x, points.y}, 1); }

DiagGaussian head(const Linear& g, const Tensor& pooled, std::size_t z_dim) {
  const Tensor out = ad::reshape(g.forward(ad::reshape(pooled, {1, pooled.numel()})), {2 * z_dim});
  return {ad::slice(out, 0, 0, z_dim), ad::slice(out, 0, z_dim, 2 * z_dim)};
}

void check_points(const ModelDims& dims, const PointSet& points) {
  if (points.size() == 0) throw std::invalid_argument("encode: empty point set");
  if (points.x.cols() != dims.x_dim || points.y.cols() != dims.y_dim || points.y.rows() != points.x.rows()) {
    throw ad::ShapeError("encode: points x " + ad::to_string(points.x.shape()) + ", y " +
                         ad::to_string(points.y.shape()) + " do not fit model dims " + dims.describe());
  }
}

}  // namespace

std::string ModelDims::describe() const {
  std::ostringstream os;
  os << "(x=" << x_dim << ", y=" << y_dim << ", r=" << r_dim << ", z=" << z_dim << ", hidden=" << hidden
     << ", enc_layers=" << encoder_hidden_layers << ", dec_layers=" << decoder_hidden_layers << ")";
  return os.str();
}

Tensor Mlp::forward(Tensor x) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i].forward(x);
    if (i + 1 < layers.size()) x = ad::relu(x);
  }
  return x;
}

EncoderParams EncoderParams::init(const ModelDims& dims, Rng& rng) {
  EncoderParams enc;
  std::size_t in = dims.x_dim + dims.y_dim;
  for (std::size_t i = 0; i < dims.encoder_hidden_layers; ++i) {
    enc.h.layers.push_back(init_linear(in, dims.hidden, rng));
    in = dims.hidden;
  }
  enc.h.layers.push_back(init_linear(in, dims.r_dim, rng));
  enc.g = init_linear(dims.r_dim, 2 * dims.z_dim, rng);
  return enc;
}

std::vector<Tensor> EncoderParams::parameters() const {
  std::vector<Tensor> out;
  append(out, h);
  out.push_back(g.weight);
  out.push_back(g.bias);
  return out;
}

EncoderParams EncoderParams::snapshot() const { return {copy_mlp(h), copy_linear(g)}; }

ModelParams ModelParams::init(const ModelDims& dims, std::uint64_t seed) {
  if (dims.x_dim == 0 || dims.y_dim == 0 || dims.z_dim == 0 || dims.r_dim == 0 || dims.hidden == 0 ||
      dims.decoder_hidden_layers == 0) {
    throw std::invalid_argument("ModelParams::init: every dimension must be positive " + dims.describe());
  }
  Rng root(seed);
  Rng enc_rng = root.split(1);
  Rng dec_rng = root.split(2);
  ModelParams p;
  p.dims = dims;
  p.encoder = EncoderParams::init(dims, enc_rng);
  std::size_t in = dims.x_dim + dims.z_dim;
  for (std::size_t i = 0; i < dims.decoder_hidden_layers; ++i) {
    p.decoder.layers.push_back(init_linear(in, dims.hidden, dec_rng));
    in = dims.hidden;
  }
  p.decoder.layers.push_back(init_linear(in, 2 * dims.y_dim, dec_rng));
  return p;
}

std::vector<Tensor> ModelParams::parameters() const {
  std::vector<Tensor> out = encoder.parameters();
  append(out, decoder);
  return out;
}

std::vector<std::string> ModelParams::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < encoder.h.layers.size(); ++i) {
    names.push_back("encoder.h." + std::to_string(i) + ".weight");
    names.push_back("encoder.h." + std::to_string(i) + ".bias");
  }
  names.emplace_back("encoder.g.weight");
  names.emplace_back("encoder.g.bias");
  for (std::size_t i = 0; i < decoder.layers.size(); ++i) {
    names.push_back("decoder." + std::to_string(i) + ".weight");
    names.push_back("decoder." + std::to_string(i) + ".bias");
  }
  return names;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

ModelParams ModelParams::snapshot() const {
  ModelParams p;
  p.dims = dims;
  p.encoder = encoder.snapshot();
  p.decoder = copy_mlp(decoder);
  return p;
}

ModelParams ModelParams::frozen() const {
  ModelParams p;
  p.dims = dims;
  p.encoder = {copy_mlp(encoder.h, false), copy_linear(encoder.g, false)};
  p.decoder = copy_mlp(decoder, false);
  return p;
}

void ModelParams::zero_grad() {
  for (auto& t : parameters()) t.zero_grad();
}

DiagGaussian encode(const EncoderParams& enc, std::size_t z_dim, const PointSet& points) {
  if (points.size() == 0) throw std::invalid_argument("encode: empty point set");
  const Tensor emb = enc.h.forward(set_input(points));
  return head(enc.g, ad::mean(emb, 0), z_dim);
}

DiagGaussian encode(const ModelParams& params, const PointSet& points) {
  check_points(params.dims, points);
  return encode(params.encoder, params.dims.z_dim, points);
}

std::pair<DiagGaussian, DiagGaussian> encode_nested(const ModelParams& params, const PointSet& points,
                                                    std::size_t prefix) {
  check_points(params.dims, points);
  if (prefix == 0 || prefix > points.size()) {
    throw std::invalid_argument("encode_nested: prefix " + std::to_string(prefix) + " outside [1, " +
                                std::to_string(points.size()) + "]");
  }
  const Tensor emb = params.encoder.h.forward(set_input(points));
  const Tensor pooled_prefix = ad::mean(ad::slice(emb, 0, 0, prefix), 0);
  const Tensor pooled_all = ad::mean(emb, 0);
  return {head(params.encoder.g, pooled_prefix, params.dims.z_dim),
          head(params.encoder.g, pooled_all, params.dims.z_dim)};
}

PredictiveGaussian decode_particles(const ModelParams& params, const Tensor& xs, const Tensor& zs) {
  const auto& d = params.dims;
  if (xs.rank() != 2 || xs.cols() != d.x_dim) throw ad::ShapeError("decode: x", xs.shape(), {0, d.x_dim});
  if (zs.rank() != 2 || zs.cols() != d.z_dim) throw ad::ShapeError("decode: z", zs.shape(), {0, d.z_dim});

  // First layer of the MLP on concat(x, z), split into its x and z blocks so
  // the z projection is computed once per particle.
  const Linear& first = params.decoder.layers.front();
  const Tensor wx = ad::slice(first.weight, 0, 0, d.x_dim);
  const Tensor wz = ad::slice(first.weight, 0, d.x_dim, d.x_dim + d.z_dim);
  const Tensor from_x = ad::matmul(xs, wx);
  const Tensor from_z = ad::matmul(zs, wz) + first.bias;
  Tensor h = ad::pairwise_add(from_x, from_z);
  for (std::size_t i = 1; i < params.decoder.layers.size(); ++i) {
    h = params.decoder.layers[i].forward(ad::relu(h));
  }
  const Tensor mean = ad::slice(h, 1, 0, d.y_dim);
  const Tensor raw_sigma = ad::slice(h, 1, d.y_dim, 2 * d.y_dim);
  const Tensor sigma_hat = ad::add_scalar(ad::scale(ad::sigmoid(raw_sigma), 0.9), output_sigma_floor());
  return {mean, sigma_hat};
}

PredictiveGaussian decode(const ModelParams& params, const Tensor& x, const Tensor& z) {
  if (x.rank() != 1) throw ad::ShapeError("decode: x", x.shape(), {params.dims.x_dim});
  if (z.rank() != 1) throw ad::ShapeError("decode: z", z.shape(), {params.dims.z_dim});
  return decode_particles(params, ad::reshape(x, {1, x.numel()}), ad::reshape(z, {1, z.numel()}));
}

Tensor gen_loglik_particles(const ModelParams& params, const PointSet& targets, const Tensor& zs) {
  if (targets.size() == 0) throw std::invalid_argument("gen_loglik: empty target set");
  if (targets.y.cols() != params.dims.y_dim) {
    throw ad::ShapeError("gen_loglik: y", targets.y.shape(), {targets.size(), params.dims.y_dim});
  }
  const std::size_t b = zs.rows();
  const PredictiveGaussian pred = decode_particles(params, targets.x, zs);
  const Tensor y = ad::tile_rows(targets.y, b);
  const Tensor standardized = (y - pred.mean) / pred.sigma_hat;
  const Tensor ll = ad::add_scalar(ad::neg(ad::log(pred.sigma_hat) + ad::scale(ad::square(standardized), 0.5)),
                                   -kHalfLog2Pi);
  return ad::sum(ad::reshape(ll, {b, targets.size() * params.dims.y_dim}), 1);
}

Tensor gen_loglik(const ModelParams& params, const PointSet& targets, const Tensor& z) {
  if (z.rank() != 1) throw ad::ShapeError("gen_loglik: z", z.shape(), {params.dims.z_dim});
  return ad::reshape(gen_loglik_particles(params, targets, ad::reshape(z, {1, z.numel()})), {});
}

Mixture predict(const ModelParams& params, const PointSet& context, const Tensor& xs, std::size_t particles,
                Rng& rng, bool deterministic_latent) {
  if (particles == 0) throw std::invalid_argument("predict: particle count must be at least 1");
  const DiagGaussian prior = encode(params, context).detached();
  Tensor zs = deterministic_latent
                  ? ad::tile_rows(ad::reshape(prior.mu, {1, prior.dim()}), particles)
                  : sample_rt(prior, rng, particles).z;
  const PredictiveGaussian pred = decode_particles(params, xs, zs.detach());

  Mixture mix;
  mix.particles = particles;
  mix.points = xs.rows();
  mix.y_dim = params.dims.y_dim;
  mix.means.assign(pred.mean.data().begin(), pred.mean.data().end());
  mix.sigmas.assign(pred.sigma_hat.data().begin(), pred.sigma_hat.data().end());
  const std::size_t width = mix.points * mix.y_dim;
  mix.pooled_mean.assign(width, 0.0);
  mix.pooled_var.assign(width, 0.0);
  const double inv_b = 1.0 / static_cast<double>(particles);
  for (std::size_t b = 0; b < particles; ++b)
    for (std::size_t k = 0; k < width; ++k) mix.pooled_mean[k] += mix.means[b * width + k] * inv_b;
  for (std::size_t b = 0; b < particles; ++b) {
    for (std::size_t k = 0; k < width; ++k) {
      const double dev = mix.means[b * width + k] - mix.pooled_mean[k];
      const double s = mix.sigmas[b * width + k];
      mix.pooled_var[k] += (s * s + dev * dev) * inv_b;
    }
  }
  return mix;
}

double output_sigma_floor() { return g_sigma_floor.load(std::memory_order_relaxed); }

void set_output_sigma_floor_for_testing(double floor) { g_sigma_floor.store(floor, std::memory_order_relaxed); }

}  // namespace nplab
