#include "nplab/checkpoint.hpp"
#include "nplab/model.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace nplab;

namespace {

std::vector<double> uniform(Rng& rng, std::size_t n, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

PointSet points(const std::vector<double>& x, const std::vector<double>& y) {
  return {Tensor::matrix(x.size(), 1, x), Tensor::matrix(y.size(), 1, y)};
}

// Plain-loop forward passes, independent of the tensor engine.
std::vector<double> linear_loop(const Linear& l, const std::vector<double>& in) {
  const std::size_t rows = l.weight.rows();
  const std::size_t cols = l.weight.cols();
  std::vector<double> out(cols);
  for (std::size_t j = 0; j < cols; ++j) {
    double acc = l.bias.at(j);
    for (std::size_t i = 0; i < rows; ++i) acc += in[i] * l.weight.at(i, j);
    out[j] = acc;
  }
  return out;
}

std::vector<double> mlp_loop(const Mlp& m, std::vector<double> v) {
  for (std::size_t k = 0; k < m.layers.size(); ++k) {
    v = linear_loop(m.layers[k], v);
    if (k + 1 < m.layers.size())
      for (auto& x : v) x = std::max(x, 0.0);
  }
  return v;
}

std::vector<double> encode_loop(const ModelParams& p, const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> pooled(p.dims.r_dim, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto r = mlp_loop(p.encoder.h, {x[i], y[i]});
    for (std::size_t k = 0; k < r.size(); ++k) pooled[k] += r[k];
  }
  for (auto& v : pooled) v /= static_cast<double>(x.size());
  return linear_loop(p.encoder.g, pooled);
}

ModelDims small_dims() {
  ModelDims d;
  d.r_dim = 6;
  d.z_dim = 3;
  d.hidden = 5;
  return d;
}

}  // namespace

TEST_CASE("encode is idempotent under duplication") {
  const ModelParams p = ModelParams::init(ModelDims{}, 1);
  const DiagGaussian one = encode(p, points({0.3}, {-0.7}));
  for (std::size_t k : {2u, 5u, 17u}) {
    const DiagGaussian many = encode(p, points(std::vector<double>(k, 0.3), std::vector<double>(k, -0.7)));
    for (std::size_t i = 0; i < one.dim(); ++i) {
      CHECK(many.mu.at(i) == doctest::Approx(one.mu.at(i)).epsilon(1e-12));
      CHECK(many.log_sigma.at(i) == doctest::Approx(one.log_sigma.at(i)).epsilon(1e-12));
    }
  }
}

TEST_CASE("encode is permutation invariant") {
  const ModelParams p = ModelParams::init(ModelDims{}, 2);
  Rng rng(3);
  auto x = uniform(rng, 10);
  auto y = uniform(rng, 10);
  const DiagGaussian base = encode(p, points(x, y));
  std::vector<std::size_t> order{9, 3, 0, 7, 1, 8, 2, 6, 5, 4};
  std::vector<double> px, py;
  for (auto i : order) {
    px.push_back(x[i]);
    py.push_back(y[i]);
  }
  const DiagGaussian perm = encode(p, points(px, py));
  for (std::size_t i = 0; i < base.dim(); ++i) {
    CHECK(std::abs(base.mu.at(i) - perm.mu.at(i)) <= 1e-9 * std::abs(base.mu.at(i)));
    CHECK(std::abs(base.log_sigma.at(i) - perm.log_sigma.at(i)) <= 1e-9 * std::abs(base.log_sigma.at(i)));
  }
}

TEST_CASE("encode matches a loop-based forward pass") {
  const ModelParams p = ModelParams::init(ModelDims{}, 4);
  const std::vector<double> x{-1.2, 0.4, 1.9};
  const std::vector<double> y{0.3, -0.8, 0.05};
  const DiagGaussian d = encode(p, points(x, y));
  const auto oracle = encode_loop(p, x, y);
  const std::size_t z = p.dims.z_dim;
  for (std::size_t i = 0; i < z; ++i) {
    CHECK(std::abs(d.mu.at(i) - oracle[i]) < 1e-12);
    CHECK(std::abs(d.log_sigma.at(i) - oracle[z + i]) < 1e-12);
  }
}

TEST_CASE("encode_nested agrees with separate encodings") {
  const ModelParams p = ModelParams::init(small_dims(), 5);
  const PointSet all = points({0.1, 0.2, 0.3, 0.4}, {1.0, 0.5, -0.5, 0.0});
  const auto [prefix, full] = encode_nested(p, all, 2);
  const DiagGaussian a = encode(p, points({0.1, 0.2}, {1.0, 0.5}));
  const DiagGaussian b = encode(p, all);
  for (std::size_t i = 0; i < a.dim(); ++i) {
    CHECK(prefix.mu.at(i) == doctest::Approx(a.mu.at(i)).epsilon(1e-14));
    CHECK(full.log_sigma.at(i) == doctest::Approx(b.log_sigma.at(i)).epsilon(1e-14));
  }
}

TEST_CASE("encode output shape does not depend on the context size") {
  const ModelParams p = ModelParams::init(small_dims(), 6);
  Rng rng(7);
  for (std::size_t n = 1; n < 8; ++n) {
    const DiagGaussian d = encode(p, points(uniform(rng, n), uniform(rng, n)));
    CHECK(d.dim() == p.dims.z_dim);
  }
}

TEST_CASE("encode rejects empty and mismatched inputs") {
  const ModelParams p = ModelParams::init(small_dims(), 8);
  CHECK_THROWS(encode(p, points({}, {})));
  CHECK_THROWS(encode(p, {Tensor::matrix(1, 2, {0.0, 1.0}), Tensor::matrix(1, 1, {0.0})}));
}

TEST_CASE("sigma_hat transform limits") {
  ModelParams p = ModelParams::init(small_dims(), 9);
  Linear& out = p.decoder.layers.back();
  std::fill(out.weight.mutable_data().begin(), out.weight.mutable_data().end(), 0.0);
  const Tensor x = Tensor::vector({0.5});
  const Tensor z = Tensor::vector({0.1, 0.2, 0.3});
  out.bias.mutable_data()[1] = -30.0;
  CHECK(std::abs(decode(p, x, z).sigma_hat.item() - 0.1) < 1e-6);
  out.bias.mutable_data()[1] = 30.0;
  CHECK(std::abs(decode(p, x, z).sigma_hat.item() - 1.0) < 1e-6);
  Rng rng(10);
  for (int i = 0; i < 200; ++i) {
    out.bias.mutable_data()[1] = rng.uniform(-20, 20);
    const double s = decode(p, x, z).sigma_hat.item();
    CHECK(s > 0.1);
    CHECK(s < 1.0);
  }
}

TEST_CASE("decode matches a loop-based forward pass") {
  const ModelParams p = ModelParams::init(ModelDims{}, 11);
  Rng rng(12);
  const auto zv = uniform(rng, p.dims.z_dim);
  const double xv = 0.37;
  std::vector<double> in{xv};
  in.insert(in.end(), zv.begin(), zv.end());
  const auto raw = mlp_loop(p.decoder, in);
  const PredictiveGaussian pred = decode(p, Tensor::vector({xv}), Tensor::vector(zv));
  CHECK(std::abs(pred.mean.item() - raw[0]) < 1e-12);
  CHECK(std::abs(pred.sigma_hat.item() - (0.1 + 0.9 / (1.0 + std::exp(-raw[1])))) < 1e-12);
}

TEST_CASE("decode: detached z gives equal outputs and no gradient to z") {
  const ModelParams p = ModelParams::init(small_dims(), 13);
  Tensor z = Tensor::vector({0.2, -0.4, 0.9}, true);
  const Tensor x = Tensor::vector({0.1});
  const PredictiveGaussian a = decode(p, x, z);
  const PredictiveGaussian b = decode(p, x, z.detach());
  CHECK(a.mean.item() == b.mean.item());
  CHECK(a.sigma_hat.item() == b.sigma_hat.item());
  ad::sum(b.mean).backward();
  CHECK_FALSE(z.has_grad());
  ad::sum(a.mean).backward();
  CHECK(z.has_grad());
}

TEST_CASE("gen_loglik at the predicted mean with sigma_hat 0.55") {
  ModelParams p = ModelParams::init(small_dims(), 14);
  Linear& out = p.decoder.layers.back();
  std::fill(out.weight.mutable_data().begin(), out.weight.mutable_data().end(), 0.0);
  out.bias.mutable_data()[0] = 0.25;
  out.bias.mutable_data()[1] = 0.0;
  const Tensor z = Tensor::vector({1, 2, 3});
  const double ll = gen_loglik(p, points({0.7}, {0.25}), z).item();
  CHECK(ll == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi) - std::log(0.55)).epsilon(1e-14));
}

TEST_CASE("gen_loglik is additive over repeated targets") {
  const ModelParams p = ModelParams::init(ModelDims{}, 15);
  Rng rng(16);
  const auto x = uniform(rng, 5);
  const auto y = uniform(rng, 5);
  auto x2 = x, y2 = y;
  x2.insert(x2.end(), x.begin(), x.end());
  y2.insert(y2.end(), y.begin(), y.end());
  const Tensor z = Tensor::vector(uniform(rng, p.dims.z_dim));
  CHECK(gen_loglik(p, points(x2, y2), z).item() == 2.0 * gen_loglik(p, points(x, y), z).item());
}

TEST_CASE("gen_loglik matches a per-point scalar oracle") {
  const ModelParams p = ModelParams::init(ModelDims{}, 17);
  Rng rng(18);
  const auto x = uniform(rng, 8);
  const auto y = uniform(rng, 8);
  const auto zv = uniform(rng, p.dims.z_dim);
  double oracle = 0.0;
  for (std::size_t i = 0; i < 8; ++i) {
    std::vector<double> in{x[i]};
    in.insert(in.end(), zv.begin(), zv.end());
    const auto raw = mlp_loop(p.decoder, in);
    const double s = 0.1 + 0.9 / (1.0 + std::exp(-raw[1]));
    oracle += -0.5 * std::log(2 * std::numbers::pi) - std::log(s) - 0.5 * std::pow((y[i] - raw[0]) / s, 2);
  }
  CHECK(std::abs(gen_loglik(p, points(x, y), Tensor::vector(zv)).item() - oracle) < 1e-10);
}

TEST_CASE("gen_loglik gradients match finite differences on a 3-point task") {
  const ModelParams p = ModelParams::init(small_dims(), 19);
  Rng rng(20);
  const PointSet pts = points(uniform(rng, 3), uniform(rng, 3));
  const Tensor zs = Tensor::vector(uniform(rng, p.dims.z_dim));
  auto leaves = p.parameters();
  const auto r = ad::grad_check(
      [&] {
        const DiagGaussian q = encode(p, pts);
        return gen_loglik(p, pts, q.mu + zs * ad::exp(q.log_sigma));
      },
      leaves, 1e-5);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("predict with one particle pools to the component") {
  const ModelParams p = ModelParams::init(small_dims(), 21);
  Rng rng(22);
  const Tensor xs = Tensor::matrix(4, 1, uniform(rng, 4));
  const Mixture m = predict(p, points({0.1, 0.2}, {0.3, 0.4}), xs, 1, rng);
  CHECK(m.pooled_mean == m.means);
}

TEST_CASE("predict under a collapsed prior gives identical components") {
  ModelParams p = ModelParams::init(small_dims(), 23);
  const std::size_t z = p.dims.z_dim;
  auto w = p.encoder.g.weight.mutable_data();
  auto b = p.encoder.g.bias.mutable_data();
  for (std::size_t r = 0; r < p.dims.r_dim; ++r)
    for (std::size_t c = z; c < 2 * z; ++c) w[r * 2 * z + c] = 0.0;
  for (std::size_t c = z; c < 2 * z; ++c) b[c] = -30.0;
  Rng rng(24);
  const Tensor xs = Tensor::matrix(3, 1, uniform(rng, 3));
  const Mixture m = predict(p, points({0.5}, {0.5}), xs, 6, rng);
  for (std::size_t k = 1; k < 6; ++k)
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(m.means[k * 3 + i] - m.means[i]) < 1e-8);
}

TEST_CASE("predict mixture moments match the brute-force formula") {
  const ModelParams p = ModelParams::init(small_dims(), 25);
  Rng rng(26);
  const Tensor xs = Tensor::matrix(5, 1, uniform(rng, 5));
  const Mixture m = predict(p, points({0.1, -0.2}, {0.3, 1.0}), xs, 4, rng);
  for (std::size_t i = 0; i < 5; ++i) {
    double mean = 0.0;
    for (std::size_t b = 0; b < 4; ++b) mean += m.means[b * 5 + i] / 4.0;
    double var_of_means = 0.0, mean_of_vars = 0.0;
    for (std::size_t b = 0; b < 4; ++b) {
      var_of_means += std::pow(m.means[b * 5 + i] - mean, 2) / 4.0;
      mean_of_vars += std::pow(m.sigmas[b * 5 + i], 2) / 4.0;
    }
    CHECK(std::abs(m.pooled_mean[i] - mean) < 1e-12);
    CHECK(std::abs(m.pooled_var[i] - (mean_of_vars + var_of_means)) < 1e-12);
  }
}

TEST_CASE("snapshot shares no state with the original") {
  ModelParams p = ModelParams::init(small_dims(), 27);
  const ModelParams s = p.snapshot();
  const double before = s.decoder.layers[0].weight.at(0);
  p.decoder.layers[0].weight.mutable_data()[0] += 1.0;
  CHECK(s.decoder.layers[0].weight.at(0) == before);
  CHECK(s.parameter_count() == p.parameter_count());
}

TEST_CASE("initialization is seeded and bounded by 1/sqrt(fan_in)") {
  const ModelParams a = ModelParams::init(ModelDims{}, 28);
  const ModelParams b = ModelParams::init(ModelDims{}, 28);
  CHECK(checkpoint_to_json({a, "SI-NP", false, 28, 0}).dump() == checkpoint_to_json({b, "SI-NP", false, 28, 0}).dump());
  for (const auto& l : a.decoder.layers) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.rows()));
    for (double v : l.weight.data()) CHECK(std::abs(v) <= bound);
  }
}

TEST_CASE("checkpoint JSON round trip") {
  const ModelParams p = ModelParams::init(small_dims(), 29);
  const Checkpoint ck{p, "CNP", true, 29, 100};
  const auto text = checkpoint_to_json(ck).dump();
  const Checkpoint back = checkpoint_from_json(nlohmann::json::parse(text));
  CHECK(back.params.dims == p.dims);
  CHECK(back.deterministic_latent);
  CHECK(back.step == 100);
  CHECK(checkpoint_to_json(back).dump() == text);
  auto broken = nlohmann::json::parse(text);
  broken["tensors"][0]["values"].erase(0);
  CHECK_THROWS(checkpoint_from_json(broken));
}
