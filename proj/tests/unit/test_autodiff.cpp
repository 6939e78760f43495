#include "nplab/autodiff.hpp"
#include "nplab/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace nplab;
using ad::Tensor;

namespace {

std::vector<double> grad_vec(const Tensor& t) { return {t.grad().begin(), t.grad().end()}; }

std::vector<double> uniform(Rng& rng, std::size_t n, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("logsumexp of two zeros is ln 2") {
  CHECK(ad::logsumexp(Tensor::vector({0.0, 0.0})).item() == doctest::Approx(0.6931471805599453).epsilon(1e-15));
}

TEST_CASE("tanh at zero has value 0 and slope 1") {
  Tensor x = Tensor::vector({0.0}, true);
  Tensor y = ad::sum(ad::tanh(x));
  CHECK(y.item() == 0.0);
  y.backward();
  CHECK(x.grad()[0] == 1.0);
}

TEST_CASE("matmul matches a triple loop exactly") {
  Rng rng(1);
  const auto a = uniform(rng, 6);
  const auto b = uniform(rng, 6);
  const Tensor c = ad::matmul(Tensor::matrix(2, 3, a), Tensor::matrix(3, 2, b));
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 3; ++k) acc += a[i * 3 + k] * b[k * 2 + j];
      CHECK(c.at(i, j) == doctest::Approx(acc).epsilon(1e-15));
    }
  }
}

TEST_CASE("backward of sum of squares") {
  Tensor x = Tensor::vector({1, 2, 3}, true);
  ad::sum(x * x).backward();
  CHECK(grad_vec(x) == std::vector<double>{2, 4, 6});
}

TEST_CASE("backward of logsumexp of equal logits is the uniform softmax") {
  Tensor x = Tensor::vector({0, 0}, true);
  ad::logsumexp(x).backward();
  CHECK(grad_vec(x) == std::vector<double>{0.5, 0.5});
}

TEST_CASE("backward accumulates until grads are zeroed") {
  Tensor x = Tensor::vector({1, 2}, true);
  ad::sum(x * x).backward();
  ad::sum(x * x).backward();
  CHECK(grad_vec(x) == std::vector<double>{4, 8});
  x.zero_grad();
  ad::sum(x * x).backward();
  CHECK(grad_vec(x) == std::vector<double>{2, 4});
}

TEST_CASE("three-layer MLP gradients match finite differences") {
  Rng rng(2);
  std::vector<Tensor> params;
  const std::size_t widths[] = {3, 5, 4, 1};
  for (int l = 0; l < 3; ++l) {
    params.push_back(Tensor::matrix(widths[l], widths[l + 1], uniform(rng, widths[l] * widths[l + 1], -1, 1), true));
    params.push_back(Tensor::vector(uniform(rng, widths[l + 1], -1, 1), true));
  }
  const Tensor x = Tensor::matrix(4, 3, uniform(rng, 12));
  auto f = [&] {
    Tensor h = x;
    for (int l = 0; l < 3; ++l) {
      h = ad::matmul(h, params[2 * l]) + params[2 * l + 1];
      if (l < 2) h = ad::tanh(h);
    }
    return ad::sum(h);
  };
  const auto report = ad::grad_check(f, params, 1e-5);
  CHECK(report.checked == 3 * 5 + 5 + 5 * 4 + 4 + 4 + 1);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("detach keeps values and drops the graph") {
  Tensor x = Tensor::vector({1, 2}, true);
  Tensor d = ad::detach(x);
  CHECK(std::vector<double>(d.data().begin(), d.data().end()) == std::vector<double>{1, 2});
  CHECK_FALSE(d.requires_grad());

  Tensor w = Tensor::vector({3, -4}, true);
  Tensor v = Tensor::vector({0.5, 2}, true);
  ad::sum(ad::detach(w) * v).backward();
  CHECK(grad_vec(v) == std::vector<double>{3, -4});
  CHECK_FALSE(w.has_grad());
}

TEST_CASE("detached branch has no influence on gradients") {
  Tensor x = Tensor::vector({0.3, -1.1}, true);
  ad::sum(ad::exp(x) + ad::detach(ad::square(x))).backward();
  const auto with_branch = grad_vec(x);
  x.zero_grad();
  ad::sum(ad::exp(x)).backward();
  CHECK(grad_vec(x) == with_branch);
}

TEST_CASE("repeated backward after zeroing is bitwise identical") {
  Rng rng(3);
  Tensor w = Tensor::matrix(3, 3, uniform(rng, 9), true);
  const Tensor x = Tensor::matrix(2, 3, uniform(rng, 6));
  auto loss = [&] { return ad::logsumexp(ad::softplus(ad::matmul(x, w))); };
  loss().backward();
  const auto first = grad_vec(w);
  w.zero_grad();
  loss().backward();
  CHECK(grad_vec(w) == first);
}

TEST_CASE("grad_check on simple scalar functions") {
  const std::vector<double> three{3.0};
  const auto quad = ad::grad_check([](const Tensor& x) { return ad::sum(x * x); }, three, 1e-5);
  CHECK(quad.max_rel_error < 1e-8);

  // d/dmu log N(1; mu, 1) at mu = 0 is 1.
  const std::vector<double> mu{0.0};
  const auto gauss = ad::grad_check(
      [](const Tensor& m) {
        const Tensor r = Tensor::vector({1.0}) - m;
        return ad::add_scalar(ad::scale(ad::sum(r * r), -0.5), -0.5 * std::log(2.0 * std::numbers::pi));
      },
      mu, 1e-5);
  CHECK(gauss.analytic == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(gauss.numeric - 1.0) < 1e-6);
}

TEST_CASE("grad_check reports non-finite f") {
  const std::vector<double> x{1.0};
  CHECK_THROWS_AS(ad::grad_check([](const Tensor& t) { return ad::sum(ad::exp(ad::scale(t, 1000.0))); }, x, 1e-5),
                  ad::DomainError);
}

TEST_CASE("every primitive passes random finite-difference checks") {
  Rng rng(4);
  using Fn = std::function<Tensor(const Tensor&)>;
  const Tensor other_m = Tensor::matrix(2, 3, uniform(rng, 6));
  const Tensor other_r = Tensor::vector(uniform(rng, 3));
  const Tensor positive = Tensor::matrix(2, 3, uniform(rng, 6, 0.5, 2.0));
  const Tensor right = Tensor::matrix(3, 2, uniform(rng, 6));
  const std::vector<std::pair<const char*, Fn>> ops = {
      {"add", [&](const Tensor& x) { return ad::sum(ad::square(x + other_m)); }},
      {"add_row", [&](const Tensor& x) { return ad::sum(ad::square(x + other_r)); }},
      {"sub", [&](const Tensor& x) { return ad::sum(ad::square(other_m - x)); }},
      {"mul", [&](const Tensor& x) { return ad::sum(x * other_m * x); }},
      {"div", [&](const Tensor& x) { return ad::sum(x / positive); }},
      {"div_den", [&](const Tensor& x) { return ad::sum(other_m / (ad::exp(x))); }},
      {"matmul", [&](const Tensor& x) { return ad::sum(ad::square(ad::matmul(x, right))); }},
      {"tanh", [&](const Tensor& x) { return ad::sum(ad::tanh(x) * other_m); }},
      {"relu", [&](const Tensor& x) { return ad::sum(ad::relu(x) * other_m); }},
      {"sigmoid", [&](const Tensor& x) { return ad::sum(ad::sigmoid(x) * other_m); }},
      {"softplus", [&](const Tensor& x) { return ad::sum(ad::softplus(x) * other_m); }},
      {"exp", [&](const Tensor& x) { return ad::sum(ad::exp(x) * other_m); }},
      {"log", [&](const Tensor& x) { return ad::sum(ad::log(ad::add_scalar(ad::square(x), 0.5)) * other_m); }},
      {"sum_axis0", [&](const Tensor& x) { return ad::sum(ad::square(ad::sum(x, 0))); }},
      {"sum_axis1", [&](const Tensor& x) { return ad::sum(ad::square(ad::sum(x, 1))); }},
      {"mean_axis0", [&](const Tensor& x) { return ad::sum(ad::square(ad::mean(x, 0))); }},
      {"logsumexp_axis1", [&](const Tensor& x) { return ad::sum(ad::square(ad::logsumexp(x, 1))); }},
      {"logsumexp_all", [&](const Tensor& x) { return ad::logsumexp(x * other_m); }},
      {"concat", [&](const Tensor& x) { return ad::sum(ad::square(ad::concat({x, other_m, x}, 1))); }},
      {"slice", [&](const Tensor& x) { return ad::sum(ad::square(ad::slice(x, 1, 1, 3))); }},
      {"pairwise_add", [&](const Tensor& x) { return ad::sum(ad::square(ad::pairwise_add(x, other_m))); }},
  };
  for (const auto& [name, f] : ops) {
    double worst = 0.0;
    for (int draw = 0; draw < 100; ++draw) {
      std::vector<Tensor> params{Tensor::matrix(2, 3, uniform(rng, 6), true)};
      const auto r = ad::grad_check([&] { return f(params[0]); }, params, 1e-5);
      worst = std::max(worst, r.max_rel_error);
    }
    INFO(name);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("logsumexp shift invariance") {
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const auto v = uniform(rng, 7, -50, 50);
    const double c = rng.uniform(-500, 500);
    std::vector<double> shifted = v;
    for (auto& x : shifted) x += c;
    CHECK(std::abs(ad::logsumexp(Tensor::vector(shifted)).item() - ad::logsumexp(Tensor::vector(v)).item() - c) <
          1e-12 * std::max(1.0, std::abs(c)));
  }
}

TEST_CASE("pairwise_add equals tile_rows plus repeat_rows") {
  Rng rng(6);
  const Tensor a = Tensor::matrix(3, 2, uniform(rng, 6));
  const Tensor b = Tensor::matrix(4, 2, uniform(rng, 8));
  const Tensor p = ad::pairwise_add(a, b);
  const Tensor q = ad::tile_rows(a, 4) + ad::repeat_rows(b, 3);
  CHECK(p.shape() == q.shape());
  CHECK(std::equal(p.data().begin(), p.data().end(), q.data().begin()));
}

TEST_CASE("shape and domain errors") {
  const Tensor a = Tensor::matrix(2, 3, std::vector<double>(6, 1.0));
  const Tensor b = Tensor::matrix(2, 2, std::vector<double>(4, 1.0));
  try {
    (void)ad::add(a, b);
    FAIL("expected a shape error");
  } catch (const ad::ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[2, 2]") != std::string::npos);
  }
  CHECK_THROWS_AS((void)ad::matmul(a, a), ad::ShapeError);
  CHECK_THROWS_AS((void)ad::log(Tensor::vector({1.0, -1.0})), ad::DomainError);
  CHECK_THROWS_AS((void)ad::log(Tensor::vector({0.0})), ad::DomainError);
  CHECK_THROWS_AS((void)ad::div(Tensor::vector({1.0}), Tensor::vector({0.0})), ad::DomainError);
  Tensor x = Tensor::vector({1.0, 2.0}, true);
  CHECK_THROWS((x * x).backward());
  CHECK_THROWS_AS((void)Tensor::from({2, 2}, {1.0, 2.0}), ad::ShapeError);
}
