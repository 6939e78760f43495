#include "nplab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace nplab::ad {

namespace {

double finite_value(const Tensor& t, const char* where) {
  const double v = t.item();
  if (!std::isfinite(v)) throw DomainError(std::string("grad_check: non-finite f at ") + where);
  return v;
}

void record(GradReport& report, std::size_t index, double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  const double rel = std::abs(analytic - numeric) / denom;
  if (rel > report.max_rel_error || report.checked == 0) {
    report.max_rel_error = rel;
    report.worst_index = index;
    report.analytic = analytic;
    report.numeric = numeric;
  }
  ++report.checked;
}

}  // namespace

GradReport grad_check(const std::function<Tensor(const Tensor&)>& f, std::span<const double> x,
                      double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  Tensor leaf = Tensor::vector(std::vector<double>(x.begin(), x.end()), true);
  std::vector<Tensor> params{leaf};
  return grad_check([&] { return f(leaf); }, params, eps);
}

GradReport grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  for (auto& p : params) p.zero_grad();
  Tensor loss = f();
  finite_value(loss, "the base point");
  loss.backward();

  GradReport report;
  std::size_t flat = 0;
  for (auto& p : params) {
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i, ++flat) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = finite_value(f(), "x + eps");
      values[i] = saved - eps;
      const double down = finite_value(f(), "x - eps");
      values[i] = saved;
      const double a = analytic.empty() ? 0.0 : analytic[i];
      record(report, flat, a, (up - down) / (2.0 * eps));
    }
  }
  return report;
}

}  // namespace nplab::ad
