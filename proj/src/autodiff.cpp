#include "nplab/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace nplab::ad {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
};

}  // namespace detail

using detail::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

ShapeError::ShapeError(const std::string& op, const Shape& a, const Shape& b)
    : std::invalid_argument(op + ": incompatible shapes " + to_string(a) + " and " + to_string(b)) {}

struct OpAccess {
  static const std::shared_ptr<Node>& node(const Tensor& t) {
    if (!t.node_) throw std::logic_error("use of an undefined tensor");
    return t.node_;
  }
  static Tensor wrap(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }
};

namespace {

std::span<double> grad_of(Node& n) {
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

Tensor make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != numel(shape)) {
    throw ShapeError("tensor of shape " + to_string(shape) + " given " +
                     std::to_string(values.size()) + " values");
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return OpAccess::wrap(std::move(n));
}

// Builds an interior node. If no input needs a gradient the result is a plain
// constant and the closure is dropped.
Tensor make_op(Shape shape, std::vector<double> values, std::vector<std::shared_ptr<Node>> parents,
               std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  const bool rg = std::any_of(parents.begin(), parents.end(),
                              [](const auto& p) { return p->requires_grad; });
  if (rg) {
    n->requires_grad = true;
    n->leaf = false;
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return OpAccess::wrap(std::move(n));
}

enum class Broadcast { kSame, kRowB, kRowA };

bool is_row_of(const Shape& s, std::size_t cols) {
  return (s.size() == 1 && s[0] == cols) || (s.size() == 2 && s[0] == 1 && s[1] == cols);
}

Broadcast broadcast_kind(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::kSame;
  if (a.size() == 2 && is_row_of(b, a[1])) return Broadcast::kRowB;
  if (b.size() == 2 && is_row_of(a, b[1])) return Broadcast::kRowA;
  throw ShapeError(op, a, b);
}

template <class F, class GA, class GB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, GA da, GB db) {
  const auto& na = OpAccess::node(a);
  const auto& nb = OpAccess::node(b);
  const Broadcast kind = broadcast_kind(op, na->shape, nb->shape);
  const Shape out_shape = kind == Broadcast::kRowA ? nb->shape : na->shape;
  const std::size_t n = numel(out_shape);
  const std::size_t cols = out_shape.empty() ? 1 : out_shape.back();
  auto ia = [kind, cols](std::size_t k) { return kind == Broadcast::kRowA ? k % cols : k; };
  auto ib = [kind, cols](std::size_t k) { return kind == Broadcast::kRowB ? k % cols : k; };

  std::vector<double> out(n);
  const auto& xa = na->value;
  const auto& xb = nb->value;
  for (std::size_t k = 0; k < n; ++k) out[k] = f(xa[ia(k)], xb[ib(k)]);

  return make_op(out_shape, std::move(out), {na, nb}, [=](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const auto& g = self.grad;
    if (pa.requires_grad) {
      auto ga = grad_of(pa);
      for (std::size_t k = 0; k < n; ++k)
        ga[ia(k)] += g[k] * da(pa.value[ia(k)], pb.value[ib(k)], self.value[k]);
    }
    if (pb.requires_grad) {
      auto gb = grad_of(pb);
      for (std::size_t k = 0; k < n; ++k)
        gb[ib(k)] += g[k] * db(pa.value[ia(k)], pb.value[ib(k)], self.value[k]);
    }
  });
}

// dfdx receives (x, y) where y = f(x).
template <class F, class D>
Tensor unary(const Tensor& x, F f, D dfdx) {
  const auto& nx = OpAccess::node(x);
  std::vector<double> out(nx->value.size());
  std::transform(nx->value.begin(), nx->value.end(), out.begin(), f);
  return make_op(nx->shape, std::move(out), {nx}, [dfdx](Node& self) {
    Node& p = *self.parents[0];
    auto gp = grad_of(p);
    for (std::size_t k = 0; k < gp.size(); ++k)
      gp[k] += self.grad[k] * dfdx(p.value[k], self.value[k]);
  });
}

struct Axis {
  std::size_t outer;  // number of independent reductions
  std::size_t inner;  // length of each reduction
  std::size_t stride_outer;
  std::size_t stride_inner;
  Shape out_shape;
};

Axis reduction_axis(const char* op, const Shape& s, int axis) {
  const std::size_t n = numel(s);
  if (axis == -1) return {1, n, 0, 1, {}};
  if (s.size() == 1 && axis == 0) return {1, n, 0, 1, {}};
  if (s.size() == 2 && axis == 0) return {s[1], s[0], 1, s[1], {s[1]}};
  if (s.size() == 2 && axis == 1) return {s[0], s[1], s[1], 1, {s[0]}};
  throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                   to_string(s));
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = ad::numel(shape);
  return make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return make_leaf(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return make_leaf({}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return make_leaf({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return make_leaf({rows, cols}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const { return OpAccess::node(*this)->shape; }
std::size_t Tensor::numel() const { return OpAccess::node(*this)->value.size(); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  return s.size() == 2 ? s[0] : 1;
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  return s.empty() ? 1 : s.back();
}

std::span<const double> Tensor::data() const { return OpAccess::node(*this)->value; }

std::span<double> Tensor::mutable_data() {
  auto& n = OpAccess::node(*this);
  if (!n->leaf) throw std::logic_error("mutable_data() on an interior graph node");
  return n->value;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return data()[0];
}

bool Tensor::requires_grad() const { return OpAccess::node(*this)->requires_grad; }
bool Tensor::is_leaf() const { return OpAccess::node(*this)->leaf; }
bool Tensor::has_grad() const { return !OpAccess::node(*this)->grad.empty(); }
std::span<const double> Tensor::grad() const { return OpAccess::node(*this)->grad; }

void Tensor::zero_grad() {
  auto& g = OpAccess::node(*this)->grad;
  std::fill(g.begin(), g.end(), 0.0);
}

Tensor Tensor::detach() const {
  const auto& n = OpAccess::node(*this);
  return make_leaf(n->shape, n->value, false);
}

Tensor Tensor::deep_copy() const {
  const auto& n = OpAccess::node(*this);
  return make_leaf(n->shape, n->value, n->requires_grad);
}

void Tensor::backward() const {
  const auto& root = OpAccess::node(*this);
  if (root->value.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + to_string(root->shape));
  }
  if (!root->requires_grad) throw std::logic_error("backward() on a tensor that needs no gradient");

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->leaf) n->grad.assign(n->value.size(), 0.0);
  }
  grad_of(*root)[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->leaf && n->backward) n->backward(*n);
  }
}

// ---------------------------------------------------------------- binaries

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.data()) {
    if (v == 0.0) throw DomainError("div: division by zero");
  }
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& na = OpAccess::node(a);
  const auto& nb = OpAccess::node(b);
  if (na->shape.size() != 2 || nb->shape.size() != 2 || na->shape[1] != nb->shape[0]) {
    throw ShapeError("matmul", na->shape, nb->shape);
  }
  const auto m = static_cast<Eigen::Index>(na->shape[0]);
  const auto k = static_cast<Eigen::Index>(na->shape[1]);
  const auto n = static_cast<Eigen::Index>(nb->shape[1]);
  std::vector<double> out(static_cast<std::size_t>(m * n));
  Eigen::Map<RowMat>(out.data(), m, n).noalias() =
      Eigen::Map<const RowMat>(na->value.data(), m, k) * Eigen::Map<const RowMat>(nb->value.data(), k, n);

  return make_op({na->shape[0], nb->shape[1]}, std::move(out), {na, nb}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    Eigen::Map<const RowMat> g(self.grad.data(), m, n);
    if (pa.requires_grad) {
      Eigen::Map<RowMat>(grad_of(pa).data(), m, k).noalias() +=
          g * Eigen::Map<const RowMat>(pb.value.data(), k, n).transpose();
    }
    if (pb.requires_grad) {
      Eigen::Map<RowMat>(grad_of(pb).data(), k, n).noalias() +=
          Eigen::Map<const RowMat>(pa.value.data(), m, k).transpose() * g;
    }
  });
}

// ---------------------------------------------------------------- unaries

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& x) {
  return unary(
      x, [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive argument " + std::to_string(v));
  }
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor square(const Tensor& x) {
  return unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor neg(const Tensor& x) {
  return unary(
      x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(
      x, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary(
      x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------- reductions

namespace {

// Recursive halving: accurate, and a sequence repeated twice sums to exactly
// twice its own sum.
double pairwise_sum(const double* v, std::size_t n, std::size_t stride) {
  if (n == 0) return 0.0;
  if (n == 1) return v[0];
  if (n == 2) return v[0] + v[stride];
  const std::size_t half = n / 2;
  return pairwise_sum(v, half, stride) + pairwise_sum(v + half * stride, n - half, stride);
}

}  // namespace

Tensor sum(const Tensor& x, int axis) {
  const auto& nx = OpAccess::node(x);
  const Axis ax = reduction_axis("sum", nx->shape, axis);
  std::vector<double> out(ax.outer, 0.0);
  for (std::size_t o = 0; o < ax.outer; ++o) {
    out[o] = pairwise_sum(nx->value.data() + o * ax.stride_outer, ax.inner, ax.stride_inner);
  }
  return make_op(ax.out_shape, std::move(out), {nx}, [ax](Node& self) {
    auto gp = grad_of(*self.parents[0]);
    for (std::size_t o = 0; o < ax.outer; ++o)
      for (std::size_t i = 0; i < ax.inner; ++i) gp[o * ax.stride_outer + i * ax.stride_inner] += self.grad[o];
  });
}

Tensor mean(const Tensor& x, int axis) {
  const Axis ax = reduction_axis("mean", x.shape(), axis);
  if (ax.inner == 0) throw ShapeError("mean over an empty axis of shape " + to_string(x.shape()));
  return scale(sum(x, axis), 1.0 / static_cast<double>(ax.inner));
}

Tensor logsumexp(const Tensor& x, int axis) {
  const auto& nx = OpAccess::node(x);
  const Axis ax = reduction_axis("logsumexp", nx->shape, axis);
  if (ax.inner == 0) throw ShapeError("logsumexp over an empty axis of shape " + to_string(nx->shape));
  std::vector<double> out(ax.outer);
  for (std::size_t o = 0; o < ax.outer; ++o) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < ax.inner; ++i)
      mx = std::max(mx, nx->value[o * ax.stride_outer + i * ax.stride_inner]);
    if (!std::isfinite(mx)) {
      out[o] = mx;
      continue;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < ax.inner; ++i)
      acc += std::exp(nx->value[o * ax.stride_outer + i * ax.stride_inner] - mx);
    out[o] = mx + std::log(acc);
  }
  return make_op(ax.out_shape, std::move(out), {nx}, [ax](Node& self) {
    Node& p = *self.parents[0];
    auto gp = grad_of(p);
    for (std::size_t o = 0; o < ax.outer; ++o) {
      for (std::size_t i = 0; i < ax.inner; ++i) {
        const std::size_t k = o * ax.stride_outer + i * ax.stride_inner;
        gp[k] += self.grad[o] * std::exp(p.value[k] - self.value[o]);
      }
    }
  });
}

// ---------------------------------------------------------------- structure

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  std::vector<std::shared_ptr<Node>> nodes;
  for (const auto& p : parts) nodes.push_back(OpAccess::node(p));
  const Shape& first = nodes[0]->shape;
  const std::size_t rank = first.size();
  if (rank == 0 || rank > 2 || axis < 0 || static_cast<std::size_t>(axis) >= rank) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " invalid for shape " + to_string(first));
  }
  // View every part as [rows, cols] and concatenate along rows or cols.
  const bool along_cols = rank == 2 && axis == 1;
  const std::size_t rows = rank == 2 ? first[0] : 1;
  std::size_t total = 0;
  for (const auto& n : nodes) {
    if (n->shape.size() != rank) throw ShapeError("concat", first, n->shape);
    if (rank == 2 && along_cols && n->shape[0] != rows) throw ShapeError("concat", first, n->shape);
    if (rank == 2 && !along_cols && n->shape[1] != first[1]) throw ShapeError("concat", first, n->shape);
    total += n->shape[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  std::vector<double> out;
  out.reserve(numel(out_shape));
  std::vector<std::size_t> widths;
  for (const auto& n : nodes) widths.push_back(along_cols ? n->shape[1] : n->value.size());
  if (along_cols) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        auto begin = nodes[i]->value.begin() + static_cast<std::ptrdiff_t>(r * widths[i]);
        out.insert(out.end(), begin, begin + static_cast<std::ptrdiff_t>(widths[i]));
      }
  } else {
    for (const auto& n : nodes) out.insert(out.end(), n->value.begin(), n->value.end());
  }
  return make_op(out_shape, std::move(out), nodes, [along_cols, rows, widths, total](Node& self) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      Node& p = *self.parents[i];
      if (p.requires_grad) {
        auto gp = grad_of(p);
        if (along_cols) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < widths[i]; ++c) gp[r * widths[i] + c] += self.grad[r * total + offset + c];
        } else {
          for (std::size_t k = 0; k < widths[i]; ++k) gp[k] += self.grad[offset + k];
        }
      }
      offset += widths[i];
    }
  });
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
  const auto& nx = OpAccess::node(x);
  const Shape& s = nx->shape;
  if (s.empty() || s.size() > 2 || axis < 0 || static_cast<std::size_t>(axis) >= s.size() ||
      begin > end || end > s[axis]) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " of shape " + to_string(s));
  }
  const std::size_t rows = s.size() == 2 ? s[0] : 1;
  const std::size_t cols = s.back();
  const bool along_cols = s.size() == 1 || axis == 1;
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  std::vector<double> out;
  out.reserve(numel(out_shape));
  if (along_cols) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = begin; c < end; ++c) out.push_back(nx->value[r * cols + c]);
  } else {
    out.assign(nx->value.begin() + static_cast<std::ptrdiff_t>(begin * cols),
               nx->value.begin() + static_cast<std::ptrdiff_t>(end * cols));
  }
  return make_op(out_shape, std::move(out), {nx}, [=](Node& self) {
    auto gp = grad_of(*self.parents[0]);
    if (along_cols) {
      const std::size_t w = end - begin;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < w; ++c) gp[r * cols + begin + c] += self.grad[r * w + c];
    } else {
      for (std::size_t k = 0; k < self.grad.size(); ++k) gp[begin * cols + k] += self.grad[k];
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  const auto& nx = OpAccess::node(x);
  if (numel(shape) != nx->value.size()) throw ShapeError("reshape", nx->shape, shape);
  return make_op(std::move(shape), nx->value, {nx}, [](Node& self) {
    auto gp = grad_of(*self.parents[0]);
    for (std::size_t k = 0; k < gp.size(); ++k) gp[k] += self.grad[k];
  });
}

Tensor tile_rows(const Tensor& x, std::size_t times) {
  const auto& nx = OpAccess::node(x);
  if (nx->shape.size() != 2) throw ShapeError("tile_rows needs a matrix, got " + to_string(nx->shape));
  const std::size_t block = nx->value.size();
  std::vector<double> out;
  out.reserve(block * times);
  for (std::size_t t = 0; t < times; ++t) out.insert(out.end(), nx->value.begin(), nx->value.end());
  return make_op({nx->shape[0] * times, nx->shape[1]}, std::move(out), {nx}, [block, times](Node& self) {
    auto gp = grad_of(*self.parents[0]);
    for (std::size_t t = 0; t < times; ++t)
      for (std::size_t k = 0; k < block; ++k) gp[k] += self.grad[t * block + k];
  });
}

Tensor repeat_rows(const Tensor& x, std::size_t times) {
  const auto& nx = OpAccess::node(x);
  if (nx->shape.size() != 2) throw ShapeError("repeat_rows needs a matrix, got " + to_string(nx->shape));
  const std::size_t rows = nx->shape[0];
  const std::size_t cols = nx->shape[1];
  std::vector<double> out;
  out.reserve(rows * cols * times);
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = nx->value.begin() + static_cast<std::ptrdiff_t>(r * cols);
    for (std::size_t t = 0; t < times; ++t) out.insert(out.end(), row, row + static_cast<std::ptrdiff_t>(cols));
  }
  return make_op({rows * times, cols}, std::move(out), {nx}, [rows, cols, times](Node& self) {
    auto gp = grad_of(*self.parents[0]);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t t = 0; t < times; ++t)
        for (std::size_t c = 0; c < cols; ++c) gp[r * cols + c] += self.grad[(r * times + t) * cols + c];
  });
}

Tensor pairwise_add(const Tensor& a, const Tensor& b) {
  const auto& na = OpAccess::node(a);
  const auto& nb = OpAccess::node(b);
  if (na->shape.size() != 2 || nb->shape.size() != 2 || na->shape[1] != nb->shape[1]) {
    throw ShapeError("pairwise_add", na->shape, nb->shape);
  }
  const std::size_t n = na->shape[0];
  const std::size_t m = nb->shape[0];
  const std::size_t c = na->shape[1];
  std::vector<double> out(m * n * c);
  for (std::size_t j = 0; j < m; ++j) {
    const double* bj = nb->value.data() + j * c;
    for (std::size_t i = 0; i < n; ++i) {
      const double* ai = na->value.data() + i * c;
      double* o = out.data() + (j * n + i) * c;
      for (std::size_t k = 0; k < c; ++k) o[k] = ai[k] + bj[k];
    }
  }
  return make_op({m * n, c}, std::move(out), {na, nb}, [n, m, c](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const bool want_a = pa.requires_grad;
    const bool want_b = pb.requires_grad;
    double* ga = want_a ? grad_of(pa).data() : nullptr;
    double* gb = want_b ? grad_of(pb).data() : nullptr;
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < n; ++i) {
        const double* g = self.grad.data() + (j * n + i) * c;
        if (want_a)
          for (std::size_t k = 0; k < c; ++k) ga[i * c + k] += g[k];
        if (want_b)
          for (std::size_t k = 0; k < c; ++k) gb[j * c + k] += g[k];
      }
    }
  });
}

}  // namespace nplab::ad
