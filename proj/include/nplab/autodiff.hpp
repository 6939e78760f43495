#pragma once

// Reverse-mode automatic differentiation over dense double tensors.
//
// A Tensor is a cheap handle to a graph node. Leaves own their values and
// accumulate gradients; interior nodes remember their parents and a closure
// that pushes the incoming gradient back to them. Only rank 0, 1 and 2
// tensors are supported, and the only broadcast is a row vector against the
// rows of a matrix.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nplab::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b);
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  // Writable view of a leaf's values. Throws for interior nodes.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  // Empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  void zero_grad();

  // Reverse sweep from a scalar. Leaf gradients accumulate across calls.
  void backward() const;

  // Same values, no graph history, never receives gradient.
  Tensor detach() const;
  // Fresh leaf holding a copy of the values; keeps the requires_grad flag.
  Tensor deep_copy() const;

  const void* id() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend struct OpAccess;
};

// Elementwise binaries: equal shapes, or one operand a row vector ([c] or
// [1, c]) broadcast across the rows of an [r, c] matrix.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);

Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
// Gradient passes where lo <= x <= hi and is zero outside.
Tensor clamp(const Tensor& x, double lo, double hi);

// axis = -1 reduces everything to a scalar.
Tensor sum(const Tensor& x, int axis = -1);
Tensor mean(const Tensor& x, int axis = -1);
Tensor logsumexp(const Tensor& x, int axis = -1);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);
// [r, c] -> [times * r, c], whole block repeated.
Tensor tile_rows(const Tensor& x, std::size_t times);
// [r, c] -> [r * times, c], each row repeated consecutively.
Tensor repeat_rows(const Tensor& x, std::size_t times);
// Every row of a [n, c] plus every row of b [m, c]: row j * n + i of the
// [m * n, c] result is a[i] + b[j]. Equals tile_rows(a, m) + repeat_rows(b, n).
Tensor pairwise_add(const Tensor& a, const Tensor& b);

inline Tensor detach(const Tensor& t) { return t.detach(); }

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

struct GradReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

// Central-difference check of one vector argument. The relative error of a
// coordinate is |a - n| / max(|a|, |n|, 1e-8).
GradReport grad_check(const std::function<Tensor(const Tensor&)>& f,
                      std::span<const double> x, double eps);

// Same check over every coordinate of a set of leaves, perturbed in place.
// worst_index is the flat index across the concatenation of `params`.
GradReport grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, double eps);

}  // namespace nplab::ad
