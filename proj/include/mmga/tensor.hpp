#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmga {

using Index = Eigen::Index;

/// Error raised by every module on contract violations. `kind` is a short
/// machine-readable tag (e.g. "shape", "label", "io") used by the CLI.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

/// (batch, channel, height, width) extents. Matrices n×d are stored as (n,d,1,1).
struct Shape {
  Index n = 0, c = 0, h = 0, w = 0;

  Index size() const { return n * c * h * w; }
  Index spatial() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

namespace detail {

template <typename Scalar>
struct Node {
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Shape shape;
  Array values;
  Array grad;  // empty until a gradient arrives
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Node&)> backward_fn;

  void accumulate(const Eigen::Ref<const Array>& g) {
    if (grad.size() == 0) grad = Array::Zero(values.size());
    grad += g;
  }
  Array& grad_buffer() {
    if (grad.size() == 0) grad = Array::Zero(values.size());
    return grad;
  }
};

bool& grad_mode_flag();

}  // namespace detail

/// True unless a NoGradGuard is active on this thread.
inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording for its lifetime (evaluation, parameter updates).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Dense 4-D tensor with an optional gradient slot, templated on the scalar
/// type (float for training, double for gradient checks). Copies share
/// storage; use clone() for a deep copy.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using NodePtr = std::shared_ptr<detail::Node<Scalar>>;

  Tensor() = default;
  explicit Tensor(const Shape& shape, Scalar fill = Scalar(0));
  Tensor(const Shape& shape, std::initializer_list<Scalar> values);
  Tensor(const Shape& shape, Array values);

  static Tensor zeros(const Shape& shape) { return Tensor(shape); }
  static Tensor constant(const Shape& shape, Scalar v) { return Tensor(shape, v); }
  static Tensor scalar(Scalar v) { return Tensor(Shape{1, 1, 1, 1}, v); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index size() const { return node_->values.size(); }

  Array& values() { return node_->values; }
  const Array& values() const { return node_->values; }
  Scalar* data() { return node_->values.data(); }
  const Scalar* data() const { return node_->values.data(); }

  Index offset(Index n, Index c, Index h, Index w) const {
    const Shape& s = shape();
    return ((n * s.c + c) * s.h + h) * s.w + w;
  }
  Scalar& at(Index n, Index c, Index h = 0, Index w = 0) { return node_->values[offset(n, c, h, w)]; }
  Scalar at(Index n, Index c, Index h = 0, Index w = 0) const { return node_->values[offset(n, c, h, w)]; }

  /// Value of a single-element tensor.
  Scalar item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }
  bool has_grad() const { return node_->grad.size() != 0; }
  /// Gradient buffer; allocated (zeros) on first access.
  Array& grad() { return node_->grad_buffer(); }
  const Array& grad() const { return node_->grad_buffer(); }
  void zero_grad() {
    if (node_->grad.size() != 0) node_->grad.setZero();
  }

  /// Reverse-mode propagation from this scalar. Gradients accumulate into
  /// every reachable requires_grad tensor; the recorded graph is released.
  void backward();

  /// Same values, no graph history, requires_grad off.
  Tensor detach() const;
  Tensor clone() const;

  /// Shape reinterpretation sharing the graph (gradient flows through).
  Tensor reshape(const Shape& shape) const;

  const NodePtr& node() const { return node_; }
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

 private:
  NodePtr node_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

/// Builds an operator result. When recording is on and any input requires
/// a gradient, the result records `backward_fn` (called with the result node
/// once its gradient is complete). Non-finite results raise Error("numeric").
template <typename Scalar>
Tensor<Scalar> make_result(const char* op, const Shape& shape, typename Tensor<Scalar>::Array values,
                           std::vector<Tensor<Scalar>> inputs,
                           std::function<void(const detail::Node<Scalar>&)> backward_fn);

/// Value-only conversion between scalar types (no graph history).
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  return Tensor<To>(t.shape(), t.values().template cast<To>().eval());
}

}  // namespace mmga
