#include "mmga/tensor.hpp"

#include <algorithm>
#include <unordered_set>

namespace mmga {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

namespace detail {
bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

template <typename Scalar>
Tensor<Scalar>::Tensor(const Shape& shape, Scalar fill)
    : node_(std::make_shared<detail::Node<Scalar>>()) {
  node_->shape = shape;
  node_->values = Array::Constant(shape.size(), fill);
}

template <typename Scalar>
Tensor<Scalar>::Tensor(const Shape& shape, std::initializer_list<Scalar> values)
    : Tensor(shape) {
  if (static_cast<Index>(values.size()) != shape.size())
    throw Error("shape", "initializer has " + std::to_string(values.size()) + " values for shape " +
                             shape.str());
  std::copy(values.begin(), values.end(), node_->values.data());
}

template <typename Scalar>
Tensor<Scalar>::Tensor(const Shape& shape, Array values)
    : node_(std::make_shared<detail::Node<Scalar>>()) {
  if (values.size() != shape.size())
    throw Error("shape", "value count " + std::to_string(values.size()) + " does not match shape " +
                             shape.str());
  node_->shape = shape;
  node_->values = std::move(values);
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) throw Error("shape", "item() on non-scalar tensor " + shape().str());
  return node_->values[0];
}

template <typename Scalar>
void Tensor<Scalar>::backward() {
  if (size() != 1) throw Error("shape", "backward() requires a scalar loss, got " + shape().str());
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  using Node = detail::Node<Scalar>;
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->accumulate(Array::Ones(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward_fn && node->grad.size() != 0) node->backward_fn(*node);
  }
  for (Node* node : order) {
    if (node->backward_fn) {
      node->backward_fn = nullptr;
      node->parents.clear();
    }
  }
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  return Tensor(shape(), values());
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::clone() const {
  Tensor out(shape(), values());
  out.node_->requires_grad = node_->requires_grad;
  return out;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshape(const Shape& s) const {
  if (s.size() != size())
    throw Error("shape", "cannot reshape " + shape().str() + " to " + s.str());
  auto input = *this;
  return make_result<Scalar>("reshape", s, values(), {input},
                             [input](const detail::Node<Scalar>& self) mutable {
                               input.node()->accumulate(self.grad);
                             });
}

template <typename Scalar>
Tensor<Scalar> make_result(const char* op, const Shape& shape, typename Tensor<Scalar>::Array values,
                           std::vector<Tensor<Scalar>> inputs,
                           std::function<void(const detail::Node<Scalar>&)> backward_fn) {
  if (!values.allFinite()) throw Error("numeric", std::string("non-finite value produced by ") + op);
  Tensor<Scalar> out(shape, std::move(values));
  if (!grad_enabled()) return out;
  const bool needs_grad = std::any_of(inputs.begin(), inputs.end(),
                                      [](const Tensor<Scalar>& t) { return t.requires_grad(); });
  if (!needs_grad) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  for (auto& t : inputs)
    if (t.defined()) node.parents.push_back(t.node());
  node.backward_fn = std::move(backward_fn);
  return out;
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> make_result<float>(const char*, const Shape&, Tensor<float>::Array,
                                          std::vector<Tensor<float>>,
                                          std::function<void(const detail::Node<float>&)>);
template Tensor<double> make_result<double>(const char*, const Shape&, Tensor<double>::Array,
                                            std::vector<Tensor<double>>,
                                            std::function<void(const detail::Node<double>&)>);

}  // namespace mmga
