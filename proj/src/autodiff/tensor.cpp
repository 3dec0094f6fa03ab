#include "gaaf/autodiff/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace gaaf::ad {

Eigen::Index shape_size(const Shape& shape) {
  Eigen::Index n = 1;
  for (auto d : shape) {
    if (d < 1) throw ShapeError("tensor dims must be >= 1, got " + to_string(shape));
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream s;
  s << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s << (i ? "," : "") << shape[i];
  s << "]";
  return s.str();
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::leaf(Shape shape, Array data, bool requires_grad) {
  if (shape_size(shape) != data.size())
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     to_string(shape));
  auto node = std::make_shared<Node<Scalar>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_size(shape);
  return leaf(std::move(shape), Array::Zero(n), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::constant(Shape shape, Scalar value, bool requires_grad) {
  const auto n = shape_size(shape);
  return leaf(std::move(shape), Array::Constant(n, value), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_op(Shape shape, Array data, std::vector<Tensor> parents,
                                       BackwardFn backward) {
  Tensor out = leaf(std::move(shape), std::move(data), false);
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (any) {
    out.node_->requires_grad = true;
    out.node_->parents = std::move(parents);
    out.node_->backward = std::move(backward);
  }
  return out;
}

template <typename Scalar>
const Shape& Tensor<Scalar>::shape() const {
  return node_->shape;
}

template <typename Scalar>
auto Tensor<Scalar>::data() const -> const Array& {
  return node_->data;
}

template <typename Scalar>
auto Tensor<Scalar>::mutable_data() -> Array& {
  return node_->data;
}

template <typename Scalar>
bool Tensor<Scalar>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename Scalar>
bool Tensor<Scalar>::has_grad() const {
  return node_ && node_->grad.size() == node_->data.size();
}

template <typename Scalar>
auto Tensor<Scalar>::grad() const -> const Array& {
  if (!has_grad()) node_->grad_buffer();
  return node_->grad;
}

template <typename Scalar>
auto Tensor<Scalar>::mutable_grad() -> Array& {
  return node_->grad_buffer();
}

template <typename Scalar>
void Tensor<Scalar>::zero_grad() {
  node_->grad_buffer().setZero();
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) throw ShapeError("item() needs a single-element tensor, got " + to_string(shape()));
  return node_->data(0);
}

template <typename Scalar>
void Tensor<Scalar>::backward() const {
  if (size() != 1)
    throw ShapeError("backward() without a seed needs a scalar, got " + to_string(shape()));
  backward(Array::Ones(1));
}

template <typename Scalar>
void Tensor<Scalar>::backward(const Array& seed) const {
  if (seed.size() != size()) throw ShapeError("backward seed does not match tensor size");
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> seen;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Scalar>* parent = &node->parents[next++].node();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  node_->grad_buffer() += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>& node = **it;
    if (!node.backward) continue;
    node.grad_buffer();
    node.backward(node);
    // Every consumer of this node has already run; its gradient is spent.
    node.grad = Array();
  }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace gaaf::ad
