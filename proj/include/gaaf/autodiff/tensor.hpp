#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gaaf/errors.hpp"

namespace gaaf::ad {

using Shape = std::vector<Eigen::Index>;

Eigen::Index shape_size(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename Scalar>
struct Node;

/// Handle to a node of the reverse-mode graph. Copies share the node.
///
/// Leaves are created with `requires_grad` set for parameters and cleared for
/// data. Every op builds a new node holding its parents and a backward rule
/// that accumulates into the parents' gradients; graphs are acyclic because a
/// node only ever points at nodes that existed before it.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using BackwardFn = std::function<void(Node<Scalar>&)>;

  Tensor() = default;

  static Tensor leaf(Shape shape, Array data, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor constant(Shape shape, Scalar value, bool requires_grad = false);

  /// Op result. `requires_grad` is inherited from the parents.
  static Tensor from_op(Shape shape, Array data, std::vector<Tensor> parents, BackwardFn backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  Eigen::Index dim(std::size_t axis) const { return shape().at(axis); }
  Eigen::Index size() const { return data().size(); }

  const Array& data() const;
  /// Mutable storage; for optimisers and initialisation only.
  Array& mutable_data();

  bool requires_grad() const;
  bool has_grad() const;
  const Array& grad() const;
  Array& mutable_grad();
  void zero_grad();

  Scalar item() const;

  /// Seeds d(this)/d(this) = 1 and runs every backward rule in reverse
  /// topological order. Requires a single-element tensor.
  void backward() const;

  /// Same as backward() but seeds with an explicit upstream gradient.
  void backward(const Array& seed) const;

  Node<Scalar>& node() const { return *node_; }

 private:
  explicit Tensor(std::shared_ptr<Node<Scalar>> node) : node_(std::move(node)) {}
  std::shared_ptr<Node<Scalar>> node_;
};

template <typename Scalar>
struct Node {
  using Array = typename Tensor<Scalar>::Array;

  Shape shape;
  Array data;
  Array grad;  ///< empty until first accumulation
  bool requires_grad = false;
  std::vector<Tensor<Scalar>> parents;
  typename Tensor<Scalar>::BackwardFn backward;

  /// Gradient buffer, zero-initialised on first use.
  Array& grad_buffer() {
    if (grad.size() != data.size()) grad = Array::Zero(data.size());
    return grad;
  }
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace gaaf::ad
