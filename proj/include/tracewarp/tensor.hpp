#pragma once

// Dense tensors with a reverse-mode gradient graph.
//
// Every op that consumes a tensor requiring gradients records a node holding
// its inputs and a backward rule. backward() linearises the reachable graph
// into a Tape (reverse topological order), runs each rule once, then releases
// the recorded edges so the next step starts from a clean graph.
//
// Precision is a template parameter: float for training, double for gradient
// checking. Both are explicitly instantiated in tensor.cpp.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tracewarp {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T fill, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  // Writing through this after the tensor was consumed by an op invalidates
  // that op's backward; only used on leaves between steps.
  std::span<T> mutable_data() { return node_->value; }
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  // Gradient accumulated by backward(); zeros when nothing flowed in.
  std::vector<T> grad() const;
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  void zero_grad() { node_->grad.clear(); }

  // New leaf with a copy of the value and no history.
  Tensor detach() const;
  Tensor clone(bool requires_grad) const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds the result node for an op. The backward rule is attached only when
// some input requires gradients, so inference never records anything.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<std::shared_ptr<Node<T>>> inputs,
                      std::function<void(Node<T>&)> backward_fn);

// Ordered record of the graph reachable from a root: inputs precede the ops
// that consume them. run() walks it backwards.
template <typename T>
class Tape {
 public:
  static Tape record(const Tensor<T>& root);
  const std::vector<Node<T>*>& nodes() const { return order_; }
  void run(const Tensor<T>& root);
  void clear();

 private:
  std::vector<Node<T>*> order_;
  std::vector<std::shared_ptr<Node<T>>> keep_alive_;
};

// Seeds d(loss)/d(loss) = 1 and propagates to every leaf requiring gradients.
// Throws ShapeError for a non-scalar loss.
template <typename T>
void backward(const Tensor<T>& loss);

}  // namespace tracewarp
