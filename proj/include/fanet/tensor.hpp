#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fanet/common.hpp"

namespace fanet {

template <typename T>
class Tensor;

template <typename T>
struct TensorData;

namespace detail {
inline thread_local bool grad_enabled = true;
}

// Disables graph recording on this thread for its lifetime, so inference
// does not retain intermediate tensors.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// One recorded operation in the computation graph. `backward` reads the
// output's grad (passed by reference) and accumulates into the inputs' grads.
// Inputs are held by value so the graph keeps its operands alive.
template <typename T>
struct GraphNode {
  std::string op;
  std::vector<Tensor<T>> inputs;
  std::function<void(const TensorData<T>& out)> backward;
  bool consumed = false;
};

template <typename T>
struct TensorData {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::unique_ptr<GraphNode<T>> node;

  int64_t numel() const { return static_cast<int64_t>(values.size()); }

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), T(0));
    return grad;
  }
};

// Dense N-D tensor handle with shared ownership of its storage. Copies are
// shallow; ops return fresh tensors linked into the graph when any input
// requires gradients. Layout for feature maps is N,C,H,W row-major.
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), T(0), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    Tensor t;
    t.d_ = std::make_shared<TensorData<T>>();
    t.d_->shape = std::move(shape);
    t.d_->values.assign(static_cast<size_t>(numel_of(t.d_->shape)), value);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values,
                     bool requires_grad = false) {
    if (numel_of(shape) != static_cast<int64_t>(values.size()))
      throw ShapeError("tensor: " + std::to_string(values.size()) +
                       " values do not fill shape " + shape_str(shape));
    Tensor t;
    t.d_ = std::make_shared<TensorData<T>>();
    t.d_->shape = std::move(shape);
    t.d_->values = std::move(values);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  // Fresh tensor produced by an op. Records a graph node when any input
  // requires gradients; otherwise the result is a detached constant.
  static Tensor make_op(
      Shape shape, std::vector<T> values, std::string op,
      std::vector<Tensor> inputs,
      std::function<void(const TensorData<T>&)> backward) {
    Tensor t = from(std::move(shape), std::move(values));
    bool rg = false;
    if (detail::grad_enabled)
      for (const Tensor& in : inputs) rg = rg || in.requires_grad();
    if (rg) {
      t.d_->requires_grad = true;
      t.d_->node = std::make_unique<GraphNode<T>>();
      t.d_->node->op = std::move(op);
      t.d_->node->inputs = std::move(inputs);
      t.d_->node->backward = std::move(backward);
    }
    return t;
  }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  int64_t ndim() const { return static_cast<int64_t>(d_->shape.size()); }
  int64_t dim(int i) const { return d_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return d_->numel(); }

  // Shallow-const handle semantics: storage belongs to the shared
  // TensorData.
  std::vector<T>& values() const { return d_->values; }

  bool requires_grad() const { return d_ && d_->requires_grad; }

  // Leaf-only toggle; op outputs own their graph linkage.
  void set_requires_grad(bool rg) {
    if (d_->node)
      throw ConfigError("set_requires_grad: only valid on leaf tensors");
    d_->requires_grad = rg;
  }

  bool has_grad() const { return d_ && !d_->grad.empty(); }

  std::vector<T>& grad() const { return d_->ensure_grad(); }

  void zero_grad() const {
    if (d_ && !d_->grad.empty()) d_->grad.assign(d_->grad.size(), T(0));
  }

  T item() const {
    if (numel() != 1)
      throw ConfigError("item: tensor has shape " + shape_str(shape()));
    return d_->values[0];
  }

  // Detached copy of the values (no graph linkage, no grad).
  Tensor detached() const { return from(d_->shape, d_->values); }

  TensorData<T>* data_ptr() const { return d_.get(); }

  // Reverse-mode accumulation from a scalar root. Visits every reachable
  // node exactly once in reverse topological order; gradients sum over
  // fan-out. A graph can be walked once per root; rebuilding the forward
  // pass resets it.
  void backward() const {
    if (numel() != 1)
      throw ConfigError("backward: root must be scalar, got shape " +
                        shape_str(shape()));
    if (!requires_grad()) return;
    if (d_->node && d_->node->consumed)
      throw ConfigError(
          "backward: graph already consumed; rerun the forward pass");

    std::vector<TensorData<T>*> order;  // post-order, root last
    std::unordered_set<TensorData<T>*> visited;
    struct Frame {
      TensorData<T>* td;
      size_t next_input;
    };
    std::vector<Frame> stack;
    stack.push_back({d_.get(), 0});
    visited.insert(d_.get());
    while (!stack.empty()) {
      Frame& f = stack.back();
      GraphNode<T>* node = f.td->node.get();
      size_t fanin = node ? node->inputs.size() : 0;
      if (f.next_input < fanin) {
        TensorData<T>* in = node->inputs[f.next_input].data_ptr();
        ++f.next_input;
        if (in->requires_grad && !visited.count(in)) {
          visited.insert(in);
          stack.push_back({in, 0});
        }
      } else {
        order.push_back(f.td);
        stack.pop_back();
      }
    }

    d_->ensure_grad()[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorData<T>* td = *it;
      // All consumers have already run; an untouched grad buffer means the
      // upstream gradient is identically zero (ops may skip inputs they
      // never differentiate, e.g. thresholds in hard mode).
      if (td->grad.empty()) continue;
      if (td->node && td->node->backward) td->node->backward(*td);
    }
    if (d_->node) d_->node->consumed = true;
  }

 private:
  std::shared_ptr<TensorData<T>> d_;
};

// Accumulates src into the grad buffer of `t` if it participates in the
// graph. Ops call this from their backward closures.
template <typename T>
inline void accumulate_grad(const Tensor<T>& t, const std::vector<T>& src) {
  if (!t.requires_grad()) return;
  std::vector<T>& g = t.grad();
  for (size_t i = 0; i < src.size(); ++i) g[i] += src[i];
}

}  // namespace fanet
