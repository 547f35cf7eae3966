#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "lpae/tensor.hpp"

namespace lpae {

namespace detail {

template <typename T>
struct VarNode {
  Tensor<T> value;
  Tensor<T> grad;  // allocated lazily, on first accumulation
  bool requires_grad = false;
  bool grad_live = false;

  Tensor<T>& ensure_grad() {
    if (!grad_live) {
      grad = Tensor<T>(value.shape());
      grad_live = true;
    }
    return grad;
  }
};

}  // namespace detail

// Handle to a node of the computation graph. Cheap to copy; all copies alias
// the same value/gradient storage. Parameters are Vars with requires_grad set;
// they outlive any single tape.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : n_(std::make_shared<detail::VarNode<T>>()) {
    n_->value = std::move(value);
    n_->requires_grad = requires_grad;
  }

  bool defined() const { return n_ != nullptr; }
  Tensor<T>& value() { return n_->value; }
  const Tensor<T>& value() const { return n_->value; }
  bool requires_grad() const { return n_ && n_->requires_grad; }

  // The accumulated gradient. Empty tensor if backward never reached this Var.
  const Tensor<T>& grad() const { return n_->grad; }
  bool has_grad() const { return n_ && n_->grad_live; }

  void zero_grad() {
    if (n_ && n_->grad_live) n_->grad.fill(T(0));
  }

  std::shared_ptr<detail::VarNode<T>> node() const { return n_; }

 private:
  std::shared_ptr<detail::VarNode<T>> n_;
};

// Ordered record of executed operations. Ops push one backward closure per
// recorded node; replaying the closures in reverse order is a reverse
// topological traversal of the graph, and gradient accumulation across
// fan-out happens via += into each node's grad buffer.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    if (recording_) steps_.push_back(std::move(backward_fn));
  }

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }
  std::size_t size() const { return steps_.size(); }
  void clear() { steps_.clear(); }

  void replay_reverse() {
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> steps_;
  bool recording_ = true;
};

// Seeds d(loss)/d(loss) = 1 and runs the tape backwards. Gradients end up in
// the .grad() buffers of every requires_grad Var that loss depends on.
template <typename T>
void backward(Tape<T>& tape, const Var<T>& loss) {
  if (!loss.defined() || loss.value().size() != 1)
    throw ShapeError("backward: loss must be a defined scalar");
  loss.node()->ensure_grad()[0] += T(1);
  tape.replay_reverse();
}

namespace detail {

// += accumulation helper used by backward closures.
template <typename T>
inline void accumulate(VarNode<T>& node, const Tensor<T>& g) {
  Tensor<T>& dst = node.ensure_grad();
  const T* src = g.data();
  T* d = dst.data();
  for (std::size_t i = 0; i < g.size(); ++i) d[i] += src[i];
}

template <typename T>
inline bool any_requires(std::initializer_list<const Var<T>*> vars) {
  for (const Var<T>* v : vars)
    if (v->defined() && v->requires_grad()) return true;
  return false;
}

}  // namespace detail

}  // namespace lpae
