#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "partloc/engine/tensor.hpp"

namespace partloc::engine {

template <typename T>
class Tape;

/// A tensor participating in a computation. Parameters are long-lived leaf
/// nodes; activations are created fresh by every forward pass.
template <typename T>
struct Node {
  Tensor<T> tensor;
  bool requires_grad = false;
  const Tape<T>* producer = nullptr;
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> make_var(Tensor<T> tensor, bool requires_grad = false) {
  auto node = std::make_shared<Node<T>>();
  node->tensor = std::move(tensor);
  node->requires_grad = requires_grad;
  return node;
}

/// Records backward closures in forward order. One tape per training step;
/// backward() replays the closures in reverse and then empties the tape.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers the output of an op. The closure runs during backward and
  /// must only read the output's grad and accumulate into input grads.
  void record(const Var<T>& output, std::function<void()> backward_fn) {
    output->producer = this;
    closures_.push_back(std::move(backward_fn));
  }

  /// Leaves listed here receive a (possibly zero) gradient on backward even
  /// when the loss does not depend on them.
  void watch(const Var<T>& leaf) {
    if (leaf && leaf->requires_grad) watched_.push_back(leaf);
  }

  bool empty() const { return closures_.empty(); }
  std::size_t size() const { return closures_.size(); }

  void backward(const Var<T>& loss) {
    if (closures_.empty()) {
      throw GraphError("backward called with no recorded forward pass");
    }
    if (!loss || loss->producer != this) {
      throw GraphError("loss was not produced by this tape's forward pass");
    }
    if (loss->tensor.size() != 1) {
      throw GraphError("backward requires a scalar loss, got shape " +
                       shape_string(loss->tensor.shape()));
    }
    for (auto& leaf : watched_) leaf->tensor.ensure_grad();
    loss->tensor.ensure_grad()[0] = T{1};
    for (auto it = closures_.rbegin(); it != closures_.rend(); ++it) (*it)();
    clear();
  }

  void clear() {
    closures_.clear();
    watched_.clear();
  }

 private:
  std::vector<std::function<void()>> closures_;
  std::vector<Var<T>> watched_;
};

}  // namespace partloc::engine
