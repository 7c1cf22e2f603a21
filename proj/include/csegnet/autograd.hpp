#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string_view>
#include <vector>

#include "csegnet/tensor.hpp"

namespace csegnet {

template <typename T>
class Tape;

/// Handle to a value recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const BasicTensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape->requires_grad(*this); }
};

/// Define-by-run reverse-mode tape. Nodes are appended in execution order, so
/// every node's inputs precede it; backward walks the list in reverse.
///
/// One tape belongs to one forward/backward pass and is not thread-safe.
template <typename T>
class Tape {
 public:
  /// Receives the output gradient; pushes contributions to inputs with accumulate().
  using BackwardFn = std::function<void(Tape&, const BasicTensor<T>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(BasicTensor<T> value, bool requires_grad = false);
  Var<T> constant(BasicTensor<T> value) { return leaf(std::move(value), false); }

  /// Records an op output. The backward rule is kept only if some input requires grad.
  /// `op` is a static label used by diagnostics (e.g. locating activation kinks).
  Var<T> record(BasicTensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward, const char* op = "op");

  const BasicTensor<T>& value(Var<T> v) const { return nodes_[v.id].value; }
  const BasicTensor<T>& value_at(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }
  std::string_view op_at(std::size_t id) const { return nodes_[id].op; }
  const std::vector<std::size_t>& inputs_at(std::size_t id) const { return nodes_[id].inputs; }
  std::size_t size() const noexcept { return nodes_.size(); }
  /// Id the next recorded node will receive; lets a rule refer to its own output.
  std::size_t next_id() const noexcept { return nodes_.size(); }

  /// Gradient buffer for `id`, allocated as zeros on first use; nullptr when the
  /// node does not require grad. Contributions are summed, never overwritten.
  BasicTensor<T>* grad_buffer(std::size_t id);
  void accumulate(std::size_t id, const BasicTensor<T>& grad);

  /// Runs reverse accumulation from a scalar root. Throws NonScalarRoot.
  void backward(Var<T> root);

  /// d(root)/d(v) after backward(); zeros if v did not influence the root.
  BasicTensor<T> grad(Var<T> v) const;
  bool has_grad(Var<T> v) const { return v.id < grads_.size() && grads_[v.id].has; }

 private:
  struct Node {
    BasicTensor<T> value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    const char* op = "leaf";
  };
  struct GradSlot {
    BasicTensor<T> tensor;
    bool has = false;
  };

  std::deque<Node> nodes_;
  std::vector<GradSlot> grads_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace csegnet
