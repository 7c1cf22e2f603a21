#include "csegnet/autograd.hpp"

#include <cassert>

namespace csegnet {

template <typename T>
Var<T> Tape<T>::leaf(BasicTensor<T> value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, {}, requires_grad, "leaf"});
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(BasicTensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward, const char* op) {
#ifndef NDEBUG
  assert(value.all_finite() && "op produced a non-finite value");
#endif
  bool needs = false;
  for (auto id : inputs) {
    assert(id < nodes_.size());
    needs = needs || nodes_[id].requires_grad;
  }
  if (!needs) backward = nullptr;
  nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(backward), needs, op});
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
BasicTensor<T>* Tape<T>::grad_buffer(std::size_t id) {
  if (!nodes_[id].requires_grad) return nullptr;
  if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
  auto& slot = grads_[id];
  if (!slot.has) {
    slot.tensor = BasicTensor<T>::zeros(nodes_[id].value.shape());
    slot.has = true;
  }
  return &slot.tensor;
}

template <typename T>
void Tape<T>::accumulate(std::size_t id, const BasicTensor<T>& grad) {
  BasicTensor<T>* buf = grad_buffer(id);
  if (!buf) return;
  if (buf->shape() != grad.shape())
    fail(ErrorKind::Internal,
         "gradient shape " + shape_str(grad.shape()) + " does not match value shape " + shape_str(buf->shape()));
  T* dst = buf->ptr();
  const T* src = grad.ptr();
  const auto n = grad.numel();
  for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

template <typename T>
void Tape<T>::backward(Var<T> root) {
  const auto& rv = nodes_[root.id].value;
  if (rv.numel() != 1) fail(ErrorKind::NonScalarRoot, "backward root has shape " + shape_str(rv.shape()));
  grads_.clear();
  grads_.resize(nodes_.size());
  if (!nodes_[root.id].requires_grad) return;
  grads_[root.id].tensor = BasicTensor<T>::ones(rv.shape());
  grads_[root.id].has = true;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.backward || !grads_[i].has) continue;
    node.backward(*this, grads_[i].tensor);
    // Intermediate gradients are released once consumed; leaf gradients stay.
    if (!node.inputs.empty()) {
      grads_[i].tensor = BasicTensor<T>();
      grads_[i].has = false;
    }
  }
}

template <typename T>
BasicTensor<T> Tape<T>::grad(Var<T> v) const {
  if (v.id < grads_.size() && grads_[v.id].has) return grads_[v.id].tensor;
  return BasicTensor<T>::zeros(nodes_[v.id].value.shape());
}

template class Tape<float>;
template class Tape<double>;

}  // namespace csegnet
