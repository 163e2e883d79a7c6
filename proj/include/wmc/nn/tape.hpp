#pragma once

// Reverse-mode differentiation over a linear record of operations. Each op
// pushes its output value together with a closure that, during backward(),
// reads the output gradient and accumulates into the gradients of its inputs.

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "wmc/error.hpp"
#include "wmc/nn/params.hpp"
#include "wmc/nn/tensor.hpp"

namespace wmc::nn {

struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, Var self)>;

  Var constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

  /// Non-owning constant; `value` must outlive the tape.
  Var constant_ref(const Tensor<T>& value) {
    Node n;
    n.ref = &value;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  /// Leaf bound to a parameter; its gradient accumulates straight into entry.grad.
  Var param(ParamEntry<T>& entry) {
    Node n;
    n.ref = &entry.value;
    n.param_grad = &entry.grad;
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  Var param(ParameterSet<T>& params, const std::string& name) { return param(params.at(name)); }

  Var push(Tensor<T> value, bool needs_grad, Backward back) {
    Node n;
    n.owned = std::move(value);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = node(v);
    return n.ref ? *n.ref : n.owned;
  }

  bool needs_grad(Var v) const { return node(v).needs_grad; }

  /// Gradient buffer of `v`, zero-initialised on first access.
  Tensor<T>& grad(Var v) {
    Node& n = node(v);
    if (n.param_grad) return *n.param_grad;
    if (n.grad.shape() != value(v).shape()) n.grad = Tensor<T>(value(v).shape());
    return n.grad;
  }

  bool has_grad(Var v) const {
    const Node& n = node(v);
    return n.param_grad != nullptr || !n.grad.empty();
  }

  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule once.
  void backward(Var loss) {
    if (nodes_.empty() || !loss.valid()) fail(ErrorCode::state, "backward called before any forward pass");
    if (backward_done_) fail(ErrorCode::state, "backward already ran on this tape");
    if (value(loss).size() != 1) fail(ErrorCode::shape, "backward needs a scalar loss");
    grad(loss)[0] = T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || !n.back || n.grad.empty()) continue;
      n.back(*this, Var{i});
    }
    backward_done_ = true;
  }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* ref = nullptr;
    Tensor<T>* param_grad = nullptr;
    Tensor<T> grad;
    bool needs_grad = false;
    Backward back;
  };

  Node& node(Var v) {
    if (v.id >= nodes_.size()) fail(ErrorCode::state, "variable does not belong to this tape");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) fail(ErrorCode::state, "variable does not belong to this tape");
    return nodes_[v.id];
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace wmc::nn
