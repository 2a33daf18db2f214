#pragma once

// Reverse-mode tape. Executing an op under a recording Graph appends one
// node; backward() walks the nodes in reverse execution order (a valid
// reverse topological order) exactly once.
//
// Accumulation contract: each backward pass computes its gradient into
// fresh zeroed buffers and then adds the pass result onto whatever was
// already in each leaf's grad with a single += per element. That makes
// backward(L1); backward(L2) bitwise equal to grad(L1) + grad(L2), which is
// the summation mechanism the width-interleaved trainer relies on.

#include <functional>
#include <unordered_map>
#include <utility>

#include "slnk/tensor.hpp"

namespace slnk {

template <typename T>
class Graph {
 public:
  using StoragePtr = typename Tensor<T>::StoragePtr;

  struct Node {
    std::vector<StoragePtr> inputs;
    StoragePtr out;
    std::function<void()> backward_fn;
  };

  bool recording() const { return recording_; }
  void set_recording(bool b) { recording_ = b; }

  void record(const Tensor<T>& out, std::vector<StoragePtr> inputs,
              std::function<void()> fn) {
    nodes_.push_back(Node{std::move(inputs), out.storage(), std::move(fn)});
  }

  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  void backward(const Tensor<T>& root) {
    if (root.size() != 1)
      throw ContractError(concat("backward root must be scalar, got ",
                                 shape_str(root.shape())));
    bool connected = false;
    for (const auto& n : nodes_)
      if (n.out == root.storage()) { connected = true; break; }
    if (!connected)
      throw ContractError("backward root is not connected to the recorded graph");

    // Stash pre-existing leaf grads, run the pass from zero.
    std::unordered_map<detail::Storage<T>*, std::vector<T>> saved;
    auto stash = [&](const StoragePtr& s) {
      if (!s->requires_grad) return;
      if (!s->grad.empty() && !saved.count(s.get()))
        saved.emplace(s.get(), std::move(s->grad));
      s->grad.assign(s->value.size(), T(0));
    };
    for (const auto& n : nodes_) {
      stash(n.out);
      for (const auto& in : n.inputs) stash(in);
    }

    root.storage()->grad[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
      it->backward_fn();

    for (auto& [ptr, old] : saved) {
      auto& g = ptr->grad;
      for (size_t i = 0; i < g.size(); ++i) g[i] += old[i];
    }
  }

 private:
  std::vector<Node> nodes_;
  bool recording_ = true;
};

// Scoped inference mode: ops executed inside do not record nodes.
template <typename T>
class NoGradGuard {
 public:
  explicit NoGradGuard(Graph<T>& g) : g_(g), prev_(g.recording()) {
    g_.set_recording(false);
  }
  ~NoGradGuard() { g_.set_recording(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Graph<T>& g_;
  bool prev_;
};

}  // namespace slnk
