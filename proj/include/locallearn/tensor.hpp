// Copyright (c) 2026, the locallearn authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense tensors.
//
// A Tensor is a shared handle to a dense buffer plus an optional producing
// operation. backward() walks the producing-op graph in reverse topological
// order and accumulates gradients into leaf tensors (parameters). Gradients
// sum across backward calls until explicitly cleared, so a set of local
// losses can be backwarded one after another and the per-parameter gradient
// is the sum of the per-loss gradients.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "locallearn/common.hpp"

namespace locallearn {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s[i]);
    if (i + 1 < s.size()) out += ",";
  }
  return out + ")";
}

// ---------------------------------------------------------------------------
// Live-byte accounting for all tensor buffers.
// ---------------------------------------------------------------------------

namespace memstat {

inline std::atomic<int64_t>& live_counter() {
  static std::atomic<int64_t> v{0};
  return v;
}

inline std::atomic<int64_t>& window_peak_counter() {
  static std::atomic<int64_t> v{0};
  return v;
}

inline void add(int64_t bytes) {
  int64_t cur = live_counter().fetch_add(bytes) + bytes;
  int64_t prev = window_peak_counter().load();
  while (cur > prev && !window_peak_counter().compare_exchange_weak(prev, cur)) {
  }
}

inline void sub(int64_t bytes) { live_counter().fetch_sub(bytes); }

inline int64_t live_bytes() { return live_counter().load(); }

/// Resets the window high-water mark to the current live count and returns
/// the current live count (the window baseline).
inline int64_t begin_window() {
  int64_t cur = live_counter().load();
  window_peak_counter().store(cur);
  return cur;
}

inline int64_t window_peak() { return window_peak_counter().load(); }

}  // namespace memstat

template <typename T>
class Buffer {
 public:
  explicit Buffer(int64_t n) : v_(static_cast<size_t>(n)) { memstat::add(bytes()); }
  Buffer(const Buffer&) = delete;
  Buffer& operator=(const Buffer&) = delete;
  ~Buffer() { memstat::sub(bytes()); }

  T* data() { return v_.data(); }
  const T* data() const { return v_.data(); }
  int64_t size() const { return static_cast<int64_t>(v_.size()); }
  int64_t bytes() const { return size() * static_cast<int64_t>(sizeof(T)); }

 private:
  std::vector<T> v_;
};

template <typename T>
class Tensor;

template <typename T>
class BackwardPass;

/// A recorded operation: the inputs it consumed and how to turn the output
/// gradient into input gradients. Input grads are returned aligned with
/// `inputs`; an undefined Tensor means "no gradient for this input".
template <typename T>
struct OpNode {
  const char* name = "";
  std::vector<Tensor<T>> inputs;
  std::function<std::vector<Tensor<T>>(const Tensor<T>& grad_out, BackwardPass<T>& pass)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::shared_ptr<Buffer<T>> data;
  bool requires_grad = false;
  std::shared_ptr<OpNode<T>> node;   // null for leaves and detached tensors
  std::shared_ptr<Buffer<T>> grad;   // persistent, leaves only
};

namespace detail {
inline thread_local bool grad_enabled = true;
}

/// Disables graph recording in scope (forward passes that will never be
/// differentiated, or whose backward is handled by a custom node).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled; }

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<T>>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::make_shared<Buffer<T>>(shape_numel(t.impl_->shape));
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, T value) {
    Tensor t = zeros(std::move(shape));
    std::fill_n(t.data(), t.numel(), value);
    return t;
  }

  static Tensor scalar(T value) { return full({1}, value); }

  static Tensor from(Shape shape, const std::vector<T>& values, bool requires_grad = false) {
    check(shape_numel(shape) == static_cast<int64_t>(values.size()),
          "tensor data length does not match shape " + shape_str(shape));
    Tensor t = zeros(std::move(shape), requires_grad);
    std::copy(values.begin(), values.end(), t.data());
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  size_t ndim() const { return impl_->shape.size(); }
  int64_t dim(size_t i) const { return impl_->shape[i]; }
  int64_t numel() const { return impl_->data->size(); }

  T* data() { return impl_->data->data(); }
  const T* data() const { return impl_->data->data(); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  bool has_grad() const { return impl_->grad != nullptr; }

  /// Persistent gradient buffer (allocated zero on first access).
  T* grad_data() {
    if (!impl_->grad) impl_->grad = std::make_shared<Buffer<T>>(numel());
    return impl_->grad->data();
  }
  const T* grad_data() const { return impl_->grad->data(); }

  void zero_grad() { impl_->grad.reset(); }

  std::shared_ptr<OpNode<T>> node() const { return impl_->node; }
  TensorImpl<T>* impl() const { return impl_.get(); }

  /// Shares the value buffer, drops the graph. Backward through consumers of
  /// the result never reaches producers of this tensor.
  Tensor detach() const {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<T>>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    t.impl_->requires_grad = false;
    return t;
  }

  /// Deep value copy with no graph.
  Tensor clone() const {
    Tensor t = zeros(impl_->shape);
    std::copy_n(data(), numel(), t.data());
    return t;
  }

  T item() const {
    check(numel() == 1, "item() requires a single-element tensor, got " + shape_str(shape()));
    return data()[0];
  }

  /// Builds an op output. Records the graph only when grad is enabled and at
  /// least one input requires it.
  static Tensor make_op(Shape shape, const char* name, std::vector<Tensor<T>> inputs,
                        std::function<std::vector<Tensor<T>>(const Tensor<T>&, BackwardPass<T>&)> backward_fn) {
    bool needs = grad_enabled();
    if (needs) {
      bool any = false;
      for (const auto& in : inputs) any = any || in.requires_grad();
      needs = any;
    }
    Tensor t = zeros(std::move(shape), needs);
    if (needs) {
      auto node = std::make_shared<OpNode<T>>();
      node->name = name;
      node->inputs = std::move(inputs);
      node->backward = std::move(backward_fn);
      t.impl_->node = std::move(node);
    }
    return t;
  }

  /// Same-shape op output that shares the input's value buffer (reshape).
  static Tensor make_view(Shape shape, const char* name, const Tensor& input,
                          std::function<std::vector<Tensor<T>>(const Tensor<T>&, BackwardPass<T>&)> backward_fn) {
    check(shape_numel(shape) == input.numel(), "view must preserve element count");
    bool needs = grad_enabled() && input.requires_grad();
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<T>>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = input.impl_->data;
    t.impl_->requires_grad = needs;
    if (needs) {
      auto node = std::make_shared<OpNode<T>>();
      node->name = name;
      node->inputs = {input};
      node->backward = std::move(backward_fn);
      t.impl_->node = std::move(node);
    }
    return t;
  }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

/// Per-loss gradient destination used by concurrent schedules: gradients land
/// in this map instead of the leaves' persistent buffers, and are merged into
/// the leaves later in a canonical order.
template <typename T>
struct GradSink {
  std::unordered_map<const TensorImpl<T>*, Tensor<T>> grads;
};

template <typename T>
class BackwardPass {
 public:
  explicit BackwardPass(GradSink<T>* sink) : sink_(sink) {}

  void accumulate_leaf(Tensor<T>& leaf, const Tensor<T>& grad) {
    check(grad.numel() == leaf.numel(), "gradient shape mismatch for leaf");
    if (sink_ != nullptr) {
      auto it = sink_->grads.find(leaf.impl());
      if (it == sink_->grads.end()) {
        sink_->grads.emplace(leaf.impl(), grad.clone());
      } else {
        T* dst = it->second.data();
        const T* src = grad.data();
        for (int64_t i = 0; i < grad.numel(); ++i) dst[i] += src[i];
      }
    } else {
      T* dst = leaf.grad_data();
      const T* src = grad.data();
      for (int64_t i = 0; i < grad.numel(); ++i) dst[i] += src[i];
    }
  }

  /// Removes and returns the gradient accumulated for `leaf` during this
  /// pass. Used by checkpointing ops that own throwaway leaves.
  Tensor<T> take_leaf_grad(Tensor<T>& leaf) {
    if (sink_ != nullptr) {
      auto it = sink_->grads.find(leaf.impl());
      if (it == sink_->grads.end()) return {};
      Tensor<T> g = it->second;
      sink_->grads.erase(it);
      return g;
    }
    if (!leaf.has_grad()) return {};
    Tensor<T> g = Tensor<T>::zeros(leaf.shape());
    std::copy_n(leaf.grad_data(), leaf.numel(), g.data());
    leaf.zero_grad();
    return g;
  }

  /// Runs reverse-mode accumulation from `root` seeded with `seed_grad`
  /// (same shape as root). Re-entrant: op backwards may run nested passes.
  void run(const Tensor<T>& root, const Tensor<T>& seed_grad) {
    if (!root.requires_grad()) return;
    if (!root.node()) {
      Tensor<T> r = root;
      accumulate_leaf(r, seed_grad);
      return;
    }

    // Post-order DFS over producing ops; reversed it yields consumers first.
    std::vector<TensorImpl<T>*> order;
    std::unordered_map<TensorImpl<T>*, Tensor<T>> holder;  // keeps impls alive during the pass
    {
      std::vector<std::pair<Tensor<T>, size_t>> stack;
      std::unordered_map<TensorImpl<T>*, bool> visited;
      stack.emplace_back(root, 0);
      visited[root.impl()] = true;
      while (!stack.empty()) {
        // The node's input vector lives on the heap, so references into it
        // survive stack growth; references into `stack` itself do not.
        const auto& ins = stack.back().first.node()->inputs;
        size_t child = stack.back().second;
        if (child < ins.size()) {
          stack.back().second = child + 1;
          const Tensor<T>& in = ins[child];
          if (in.requires_grad() && in.node() && !visited[in.impl()]) {
            visited[in.impl()] = true;
            stack.emplace_back(in, 0);
          }
          continue;
        }
        order.push_back(stack.back().first.impl());
        holder.emplace(stack.back().first.impl(), stack.back().first);
        stack.pop_back();
      }
    }

    std::unordered_map<TensorImpl<T>*, Tensor<T>> pending;
    pending[root.impl()] = seed_grad;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorImpl<T>* impl = *it;
      auto pit = pending.find(impl);
      if (pit == pending.end()) continue;  // not reached by differentiable path
      Tensor<T> gout = pit->second;
      pending.erase(pit);

      Tensor<T> out = holder.at(impl);
      auto node = out.node();
      std::vector<Tensor<T>> in_grads = node->backward(gout, *this);
      check(in_grads.size() == node->inputs.size(),
            std::string("op '") + node->name + "' returned wrong number of input grads");
      for (size_t i = 0; i < in_grads.size(); ++i) {
        Tensor<T>& in = node->inputs[i];
        Tensor<T>& g = in_grads[i];
        if (!g.defined() || !in.requires_grad()) continue;
        if (in.node()) {
          auto existing = pending.find(in.impl());
          if (existing == pending.end()) {
            pending.emplace(in.impl(), g);
          } else {
            T* dst = existing->second.data();
            const T* src = g.data();
            for (int64_t j = 0; j < g.numel(); ++j) dst[j] += src[j];
          }
        } else {
          accumulate_leaf(in, g);
        }
      }
    }
  }

 private:
  GradSink<T>* sink_;
};

/// Accumulates d(seed * loss)/d(leaf) into every reachable leaf that requires
/// grad. Persistent leaf gradients sum across calls; sgd_step clears them.
template <typename T>
void backward(const Tensor<T>& loss, T seed = T(1), GradSink<T>* sink = nullptr) {
  check(loss.defined() && loss.numel() == 1, "backward requires a scalar loss");
  BackwardPass<T> pass(sink);
  pass.run(loss, Tensor<T>::scalar(seed));
}

/// detach as a free function, mirroring the tensor op vocabulary.
template <typename T>
Tensor<T> detach(const Tensor<T>& x) {
  return x.detach();
}

}  // namespace locallearn
