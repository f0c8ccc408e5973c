// Copyright (c) 2026 The dinat-ir authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major N-D tensor with an optional gradient buffer, plus the
// reverse-mode tape. A Tensor is a cheap shared handle; ops allocate fresh
// outputs and record a backward closure on the tape when gradients are
// being tracked.

#pragma once

#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "dinat/common.hpp"

namespace dinat {

inline std::string shape_str(const std::vector<int64_t>& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

template <typename T>
struct TensorPayload {
  std::vector<int64_t> shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty unless requires_grad
  bool requires_grad = false;
};

template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape, T fill = T(0)) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d < 1) throw DimensionError("tensor extent must be >= 1, got shape " + shape_str(shape));
      n *= d;
    }
    p_ = std::make_shared<TensorPayload<T>>();
    p_->shape = std::move(shape);
    p_->data.assign(static_cast<size_t>(n), fill);
  }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int64_t> shape, T v) { return Tensor(std::move(shape), v); }

  static Tensor from(std::vector<int64_t> shape, std::vector<T> values) {
    Tensor t(std::move(shape));
    if (values.size() != t.p_->data.size())
      throw DimensionError("value count does not match shape " + shape_str(t.shape()));
    t.p_->data = std::move(values);
    return t;
  }

  bool defined() const { return static_cast<bool>(p_); }

  const std::vector<int64_t>& shape() const { return payload().shape; }
  int rank() const { return static_cast<int>(payload().shape.size()); }
  int64_t dim(int i) const { return payload().shape.at(static_cast<size_t>(i)); }

  int64_t numel() const { return static_cast<int64_t>(payload().data.size()); }

  T* data() { return payload().data.data(); }
  const T* data() const { return payload().data.data(); }

  bool requires_grad() const { return defined() && p_->requires_grad; }

  void set_requires_grad(bool on) {
    auto& p = payload();
    p.requires_grad = on;
    if (on) {
      p.grad.assign(p.data.size(), T(0));
    } else {
      p.grad.clear();
      p.grad.shrink_to_fit();
    }
  }

  T* grad() { return payload().requires_grad ? payload().grad.data() : nullptr; }
  const T* grad() const { return payload().requires_grad ? payload().grad.data() : nullptr; }

  void zero_grad() {
    auto& p = payload();
    if (p.requires_grad) p.grad.assign(p.data.size(), T(0));
  }

  bool same_shape(const Tensor& o) const { return defined() && o.defined() && shape() == o.shape(); }
  bool shares_storage(const Tensor& o) const { return p_ == o.p_; }

  // Deep copy of values; gradient state is not copied.
  Tensor clone() const {
    Tensor t;
    t.p_ = std::make_shared<TensorPayload<T>>();
    t.p_->shape = payload().shape;
    t.p_->data = payload().data;
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> t(shape());
    const T* src = data();
    U* dst = t.data();
    for (int64_t i = 0; i < numel(); ++i) dst[i] = static_cast<U>(src[i]);
    return t;
  }

  template <typename... Ix>
  T& at(Ix... ix) {
    return payload().data[static_cast<size_t>(offset_of(ix...))];
  }

  template <typename... Ix>
  T at(Ix... ix) const {
    return payload().data[static_cast<size_t>(offset_of(ix...))];
  }

  template <typename... Ix>
  int64_t offset_of(Ix... ix) const {
    const auto& s = payload().shape;
    constexpr size_t n = sizeof...(Ix);
    if (n != s.size())
      throw DimensionError("index rank mismatch for shape " + shape_str(s));
    int64_t idx[n] = {static_cast<int64_t>(ix)...};
    int64_t off = 0;
    for (size_t i = 0; i < n; ++i) {
      if (idx[i] < 0 || idx[i] >= s[i])
        throw DimensionError("index out of bounds for shape " + shape_str(s));
      off = off * s[i] + idx[i];
    }
    return off;
  }

  std::vector<int64_t> strides() const {
    const auto& s = payload().shape;
    std::vector<int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
  }

 private:
  TensorPayload<T>& payload() {
    if (!p_) throw ContractError("use of undefined tensor");
    return *p_;
  }
  const TensorPayload<T>& payload() const {
    if (!p_) throw ContractError("use of undefined tensor");
    return *p_;
  }

  std::shared_ptr<TensorPayload<T>> p_;
};

// Reverse-mode tape: closures recorded in forward execution order, replayed
// in reverse. Before each replay the grads of recorded op outputs are reset,
// so leaf gradients accumulate additively across backward calls while
// intermediates stay exact. Single-writer: a Tape is not shared across
// threads.
template <typename T>
class Tape {
 public:
  void record(const Tensor<T>& output, std::function<void()> backward_fn) {
    nodes_.push_back(Node{output, std::move(backward_fn)});
  }

  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  void backward(Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1)
      throw ContractError("backward: loss must be a scalar tensor");
    if (!loss.requires_grad())
      throw ContractError("backward: loss does not track gradients");
    for (auto& n : nodes_) n.output.zero_grad();
    loss.grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
  }

 private:
  struct Node {
    Tensor<T> output;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
};

// Named parameter: a tensor registered under a stable dotted path. The
// gradient lives in the tensor's grad slot.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
};

template <typename T>
void fill_normal(Tensor<T>& t, Rng& rng, double mean = 0.0, double stddev = 1.0) {
  T* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<T>(rng.normal(mean, stddev));
}

template <typename T>
void fill_uniform(Tensor<T>& t, Rng& rng, double lo = 0.0, double hi = 1.0) {
  T* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<T>(rng.uniform(lo, hi));
}

}  // namespace dinat
