#pragma once

// Tensor<T>: dense n-dimensional array of 32- or 64-bit floats with an
// optional gradient buffer. Copying a Tensor copies the handle; the storage
// is shared. float is the training type, double exists for gradient checks.

#include <algorithm>
#include <cassert>
#include <memory>

#include "slnk/common.hpp"

namespace slnk {

namespace detail {

template <typename T>
struct Storage {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using StoragePtr = std::shared_ptr<detail::Storage<T>>;

  Tensor() = default;
  explicit Tensor(StoragePtr s) : s_(std::move(s)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto s = std::make_shared<detail::Storage<T>>();
    s->value.assign(static_cast<size_t>(numel(shape)), T(0));
    s->shape = std::move(shape);
    s->requires_grad = requires_grad;
    return Tensor(std::move(s));
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.s_->value.begin(), t.s_->value.end(), v);
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (numel(shape) != static_cast<int64_t>(data.size()))
      throw ShapeError(concat("tensor data size ", data.size(),
                              " does not match shape ", shape_str(shape)));
    auto s = std::make_shared<detail::Storage<T>>();
    s->shape = std::move(shape);
    s->value = std::move(data);
    s->requires_grad = requires_grad;
    return Tensor(std::move(s));
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  int64_t dim(size_t i) const { return s_->shape[i]; }
  size_t ndim() const { return s_->shape.size(); }
  int64_t size() const { return static_cast<int64_t>(s_->value.size()); }

  T* data() { return s_->value.data(); }
  const T* data() const { return s_->value.data(); }
  std::vector<T>& values() { return s_->value; }
  const std::vector<T>& values() const { return s_->value; }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool b) { s_->requires_grad = b; }

  bool has_grad() const { return !s_->grad.empty(); }

  // Lazily allocated, zero-filled.
  std::vector<T>& grad() {
    if (s_->grad.empty()) s_->grad.assign(s_->value.size(), T(0));
    return s_->grad;
  }
  const std::vector<T>& grad_view() const { return s_->grad; }

  void zero_grad() {
    if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
  }

  T item() const {
    if (size() != 1)
      throw ContractError(concat("item() on non-scalar tensor ", shape_str(shape())));
    return s_->value[0];
  }

  // Deep copy of values (grad not copied).
  Tensor clone() const {
    Tensor t = zeros(shape(), requires_grad());
    t.s_->value = s_->value;
    return t;
  }

  StoragePtr storage() const { return s_; }

  bool same_storage(const Tensor& o) const { return s_ == o.s_; }

  bool all_finite() const {
    for (T v : s_->value)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  StoragePtr s_;
};

#ifndef NDEBUG
#define SLNK_DEBUG_CHECK_FINITE(t, what)                                       \
  do {                                                                         \
    if (!(t).all_finite()) throw NumericError(concat("non-finite values after ", what)); \
  } while (0)
#else
#define SLNK_DEBUG_CHECK_FINITE(t, what) (void)0
#endif

}  // namespace slnk
