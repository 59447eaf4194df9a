#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <utility>

#include "seer/common.hpp"

namespace seer {

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // sized like value when tracked, empty otherwise
  bool tracked = false;
};

// Dense row-major n-dimensional array. A rank-0 tensor is a scalar with one
// element. Copies are shallow: tensors are handles onto shared storage, which
// is what lets tape closures see gradients accumulated later.
template <typename T>
class BasicTensor {
 public:
  BasicTensor() : d_(std::make_shared<TensorStorage<T>>()) { d_->value.assign(1, T(0)); }

  explicit BasicTensor(Shape shape, T fill = T(0))
      : d_(std::make_shared<TensorStorage<T>>()) {
    d_->shape = std::move(shape);
    d_->value.assign(shape_numel(d_->shape), fill);
  }

  BasicTensor(Shape shape, std::vector<T> values)
      : d_(std::make_shared<TensorStorage<T>>()) {
    d_->shape = std::move(shape);
    if (values.size() != shape_numel(d_->shape))
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(d_->shape));
    d_->value = std::move(values);
  }

  static BasicTensor scalar(T v) {
    BasicTensor t;
    t.d_->value[0] = v;
    return t;
  }

  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t numel() const { return d_->value.size(); }
  std::size_t extent(std::size_t axis) const { return d_->shape[axis]; }

  std::vector<T>& values() { return d_->value; }
  const std::vector<T>& values() const { return d_->value; }
  std::vector<T>& grad() {
    if (!d_->tracked) throw ContractError("grad requested on untracked tensor");
    return d_->grad;
  }
  const std::vector<T>& grad() const {
    if (!d_->tracked) throw ContractError("grad requested on untracked tensor");
    return d_->grad;
  }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor with " + std::to_string(numel()) + " elements");
    return d_->value[0];
  }

  T operator[](std::size_t flat) const { return d_->value[flat]; }

  bool tracked() const { return d_->tracked; }

  BasicTensor& set_tracked() {
    if (!d_->tracked) {
      d_->tracked = true;
      d_->grad.assign(d_->value.size(), T(0));
    }
    return *this;
  }

  void zero_grad() {
    if (d_->tracked) d_->grad.assign(d_->value.size(), T(0));
  }

  // Untracked value copy; use to stop gradient flow.
  BasicTensor detach() const {
    BasicTensor t;
    t.d_->shape = d_->shape;
    t.d_->value = d_->value;
    return t;
  }

  bool all_finite() const {
    for (T v : d_->value)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  void check_finite(const char* what) const {
    if (!all_finite()) throw NumericError(std::string("non-finite values in ") + what);
  }

  std::shared_ptr<TensorStorage<T>> storage() const { return d_; }

  bool same_storage(const BasicTensor& other) const { return d_ == other.d_; }

 private:
  std::shared_ptr<TensorStorage<T>> d_;
};

using Tensor = BasicTensor<float>;

// Reverse-mode tape: a flat record of backward closures in execution order.
// backward() replays them exactly once, newest first. The active tape is a
// thread-local; ops record onto it only while one is installed.
template <typename T>
class Tape {
 public:
  static Tape*& current() {
    thread_local Tape* t = nullptr;
    return t;
  }

  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

  std::size_t node_count() const { return nodes_.size(); }

  void backward(const BasicTensor<T>& loss) {
    if (spent_) throw ContractError("backward called twice without reset");
    if (loss.numel() != 1) throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    if (!loss.tracked()) throw ContractError("backward on untracked loss");
    spent_ = true;
    loss.storage()->grad[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void reset() {
    nodes_.clear();
    spent_ = false;
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool spent_ = false;
};

// RAII scope installing a tape (or nullptr to disable recording).
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>* t) : prev_(Tape<T>::current()) { Tape<T>::current() = t; }
  ~TapeScope() { Tape<T>::current() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

template <typename T>
inline bool taping_any(std::initializer_list<const BasicTensor<T>*> ins) {
  if (Tape<T>::current() == nullptr) return false;
  for (const BasicTensor<T>* t : ins)
    if (t->tracked()) return true;
  return false;
}

}  // namespace seer
