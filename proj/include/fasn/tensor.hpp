#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fasn/errors.hpp"

namespace fasn {

/// (batch, channels, rows, cols). Every component is at least 1.
struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t numel() const noexcept { return n * c * h * w; }
  std::size_t plane() const noexcept { return h * w; }
  bool is_scalar() const noexcept { return numel() == 1; }

  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Validates every component is >= 1 and the element count fits in size_t.
Shape make_shape(std::size_t n, std::size_t c, std::size_t h, std::size_t w);

enum class Mode { train, eval };

/// Shared handle to a rank-4 array with optional gradient storage.
///
/// Copies of a handle alias the same storage. Values produced by operations
/// are never written again; only parameters are updated in place (by the
/// optimizer or by explicit initialization through mutable_data()).
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  static BasicTensor full(Shape shape, T value, bool requires_grad = false) {
    shape = make_shape(shape.n, shape.c, shape.h, shape.w);
    BasicTensor t;
    t.storage_ = std::make_shared<Storage>();
    t.storage_->shape = shape;
    t.storage_->data.assign(shape.numel(), value);
    t.set_requires_grad(requires_grad);
    return t;
  }

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    return full(shape, T(0), requires_grad);
  }

  static BasicTensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    shape = make_shape(shape.n, shape.c, shape.h, shape.w);
    if (data.size() != shape.numel()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + to_string(shape));
    }
    BasicTensor t;
    t.storage_ = std::make_shared<Storage>();
    t.storage_->shape = shape;
    t.storage_->data = std::move(data);
    t.set_requires_grad(requires_grad);
    return t;
  }

  bool defined() const noexcept { return storage_ != nullptr; }
  explicit operator bool() const noexcept { return defined(); }

  const Shape& shape() const { return checked().shape; }
  std::size_t numel() const { return checked().data.size(); }

  std::span<const T> data() const { return checked().data; }
  std::span<T> mutable_data() { return checked().data; }

  T item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + to_string(shape()));
    return checked().data[0];
  }

  T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    const Shape& s = shape();
    return checked().data[((n * s.c + c) * s.h + h) * s.w + w];
  }

  bool requires_grad() const { return defined() && storage_->requires_grad; }

  /// Allocates a zeroed gradient buffer when enabling; drops it when disabling.
  void set_requires_grad(bool on) {
    Storage& s = checked();
    s.requires_grad = on;
    if (on) {
      s.grad.assign(s.data.size(), T(0));
    } else {
      s.grad.clear();
      s.grad.shrink_to_fit();
    }
  }

  std::span<const T> grad() const { return checked().grad; }
  std::span<T> mutable_grad() { return checked().grad; }

  void zero_grad() {
    auto& g = checked().grad;
    std::fill(g.begin(), g.end(), T(0));
  }

  /// Deep copy of shape and data; the copy carries no gradient.
  BasicTensor clone() const { return from_data(shape(), checked().data); }

  /// Identity of the underlying storage.
  const void* id() const noexcept { return storage_.get(); }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };

  Storage& checked() const {
    if (!storage_) throw ContractError("use of an empty tensor handle");
    return *storage_;
  }

  std::shared_ptr<Storage> storage_;
};

using Tensor = BasicTensor<float>;

template <typename To, typename From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& x) {
  auto src = x.data();
  std::vector<To> out(src.begin(), src.end());
  return BasicTensor<To>::from_data(x.shape(), std::move(out));
}

/// Throws NumericError naming `op` when any value is NaN or infinite.
template <typename T>
void ensure_finite(std::span<const T> values, std::string_view op) {
  for (T v : values) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + " produced a non-finite value");
    }
  }
}

/// Ordered record of differentiable operations executed during one forward pass.
///
/// Operations append a backward rule whenever one of their inputs carries a
/// gradient. backward() replays the rules in reverse order exactly once; a
/// consumed tape must be reset() before it records a new forward pass.
template <typename T>
class BasicTape {
 public:
  explicit BasicTape(bool recording = true) : recording_(recording) {}

  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  bool recording() const noexcept { return recording_; }
  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return rules_.size(); }

  /// True when an op over these inputs must produce a gradient-carrying output.
  bool tracks(std::initializer_list<const BasicTensor<T>*> inputs) const {
    if (!recording_) return false;
    for (const auto* t : inputs) {
      if (t != nullptr && t->requires_grad()) return true;
    }
    return false;
  }

  bool tracks(std::span<const BasicTensor<T>> inputs) const {
    if (!recording_) return false;
    for (const auto& t : inputs) {
      if (t.requires_grad()) return true;
    }
    return false;
  }

  void record(const BasicTensor<T>& output, std::function<void()> rule) {
    if (consumed_) throw ContractError("recording onto a consumed tape; call reset() first");
    rules_.push_back(std::move(rule));
    outputs_.insert(output.id());
  }

  void backward(BasicTensor<T> loss) {
    if (consumed_) throw ContractError("backward() called twice on the same forward pass");
    if (!loss.defined() || loss.shape() != Shape{}) {
      throw ContractError("backward() needs a (1,1,1,1) loss");
    }
    if (!loss.requires_grad() || outputs_.count(loss.id()) == 0) {
      throw ContractError("loss was not produced on this tape");
    }
    consumed_ = true;
    loss.mutable_grad()[0] = T(1);
    for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
    // Intermediate tensors stay alive only as long as the rules reference them.
    rules_.clear();
    outputs_.clear();
  }

  void reset() {
    rules_.clear();
    outputs_.clear();
    consumed_ = false;
  }

 private:
  std::vector<std::function<void()>> rules_;
  std::unordered_set<const void*> outputs_;
  bool recording_ = true;
  bool consumed_ = false;
};

using Tape = BasicTape<float>;

}  // namespace fasn
