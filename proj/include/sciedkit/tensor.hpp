#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sciedkit/errors.hpp"

namespace sciedkit {

inline size_t numel(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

template <typename T>
struct TensorData {
  std::vector<size_t> shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until touched by backward
  bool requires_grad = false;
};

// Value-semantic handle over shared dense storage. Copies alias the same
// buffer; all ops allocate fresh outputs, nothing mutates in place except
// parameter updates in the optimizer.
template <typename T>
class Tensor {
 public:
  Tensor() : d_(std::make_shared<TensorData<T>>()) {}

  static Tensor zeros(std::vector<size_t> shape, bool requires_grad = false) {
    Tensor t;
    t.d_->values.assign(numel(shape), T(0));
    t.d_->shape = std::move(shape);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(std::vector<size_t> shape, T value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.d_->values) v = value;
    return t;
  }

  static Tensor from(std::vector<size_t> shape, std::vector<T> values,
                     bool requires_grad = false) {
    if (numel(shape) != values.size()) {
      throw InputError("tensor shape " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    }
    Tensor t;
    t.d_->shape = std::move(shape);
    t.d_->values = std::move(values);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  const std::vector<size_t>& shape() const { return d_->shape; }
  size_t ndim() const { return d_->shape.size(); }
  size_t dim(size_t i) const { return d_->shape[i]; }
  size_t size() const { return d_->values.size(); }

  T* data() { return d_->values.data(); }
  const T* data() const { return d_->values.data(); }
  std::vector<T>& values() { return d_->values; }
  const std::vector<T>& values() const { return d_->values; }
  T at(size_t i) const { return d_->values[i]; }

  T item() const {
    if (size() != 1) {
      throw InputError("item() requires a scalar tensor, got shape " + shape_str(shape()));
    }
    return d_->values[0];
  }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool rg) { d_->requires_grad = rg; }

  bool has_grad() const { return !d_->grad.empty(); }

  // Lazily allocated zero-initialized gradient buffer.
  std::vector<T>& grad_buffer() {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), T(0));
    return d_->grad;
  }

  // Gradient values; zeros if backward never reached this tensor.
  std::vector<T> grad() const {
    if (d_->grad.empty()) return std::vector<T>(d_->values.size(), T(0));
    return d_->grad;
  }

  void zero_grad() { d_->grad.clear(); }

  Tensor detached_copy() const {
    Tensor t;
    t.d_->shape = d_->shape;
    t.d_->values = d_->values;
    t.d_->requires_grad = false;
    return t;
  }

  const std::shared_ptr<TensorData<T>>& ptr() const { return d_; }

 private:
  std::shared_ptr<TensorData<T>> d_;
};

// Record of executed operations in execution order (which is a valid
// topological order, since ops run eagerly). One backward() pass visits
// each record exactly once, in reverse; a second pass is an error.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> backward_step) {
    steps_.push_back(std::move(backward_step));
  }

  size_t size() const { return steps_.size(); }
  bool consumed() const { return consumed_; }

  void run_backward(const Tensor<T>& loss) {
    if (consumed_) {
      throw InputError("backward called twice on the same tape; record a fresh tape instead");
    }
    if (loss.size() != 1) {
      throw InputError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    consumed_ = true;
    const_cast<Tensor<T>&>(loss).grad_buffer()[0] = T(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> steps_;
  bool consumed_ = false;
};

template <typename T>
void backward(Tape<T>& tape, const Tensor<T>& loss) {
  tape.run_backward(loss);
}

}  // namespace sciedkit
