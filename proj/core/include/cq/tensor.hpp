#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "cq/error.hpp"

namespace cq {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major N-D tensor. Instantiated for float (training) and
// double (gradient checking).
template <class T>
struct TensorT {
  Shape shape;
  std::vector<T> data;
  // Leaves flagged trainable (or otherwise differentiated against) when
  // recorded on a ComputationGraph. Parameters override this to true.
  bool requires_grad = false;

  TensorT() = default;

  explicit TensorT(Shape s, T fill = T(0)) : shape(std::move(s)) {
    validate_shape();
    data.assign(shape_numel(shape), fill);
  }

  TensorT(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    validate_shape();
    if (data.size() != shape_numel(shape)) {
      fail(ErrorCode::kShape, "tensor data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_to_string(shape));
    }
  }

  static TensorT scalar(T v) { return TensorT({1}, std::vector<T>{v}); }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  std::size_t extent(std::size_t axis) const { return shape.at(axis); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  T& at(std::initializer_list<std::size_t> idx) { return data[flat_index(idx)]; }
  const T& at(std::initializer_list<std::size_t> idx) const { return data[flat_index(idx)]; }

  std::size_t flat_index(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape.size()) {
      fail(ErrorCode::kShape, "index rank " + std::to_string(idx.size()) +
                                  " does not match tensor rank " + std::to_string(shape.size()));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
      if (i >= shape[axis]) fail(ErrorCode::kShape, "index out of bounds on axis " + std::to_string(axis));
      flat = flat * shape[axis] + i;
      ++axis;
    }
    return flat;
  }

  bool all_finite() const {
    for (const T& v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  bool same_shape(const TensorT& other) const { return shape == other.shape; }

  TensorT reshaped(Shape target) const {
    if (shape_numel(target) != numel()) {
      fail(ErrorCode::kShape, "cannot reshape " + shape_to_string(shape) + " to " + shape_to_string(target));
    }
    TensorT out(std::move(target), data);
    out.requires_grad = requires_grad;
    return out;
  }

  template <class U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.requires_grad = requires_grad;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }

 private:
  void validate_shape() const {
    if (shape.empty()) fail(ErrorCode::kShape, "tensor shape must have at least one axis");
    for (std::size_t e : shape) {
      if (e == 0) fail(ErrorCode::kShape, "tensor extent must be positive, got shape " + shape_to_string(shape));
    }
  }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

}  // namespace cq
