#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prism/error.hpp"

namespace prism {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major array with shape metadata.
///
/// The scalar is a template parameter so the same numeric code runs in
/// float (storage, training) and double (finite-difference oracles). The
/// element count always equals the product of the extents.
template <typename Scalar>
class BasicTensor {
 public:
  using value_type = Scalar;
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  BasicTensor() : shape_{0} {}

  explicit BasicTensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(checked_numel(shape_)), fill) {}

  BasicTensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_numel(shape_) != static_cast<Index>(data_.size())) {
      throw ShapeError("tensor shape " + to_string(shape_) + " holds " + std::to_string(numel(shape_)) +
                       " elements but " + std::to_string(data_.size()) + " were given");
    }
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape), Scalar(0)); }
  static BasicTensor ones(Shape shape) { return BasicTensor(std::move(shape), Scalar(1)); }
  static BasicTensor scalar(Scalar v) { return BasicTensor(Shape{1}, v); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> span() { return data_; }
  std::span<const Scalar> span() const { return data_; }
  const std::vector<Scalar>& vector() const { return data_; }

  Scalar& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  const Scalar& operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  Eigen::Map<Array> array() { return Eigen::Map<Array>(data_.data(), size()); }
  Eigen::Map<const Array> array() const { return Eigen::Map<const Array>(data_.data(), size()); }

  // Single-element value; throws unless size() == 1.
  Scalar item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
    return data_[0];
  }

  BasicTensor reshaped(Shape shape) const {
    if (checked_numel(shape) != size()) {
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    return BasicTensor(std::move(shape), data_);
  }

  template <typename Other>
  BasicTensor<Other> cast() const {
    std::vector<Other> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](Scalar v) { return static_cast<Other>(v); });
    return BasicTensor<Other>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static Index checked_numel(const Shape& shape) {
    for (Index e : shape) {
      if (e <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
    }
    return numel(shape);
  }

  Shape shape_;
  std::vector<Scalar> data_;
};

using Tensor = BasicTensor<float>;

// Inner product accumulated in double.
template <typename Scalar>
double dot(std::span<const Scalar> a, std::span<const Scalar> b) {
  if (a.size() != b.size()) throw ShapeError("dot of vectors with different lengths");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

template <typename Scalar>
double norm(std::span<const Scalar> a) {
  return std::sqrt(dot(a, a));
}

}  // namespace prism
