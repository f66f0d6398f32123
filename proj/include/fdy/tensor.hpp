#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>

#include "fdy/errors.hpp"

namespace fdy {

using Index = Eigen::Index;

/// Extents of a rank-4 tensor laid out row-major as (batch, channel, time, frequency).
/// Lower-rank values are stored with unit extents in the unused axes.
struct Shape4 {
  Index b = 0;
  Index c = 0;
  Index t = 0;
  Index f = 0;

  constexpr Index size() const { return b * c * t * f; }
  constexpr Index operator[](int axis) const {
    switch (axis) {
      case 0: return b;
      case 1: return c;
      case 2: return t;
      default: return f;
    }
  }
  constexpr Index& operator[](int axis) {
    switch (axis) {
      case 0: return b;
      case 1: return c;
      case 2: return t;
      default: return f;
    }
  }
  constexpr bool operator==(const Shape4&) const = default;

  std::string str() const {
    return "[" + std::to_string(b) + "," + std::to_string(c) + "," + std::to_string(t) + "," +
           std::to_string(f) + "]";
  }
};

/// Product of extents before `axis`, at `axis`, and after it.
struct AxisSplit {
  Index outer;
  Index extent;
  Index inner;
};

inline AxisSplit split_axis(const Shape4& s, int axis) {
  AxisSplit out{1, s[axis], 1};
  for (int a = 0; a < axis; ++a) out.outer *= s[a];
  for (int a = axis + 1; a < 4; ++a) out.inner *= s[a];
  return out;
}

/// Dense rank-4 array over `Scalar` with Eigen storage.
template <class Scalar>
class Tensor4 {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor4() = default;
  explicit Tensor4(Shape4 shape) : shape_(shape), data_(Array::Zero(shape.size())) {}
  Tensor4(Shape4 shape, Scalar fill) : shape_(shape), data_(Array::Constant(shape.size(), fill)) {}
  Tensor4(Shape4 shape, std::initializer_list<Scalar> values) : shape_(shape), data_(shape.size()) {
    if (static_cast<Index>(values.size()) != shape.size())
      throw ShapeError("initializer has " + std::to_string(values.size()) + " values for shape " +
                       shape.str());
    Index i = 0;
    for (Scalar v : values) data_[i++] = v;
  }

  static Tensor4 zeros(Shape4 shape) { return Tensor4(shape); }

  const Shape4& shape() const { return shape_; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Index offset(Index b, Index c, Index t, Index f) const {
    return ((b * shape_.c + c) * shape_.t + t) * shape_.f + f;
  }
  Scalar& operator()(Index b, Index c, Index t, Index f) { return data_[offset(b, c, t, f)]; }
  Scalar operator()(Index b, Index c, Index t, Index f) const { return data_[offset(b, c, t, f)]; }
  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  /// Views the buffer as a row-major `rows x cols` matrix; rows*cols must equal size().
  MatrixMap matrix(Index rows, Index cols) { return MatrixMap(data_.data(), rows, cols); }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    return ConstMatrixMap(data_.data(), rows, cols);
  }

  /// Reinterprets the extents without touching the data.
  Tensor4 reshaped(Shape4 shape) const {
    if (shape.size() != shape_.size())
      throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    Tensor4 out = *this;
    out.shape_ = shape;
    return out;
  }

  bool all_finite() const { return data_.isFinite().all(); }

  template <class Other>
  Tensor4<Other> cast() const {
    Tensor4<Other> out(shape_);
    out.array() = data_.template cast<Other>();
    return out;
  }

 private:
  Shape4 shape_{};
  Array data_;
};

template <class Scalar>
Scalar max_abs_diff(const Tensor4<Scalar>& a, const Tensor4<Scalar>& b) {
  if (!(a.shape() == b.shape()))
    throw ShapeError("max_abs_diff: " + a.shape().str() + " vs " + b.shape().str());
  if (a.size() == 0) return Scalar(0);
  return (a.array() - b.array()).abs().maxCoeff();
}

}  // namespace fdy
