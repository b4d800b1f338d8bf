#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace actlab {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when an operation on finite inputs would produce a non-finite value.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

/// Dense row-major tensor of 64-bit reals. Rank 0 with one element is a scalar.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    for (std::size_t dim : shape)
      if (dim == 0) throw ShapeError("zero dimension in shape " + shape_str(shape));
    if (data.size() != shape_numel(shape))
      throw ShapeError("data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
  }

  static Tensor zeros(Shape s) {
    std::size_t n = shape_numel(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
  }
  static Tensor full(Shape s, double v) {
    std::size_t n = shape_numel(s);
    return Tensor(std::move(s), std::vector<double>(n, v));
  }
  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool is_scalar() const { return data.size() == 1 && shape.empty(); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  // 2-D accessors (row-major).
  double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }
};

inline void ensure_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                     " vs " + shape_str(b.shape));
}

inline void ensure_all_finite(const Tensor& t, const char* op) {
  for (double v : t.data)
    if (!std::isfinite(v))
      throw NumericError(std::string(op) + ": non-finite value produced");
}

/// Rows of an N-d tensor selected along the leading dimension, preserving trailing dims.
inline Tensor take_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
  if (t.rank() < 1) throw ShapeError("take_rows: need rank >= 1, got " + shape_str(t.shape));
  std::size_t stride = t.numel() / t.dim(0);
  Shape out_shape = t.shape;
  out_shape[0] = rows.size();
  Tensor out = Tensor::zeros(out_shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= t.dim(0))
      throw ShapeError("take_rows: index " + std::to_string(rows[i]) + " out of range");
    for (std::size_t j = 0; j < stride; ++j)
      out.data[i * stride + j] = t.data[rows[i] * stride + j];
  }
  return out;
}

/// One example kept as a leading batch dimension of size 1.
inline Tensor slice_example(const Tensor& t, std::size_t i) {
  return take_rows(t, {i});
}

}  // namespace actlab
