#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace odcast {

/// Dense row-major array of 64-bit floats. Tensors are plain values:
/// cheap to move, copied explicitly, never aliased. Shape may have any
/// rank; a scalar is represented as shape {1}.
class Tensor {
 public:
  Tensor() = default;

  /// Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<size_t> shape);

  Tensor(std::vector<size_t> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<size_t> shape, double v);
  /// Identity matrix [n x n].
  static Tensor identity(size_t n);
  /// Row-major matrix from nested initializer lists, for tests and fixtures.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const std::vector<size_t>& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t numel() const { return data_.size(); }
  size_t dim(size_t axis) const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](size_t flat) { return data_[flat]; }
  double operator[](size_t flat) const { return data_[flat]; }

  /// Element access by multi-index (bounds-checked).
  double& at(const std::vector<size_t>& index);
  double at(const std::vector<size_t>& index) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  /// "[2x3x4]" - used in error messages.
  std::string shape_str() const;
  static std::string shape_str(const std::vector<size_t>& shape);

 private:
  size_t flat_index(const std::vector<size_t>& index) const;

  std::vector<size_t> shape_;
  std::vector<double> data_;
};

/// Product of dimensions; throws DimensionError on zero-sized dimensions.
size_t shape_numel(const std::vector<size_t>& shape);

}  // namespace odcast
