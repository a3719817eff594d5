#include "odcast/tensor.hpp"

#include <cmath>
#include <sstream>

#include "odcast/errors.hpp"

namespace odcast {

size_t shape_numel(const std::vector<size_t>& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  size_t n = 1;
  for (size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + Tensor::shape_str(shape));
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<size_t> shape) : shape_(std::move(shape)) {
  data_.assign(shape_numel(shape_), 0.0);
}

Tensor::Tensor(std::vector<size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw DimensionError("data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str());
  }
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(std::vector<size_t> shape, double v) {
  Tensor t(std::move(shape));
  for (double& x : t.data_) x = v;
  return t;
}

Tensor Tensor::identity(size_t n) {
  Tensor t({n, n});
  for (size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
  return t;
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const size_t r = rows.size();
  const size_t c = rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix initializer");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

size_t Tensor::dim(size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str());
  }
  return shape_[axis];
}

size_t Tensor::flat_index(const std::vector<size_t>& index) const {
  if (index.size() != shape_.size()) {
    throw DimensionError("index rank " + std::to_string(index.size()) +
                         " does not match tensor " + shape_str());
  }
  size_t flat = 0;
  for (size_t a = 0; a < index.size(); ++a) {
    if (index[a] >= shape_[a]) {
      throw DimensionError("index out of bounds on axis " + std::to_string(a) + " for " + shape_str());
    }
    flat = flat * shape_[a] + index[a];
  }
  return flat;
}

double& Tensor::at(const std::vector<size_t>& index) { return data_[flat_index(index)]; }
double Tensor::at(const std::vector<size_t>& index) const { return data_[flat_index(index)]; }

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str(const std::vector<size_t>& shape) {
  std::ostringstream out;
  out << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) out << "x";
    out << shape[i];
  }
  out << "]";
  return out.str();
}

std::string Tensor::shape_str() const { return shape_str(shape_); }

}  // namespace odcast
