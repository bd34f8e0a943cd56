// SPDX-License-Identifier: Apache-2.0
#include "simeq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace simeq {

std::string to_string(const Shape& shape) {
  return "[" + std::to_string(shape[0]) + ", " + std::to_string(shape[1]) + ", " +
         std::to_string(shape[2]) + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape[0] * shape[1] * shape[2], fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape[0] * shape[1] * shape[2]) {
    throw std::invalid_argument("Tensor: data size does not match shape " + to_string(shape));
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape[0] * shape[1] * shape[2] != data_.size()) {
    throw std::invalid_argument("Tensor::reshaped: " + to_string(shape_) + " -> " + to_string(shape));
  }
  Tensor out = *this;
  out.shape_ = shape;
  return out;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::norm() const {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return std::sqrt(s);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace simeq
