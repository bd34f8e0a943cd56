// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "simeq/geometry.hpp"
#include "simeq/rng.hpp"
#include "simeq/tensor.hpp"

#include <random>

namespace simeq::testing {

inline PointCloud random_cloud(std::size_t n, std::uint64_t seed, double spread = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, spread);
  PointCloud pc;
  pc.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) pc.points.emplace_back(normal(rng), normal(rng), normal(rng));
  return pc;
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double spread = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, spread);
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal(rng);
  return t;
}

inline double max_point_diff(const PointCloud& a, const PointCloud& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, (a.points[i] - b.points[i]).cwiseAbs().maxCoeff());
  return m;
}

}  // namespace simeq::testing
