// SPDX-License-Identifier: Apache-2.0
//
// Nearest-neighbor search, k-nearest-neighbor graphs and farthest-point
// sampling. Every ordering breaks distance ties by ascending index.
#pragma once

#include "simeq/geometry.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace simeq {

struct Neighbor {
  std::size_t index = 0;
  double distance_sq = 0.0;
};

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

/// Static 3-d tree over a point set it does not own.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points);
  /// Exact nearest point; ties to the lowest index. Requires a non-empty set.
  Neighbor nearest(const Vec3& query) const;

 private:
  struct Node {
    std::size_t point = 0;
    int axis = 0;
    int left = -1;
    int right = -1;
  };
  int build(std::span<std::size_t> order, int depth);
  void search(int node, const Vec3& q, Neighbor& best) const;

  std::span<const Vec3> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Target sets larger than this go through a KdTree.
inline constexpr std::size_t kKdTreeThreshold = 512;

std::vector<Neighbor> nearest_brute_force(std::span<const Vec3> queries, std::span<const Vec3> targets);
std::vector<Neighbor> nearest_kdtree(std::span<const Vec3> queries, std::span<const Vec3> targets);
/// Dispatches on targets.size() > kKdTreeThreshold. Both paths agree bitwise.
std::vector<Neighbor> nearest_neighbors(std::span<const Vec3> queries, std::span<const Vec3> targets);

/// Greedy farthest-point sampling from `start`. Returns count distinct indices.
/// Throws std::invalid_argument if count > points.size() or start is out of range.
std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t count,
                                               std::size_t start = 0);
PointCloud farthest_point_subset(const PointCloud& pc, std::size_t count);

struct KnnGraph {
  std::size_t tokens = 0;
  std::size_t k = 0;
  /// Row-major {tokens, k}.
  std::vector<std::size_t> indices;
  /// True when some row had fewer than k other points and was padded with itself.
  bool self_padded = false;

  std::span<const std::size_t> neighbors(std::size_t i) const { return {indices.data() + i * k, k}; }
};

/// Neighbors exclude the point itself and are sorted by (distance, index).
/// If k >= size: throws std::invalid_argument unless allow_self_pad, in which
/// case every row lists all other points and is padded with its own index.
KnnGraph build_knn(std::span<const Vec3> points, std::size_t k, bool allow_self_pad = false);
KnnGraph build_knn(const PointCloud& pc, std::size_t k, bool allow_self_pad = false);

/// The k nearest points (self included) to each center, sorted by (distance,
/// index), flattened {centers, k}.
std::vector<std::size_t> knn_groups(std::span<const Vec3> points, std::span<const std::size_t> centers,
                                    std::size_t k);

}  // namespace simeq
