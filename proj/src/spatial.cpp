// SPDX-License-Identifier: Apache-2.0
#include "simeq/spatial.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace simeq {
namespace {

bool closer(double d, std::size_t i, const Neighbor& best) {
  return d < best.distance_sq || (d == best.distance_sq && i < best.index);
}

// Indices of the k smallest (distance, index) pairs among candidates.
std::vector<std::size_t> k_smallest(const Vec3& q, std::span<const Vec3> points, std::vector<std::size_t>& cand,
                                    std::size_t k) {
  std::vector<std::pair<double, std::size_t>> keyed;
  keyed.reserve(cand.size());
  for (std::size_t j : cand) keyed.emplace_back(squared_distance(q, points[j]), j);
  const std::size_t take = std::min(k, keyed.size());
  std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(take), keyed.end());
  std::vector<std::size_t> out(take);
  for (std::size_t r = 0; r < take; ++r) out[r] = keyed[r].second;
  return out;
}

}  // namespace

KdTree::KdTree(std::span<const Vec3> points) : points_(points) {
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  nodes_.reserve(points.size());
  root_ = build(order, 0);
}

int KdTree::build(std::span<std::size_t> order, int depth) {
  if (order.empty()) return -1;
  const int axis = depth % 3;
  const std::size_t mid = order.size() / 2;
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(mid), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     const double pa = points_[a][axis];
                     const double pb = points_[b][axis];
                     return pa < pb || (pa == pb && a < b);
                   });
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{order[mid], axis, -1, -1});
  const int left = build(order.subspan(0, mid), depth + 1);
  const int right = build(order.subspan(mid + 1), depth + 1);
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

void KdTree::search(int node, const Vec3& q, Neighbor& best) const {
  if (node < 0) return;
  const Node& n = nodes_[static_cast<std::size_t>(node)];
  const Vec3& p = points_[n.point];
  const double d = squared_distance(q, p);
  if (closer(d, n.point, best)) best = Neighbor{n.point, d};
  const double delta = q[n.axis] - p[n.axis];
  const int near = delta < 0.0 ? n.left : n.right;
  const int far = delta < 0.0 ? n.right : n.left;
  search(near, q, best);
  // <= keeps equidistant candidates reachable so index tie-breaking stays exact.
  if (delta * delta <= best.distance_sq) search(far, q, best);
}

Neighbor KdTree::nearest(const Vec3& query) const {
  if (root_ < 0) throw std::invalid_argument("KdTree::nearest: empty point set");
  Neighbor best{std::numeric_limits<std::size_t>::max(), std::numeric_limits<double>::infinity()};
  search(root_, query, best);
  return best;
}

std::vector<Neighbor> nearest_brute_force(std::span<const Vec3> queries, std::span<const Vec3> targets) {
  if (targets.empty()) throw std::invalid_argument("nearest_brute_force: empty target set");
  std::vector<Neighbor> out(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    Neighbor best{0, squared_distance(queries[i], targets[0])};
    for (std::size_t j = 1; j < targets.size(); ++j) {
      const double d = squared_distance(queries[i], targets[j]);
      if (d < best.distance_sq) best = Neighbor{j, d};
    }
    out[i] = best;
  }
  return out;
}

std::vector<Neighbor> nearest_kdtree(std::span<const Vec3> queries, std::span<const Vec3> targets) {
  KdTree tree(targets);
  std::vector<Neighbor> out(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) out[i] = tree.nearest(queries[i]);
  return out;
}

std::vector<Neighbor> nearest_neighbors(std::span<const Vec3> queries, std::span<const Vec3> targets) {
  return targets.size() > kKdTreeThreshold ? nearest_kdtree(queries, targets) : nearest_brute_force(queries, targets);
}

std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t count, std::size_t start) {
  if (count > points.size()) {
    throw std::invalid_argument("farthest_point_sample: requested " + std::to_string(count) + " of " +
                                std::to_string(points.size()) + " points");
  }
  if (count == 0) return {};
  if (start >= points.size()) throw std::invalid_argument("farthest_point_sample: start index out of range");
  std::vector<std::size_t> picked{start};
  picked.reserve(count);
  std::vector<double> dist(points.size(), std::numeric_limits<double>::infinity());
  std::size_t last = start;
  while (picked.size() < count) {
    std::size_t arg = 0;
    double far = -1.0;
    for (std::size_t j = 0; j < points.size(); ++j) {
      dist[j] = std::min(dist[j], squared_distance(points[j], points[last]));
      if (dist[j] > far) {
        far = dist[j];
        arg = j;
      }
    }
    picked.push_back(arg);
    last = arg;
  }
  return picked;
}

PointCloud farthest_point_subset(const PointCloud& pc, std::size_t count) {
  PointCloud out{{}, pc.frame_label};
  out.points.reserve(count);
  for (std::size_t i : farthest_point_sample(pc.points, count)) out.points.push_back(pc.points[i]);
  return out;
}

KnnGraph build_knn(std::span<const Vec3> points, std::size_t k, bool allow_self_pad) {
  const std::size_t m = points.size();
  if (k < 1) throw std::invalid_argument("build_knn: k must be >= 1");
  if (m < 2) throw std::invalid_argument("build_knn: need at least 2 points");
  if (k >= m && !allow_self_pad) {
    throw std::invalid_argument("build_knn: k = " + std::to_string(k) + " needs more than " + std::to_string(m) +
                                " points");
  }
  KnnGraph g{m, k, std::vector<std::size_t>(m * k), k >= m};
  std::vector<std::size_t> cand;
  cand.reserve(m - 1);
  for (std::size_t i = 0; i < m; ++i) {
    cand.clear();
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i) cand.push_back(j);
    }
    std::vector<std::size_t> row = k_smallest(points[i], points, cand, k);
    row.resize(k, i);
    std::copy(row.begin(), row.end(), g.indices.begin() + static_cast<std::ptrdiff_t>(i * k));
  }
  return g;
}

KnnGraph build_knn(const PointCloud& pc, std::size_t k, bool allow_self_pad) {
  return build_knn(std::span<const Vec3>(pc.points), k, allow_self_pad);
}

std::vector<std::size_t> knn_groups(std::span<const Vec3> points, std::span<const std::size_t> centers,
                                    std::size_t k) {
  if (k < 1 || k > points.size()) {
    throw std::invalid_argument("knn_groups: group size " + std::to_string(k) + " with " +
                                std::to_string(points.size()) + " points");
  }
  std::vector<std::size_t> all(points.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<std::size_t> out;
  out.reserve(centers.size() * k);
  for (std::size_t c : centers) {
    if (c >= points.size()) throw std::invalid_argument("knn_groups: center index out of range");
    std::vector<std::size_t> row = k_smallest(points[c], points, all, k);
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

}  // namespace simeq
