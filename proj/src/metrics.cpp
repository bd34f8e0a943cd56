// SPDX-License-Identifier: Apache-2.0
#include "simeq/metrics.hpp"

#include "simeq/errors.hpp"
#include "simeq/spatial.hpp"
#include "simeq/vector_neurons.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace simeq {
namespace {

void require_non_empty(const PointCloud& pc, const char* what) {
  if (pc.empty()) throw std::invalid_argument(std::string(what) + ": empty point cloud");
}

double mean_nearest_distance(const PointCloud& from, const PointCloud& to) {
  double sum = 0.0;
  for (const Neighbor& n : nearest_neighbors(from.points, to.points)) sum += std::sqrt(n.distance_sq);
  return sum / static_cast<double>(from.size());
}

std::size_t count_within(const PointCloud& from, const PointCloud& to, double threshold) {
  const double t2 = threshold * threshold;
  std::size_t hits = 0;
  for (const Neighbor& n : nearest_neighbors(from.points, to.points)) hits += n.distance_sq <= t2 ? 1 : 0;
  return hits;
}

}  // namespace

double chamfer_l1(const PointCloud& a, const PointCloud& b) {
  require_non_empty(a, "chamfer_l1");
  require_non_empty(b, "chamfer_l1");
  return 0.5 * (mean_nearest_distance(a, b) + mean_nearest_distance(b, a));
}

ad::Var chamfer_l1(ad::Var a, ad::Var b) {
  if (a.dim(1) != 1 || a.dim(2) != 3 || b.dim(1) != 1 || b.dim(2) != 3 || a.dim(0) < 1 || b.dim(0) < 1) {
    throw std::invalid_argument("chamfer_l1: expected non-empty {N, 1, 3} tensors, got " + to_string(a.shape()) +
                                " and " + to_string(b.shape()));
  }
  if (!a.value().all_finite() || !b.value().all_finite()) {
    throw NumericalError("chamfer_l1: non-finite point coordinates");
  }
  const PointCloud pa = tensor_points(a.value());
  const PointCloud pb = tensor_points(b.value());
  std::vector<std::size_t> ab, ba;
  for (const Neighbor& n : nearest_neighbors(pa.points, pb.points)) ab.push_back(n.index);
  for (const Neighbor& n : nearest_neighbors(pb.points, pa.points)) ba.push_back(n.index);
  ad::Var d_ab = ad::mean_all(ad::norm3(a - ad::gather_tokens(b, std::move(ab))));
  ad::Var d_ba = ad::mean_all(ad::norm3(b - ad::gather_tokens(a, std::move(ba))));
  return ad::scale(d_ab + d_ba, 0.5);
}

double f_score(const PointCloud& pred, const PointCloud& gt, double threshold) {
  require_non_empty(pred, "f_score");
  require_non_empty(gt, "f_score");
  if (!(threshold > 0.0)) throw std::invalid_argument("f_score: threshold must be > 0");
  const double p = static_cast<double>(count_within(pred, gt, threshold)) / static_cast<double>(pred.size());
  const double r = static_cast<double>(count_within(gt, pred, threshold)) / static_cast<double>(gt.size());
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

double fidelity(const PointCloud& input, const PointCloud& pred) {
  require_non_empty(input, "fidelity");
  require_non_empty(pred, "fidelity");
  return mean_nearest_distance(input, pred);
}

double mmd(const PointCloud& pred, const std::vector<PointCloud>& references) {
  if (references.empty()) throw std::invalid_argument("mmd: empty reference set");
  double best = std::numeric_limits<double>::infinity();
  for (const PointCloud& r : references) best = std::min(best, chamfer_l1(pred, r));
  return best;
}

}  // namespace simeq
