// SPDX-License-Identifier: Apache-2.0
//
// Point-set metrics. Distances are Euclidean; nearest neighbors come from
// nearest_neighbors() (KD-tree above 512 targets, brute force below).
#pragma once

#include "simeq/autodiff.hpp"
#include "simeq/geometry.hpp"

#include <vector>

namespace simeq {

/// Reported Chamfer values are raw values times this factor.
inline constexpr double kChamferReportScale = 1000.0;
/// F-score distance threshold in the unit-scale canonical frame.
inline constexpr double kFScoreThreshold = 0.01;

/// (mean_a min_b |a - b| + mean_b min_a |a - b|) / 2. Throws on empty input.
double chamfer_l1(const PointCloud& a, const PointCloud& b);

/// Differentiable Chamfer on {N, 1, 3} tensors. Assignments are computed from
/// the current values and held fixed; gradients flow through the distances.
ad::Var chamfer_l1(ad::Var a, ad::Var b);

/// 2PR / (P + R) with P over pred, R over gt; 0 when P + R = 0.
/// A point counts when its nearest distance is <= threshold.
double f_score(const PointCloud& pred, const PointCloud& gt, double threshold = kFScoreThreshold);

/// Mean distance from each input point to its nearest predicted point.
double fidelity(const PointCloud& input, const PointCloud& pred);

/// Minimum Chamfer distance from pred to any reference.
double mmd(const PointCloud& pred, const std::vector<PointCloud>& references);

}  // namespace simeq
