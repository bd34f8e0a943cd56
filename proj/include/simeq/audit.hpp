// SPDX-License-Identifier: Apache-2.0
//
// Equivariance audit: relative error |f(g x) - g f(x)| / max(|g f(x)|, 1e-12)
// per tapped layer and end to end, plus a sweep over the global bias scale.
#pragma once

#include "simeq/completion_model.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace simeq {

inline constexpr double kAuditErrorFloor = 1e-12;

/// |actual - expected| / max(|expected|, 1e-12), Frobenius norms.
double relative_error(const Tensor& actual, const Tensor& expected);

struct ErrorStats {
  double mean = 0.0;
  double max = 0.0;
  std::size_t count = 0;

  void add(double e);
};

struct AuditConfig {
  TransformDistribution distribution = TransformDistribution::sim3();
  std::size_t trials = 100;
  /// Bias scale used for the per-layer and end-to-end figures.
  double bias_scale = 1.0;
  /// Empty disables the sweep.
  std::vector<double> sweep_scales = {1.0, 0.1, 0.01, 0.0};
  std::size_t threads = 1;
};

struct AuditPlotRow {
  std::size_t trial = 0;
  double scale = 1.0;
  double rotation_angle = 0.0;
  double translation_norm = 0.0;
  double error = 0.0;
};

struct EquivarianceAuditReport {
  std::map<std::string, ErrorStats> per_layer;
  ErrorStats end_to_end;
  /// (bias scale, end-to-end stats), in sweep order.
  std::vector<std::pair<double, ErrorStats>> bias_sweep;
  std::vector<AuditPlotRow> plot;
  std::size_t trials = 0;
  std::uint64_t seed = 0;

  /// True when the sweep's max errors never increase along the sweep order.
  bool sweep_monotone() const;
};

nlohmann::json to_json(const EquivarianceAuditReport& r);
/// trial,scale,rotation_angle,translation_norm,error
std::string plot_csv(const EquivarianceAuditReport& r);

/// Trial i uses inputs[i % inputs.size()] and sample_transform(distribution, i).
EquivarianceAuditReport audit_equivariance(const CompletionNetwork& net, const std::vector<PointCloud>& inputs,
                                           const AuditConfig& cfg);

}  // namespace simeq
