// SPDX-License-Identifier: Apache-2.0
//
// De-biased evaluation. Per sample: draw g from the test group, move partial
// and ground truth by g, normalize the partial using only its own statistics,
// predict, map the prediction back through the normalization and g^-1, and
// score it against the ground truth in the dataset (canonical) frame.
#pragma once

#include "simeq/completion_model.hpp"
#include "simeq/toy_data.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace simeq {

struct ProtocolConfig {
  TransformDistribution train_group = TransformDistribution::identity();
  TransformDistribution test_group = TransformDistribution::identity();
  double f_threshold = 0.01;
  bool compute_fidelity = true;
  std::size_t threads = 1;
};

struct SampleMetrics {
  std::size_t index = 0;
  double cd_l1_x1000 = 0.0;
  double f1 = 0.0;
  std::optional<double> fidelity;
  std::optional<double> mmd;
  Sim3Transform transform;
};

struct MetricsReport {
  double cd_l1_x1000 = 0.0;
  double f1 = 0.0;
  std::optional<double> fidelity;
  std::optional<double> mmd;
  std::vector<SampleMetrics> per_sample;
};

nlohmann::json to_json(const MetricsReport& r);
/// index,cd_l1_x1000,f1,fidelity,mmd (empty cells for absent values).
std::string per_sample_csv(const MetricsReport& r);

/// Receives the normalized partial and the sample index; returns a prediction
/// in the same normalized frame. Must be safe to call concurrently.
using Predictor = std::function<PointCloud(const PointCloud& normalized_input, std::size_t index)>;

/// mmd_references, when given, adds MMD against that library.
MetricsReport run_protocol(const Predictor& predict, const std::vector<ToySample>& dataset, const ProtocolConfig& cfg,
                           const std::vector<PointCloud>* mmd_references = nullptr);
MetricsReport run_protocol(const CompletionNetwork& net, const std::vector<ToySample>& dataset,
                           const ProtocolConfig& cfg, const std::vector<PointCloud>* mmd_references = nullptr);

}  // namespace simeq
