// SPDX-License-Identifier: Apache-2.0
//
// Non-equivariant control: the same coarse/dense pipeline built from plain
// scalar layers on absolute coordinates.
//
//   per-point MLP (3 -> W/2 -> W) -> max-pool -> global feature g
//   coarse = [FPS input anchors ; MLP(g) reshaped to generated points]
//   dense  = anchor + MLP([g ; anchor]) reshaped to upsample_factor offsets
#pragma once

#include "simeq/completion_model.hpp"

namespace simeq {

/// y = W x + b on {M, in, 1} -> {M, out, 1}.
class ScalarLinear {
 public:
  ScalarLinear() = default;
  ScalarLinear(const std::string& name, std::size_t in, std::size_t out, Rng& rng);

  ad::Var forward(const ForwardContext& ctx, ad::Var x) const;

  void collect(ParameterList& out);
  void collect(ConstParameterList& out) const;

 private:
  ad::Parameter weight_;
  ad::Parameter bias_;
};

class ControlModel final : public CompletionNetwork {
 public:
  explicit ControlModel(const ModelConfig& config);

  const ModelConfig& config() const override { return config_; }
  std::size_t min_points() const override { return config_.input_queries; }
  CompletionVars forward(const ForwardContext& ctx, const PointCloud& partial) const override;
  void collect(ParameterList& out) override;
  void collect(ConstParameterList& out) const override;

 private:
  ModelConfig config_;
  ScalarLinear point1_, point2_;
  ScalarLinear coarse1_, coarse2_;
  ScalarLinear offset1_, offset2_;
};

}  // namespace simeq
