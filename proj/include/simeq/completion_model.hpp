// SPDX-License-Identifier: Apache-2.0
//
// The equivariant encoder-decoder completion network and the interface it
// shares with the scalar control model.
//
//   partial -> FeatureExtractor -> L_enc self-attention blocks -> QueryGenerator
//           -> L_dec cross-attention blocks -> ReconstructionHead -> dense
//
// Every query token carries its 3-vector anchor in channel 0. The coarse
// output is the anchor set; the dense output adds upsample_factor offsets per
// anchor.
#pragma once

#include "simeq/feature_extractor.hpp"
#include "simeq/sim3_transformer.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace simeq {

struct ModelConfig {
  /// "equivariant" or "control".
  std::string architecture = "equivariant";
  std::size_t n_in = 256;
  std::size_t n_out = 1024;
  std::size_t patch_count = 32;
  std::size_t patch_size = 16;
  std::size_t channel_width = 32;
  std::size_t encoder_depth = 3;
  std::size_t decoder_depth = 2;
  std::size_t head_count = 4;
  std::size_t knn_k = 16;
  std::vector<std::size_t> dgcnn_widths = {16, 16};
  std::size_t input_queries = 24;
  std::size_t generated_queries = 40;
  double leaky_alpha = 0.2;
  /// 0 disables every VN bias.
  double bias_norm = 0.0;
  /// Hidden width of the control model's scalar MLPs. 164 puts the desk
  /// control within 1% of the equivariant model's parameter count.
  std::size_t control_width = 164;
  std::uint64_t seed = 0;

  std::size_t coarse_count() const { return input_queries + generated_queries; }
  std::size_t upsample_factor() const { return n_out / coarse_count(); }
  /// Throws UsageError on an inconsistent configuration.
  void validate() const;

  static ModelConfig desk();
  static ModelConfig full();
  /// "desk" or "full".
  static ModelConfig preset(const std::string& name);
};

nlohmann::json to_json(const ModelConfig& c);
/// Missing keys keep their defaults. Throws UsageError on unknown schema version.
ModelConfig model_config_from_json(const nlohmann::json& j);

struct CompletionVars {
  ad::Var coarse;  // {coarse_count, 1, 3}
  ad::Var dense;   // {n_out, 1, 3}
};

struct Completion {
  PointCloud coarse;
  PointCloud dense;
};

class CompletionNetwork {
 public:
  virtual ~CompletionNetwork() = default;

  virtual const ModelConfig& config() const = 0;
  /// Smallest accepted partial.
  virtual std::size_t min_points() const = 0;
  virtual CompletionVars forward(const ForwardContext& ctx, const PointCloud& partial) const = 0;
  virtual void collect(ParameterList& out) = 0;
  virtual void collect(ConstParameterList& out) const = 0;

  /// Deterministic, gradient-free evaluation.
  Completion complete(const PointCloud& partial, double bias_scale = 1.0) const;
  ParameterList parameters();
  ConstParameterList parameters() const;
};

class QueryGenerator {
 public:
  QueryGenerator() = default;
  /// point_width is the channel width of the per-point features used to lift Q_I.
  QueryGenerator(const std::string& name, std::size_t channels, std::size_t point_width, std::size_t input_queries,
                 std::size_t generated_queries, Rng& rng, double bias_norm = 0.0);

  std::size_t query_count() const { return input_queries_ + generated_queries_; }
  std::size_t input_queries() const { return input_queries_; }

  /// Q = [Q_I ; Q_G]. Q_I: channel 0 is the farthest-point-sampled input point,
  /// the other channels lift [point ; point features]. Q_G: VN-Max over the
  /// encoder tokens, mapped to generated * D channels and split into tokens.
  ad::Var forward(const ForwardContext& ctx, ad::Var encoded, const PointCloud& partial,
                  ad::Var point_features) const;

  VnLinear& lift_map() { return lift_; }
  VnLinear& query_map() { return query_map_; }

  void collect(ParameterList& out);
  void collect(ConstParameterList& out) const;

 private:
  std::size_t input_queries_ = 0;
  std::size_t generated_queries_ = 0;
  std::size_t channels_ = 0;
  VnLinear lift_;
  VnMax global_pool_;
  VnLinear query_map_;
};

class ReconstructionHead {
 public:
  ReconstructionHead() = default;
  ReconstructionHead(const std::string& name, std::size_t channels, std::size_t upsample_factor, Rng& rng);

  std::size_t upsample_factor() const { return expand_.out_channels(); }
  VnLinear& expand_map() { return expand_; }

  /// dense[q * F + u] = anchor_q + expand(V_q - mean_d V_q)[u].
  ad::Var forward(const ForwardContext& ctx, ad::Var decoded, ad::Var queries) const;
  PointCloud operator()(const VectorFeatureSet& decoded, const VectorFeatureSet& queries) const;

  void collect(ParameterList& out);
  void collect(ConstParameterList& out) const;

 private:
  VnLinear expand_;
};

/// Channel 0 of every query token: {Q, D, 3} -> {Q, 1, 3}.
ad::Var query_anchors(ad::Var queries);

class CompletionModel final : public CompletionNetwork {
 public:
  explicit CompletionModel(const ModelConfig& config);

  const ModelConfig& config() const override { return config_; }
  std::size_t min_points() const override;
  CompletionVars forward(const ForwardContext& ctx, const PointCloud& partial) const override;
  void collect(ParameterList& out) override;
  void collect(ConstParameterList& out) const override;

  const FeatureExtractor& extractor() const { return extractor_; }
  const std::vector<Sim3Block>& encoder() const { return encoder_; }
  const std::vector<Sim3Block>& decoder() const { return decoder_; }
  const QueryGenerator& query_generator() const { return queries_; }
  const ReconstructionHead& head() const { return head_; }

 private:
  ModelConfig config_;
  FeatureExtractor extractor_;
  std::vector<Sim3Block> encoder_;
  QueryGenerator queries_;
  std::vector<Sim3Block> decoder_;
  ReconstructionHead head_;
};

/// Builds the architecture named in config (fresh weights from config.seed).
std::unique_ptr<CompletionNetwork> make_network(const ModelConfig& config);

/// model_config.json + params.{bin,json}.
void save_network(const std::filesystem::path& dir, const CompletionNetwork& net);
/// Throws UsageError when files are missing or do not match.
std::unique_ptr<CompletionNetwork> load_network(const std::filesystem::path& dir);

}  // namespace simeq
