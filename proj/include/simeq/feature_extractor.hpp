// SPDX-License-Identifier: Apache-2.0
//
// Local feature extraction: VN edge convolution over a KNN graph, then
// patch pooling around farthest-point-sampled centers.
#pragma once

#include "simeq/spatial.hpp"
#include "simeq/vector_neurons.hpp"

#include <string>
#include <vector>

namespace simeq {

class DgcnnLayer {
 public:
  DgcnnLayer() = default;
  DgcnnLayer(const std::string& name, std::size_t in, std::size_t out, Rng& rng, double leaky_alpha = 0.2,
             double bias_norm = 0.0);
  DgcnnLayer(VnNonlinear edge_map, VnMax pool);

  std::size_t in_channels() const { return edge_map_.in_channels() / 2; }
  std::size_t out_channels() const { return edge_map_.out_channels(); }

  /// out_i = VnMax over j in N(i) of edge_map([V_j + Vbar - V_i ; V_i]),
  /// Vbar = mean over all tokens.
  ad::Var forward(const ForwardContext& ctx, ad::Var x, const KnnGraph& graph) const;
  VectorFeatureSet operator()(const VectorFeatureSet& v, const KnnGraph& graph, double bias_scale = 1.0) const;

  void collect(ParameterList& out);
  void collect(ConstParameterList& out) const;

 private:
  VnNonlinear edge_map_;
  VnMax pool_;
};

struct ExtractorOptions {
  std::size_t patches = 32;
  std::size_t knn_k = 16;
  /// Raw points grouped around each patch center (center included).
  std::size_t patch_size = 16;
  std::vector<std::size_t> widths = {16, 16};
  std::size_t out_channels = 32;
  double leaky_alpha = 0.2;
  double bias_norm = 0.0;
};

class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(const std::string& name, const ExtractorOptions& options, Rng& rng);

  const ExtractorOptions& options() const { return options_; }
  std::size_t min_points() const;

  struct Output {
    ad::Var patches;         // {patches, out_channels, 3}
    ad::Var point_features;  // {N, widths.back(), 3}
    std::vector<std::size_t> centers;
  };

  Output forward(const ForwardContext& ctx, const PointCloud& pc) const;
  /// Patch tokens only.
  VectorFeatureSet operator()(const PointCloud& pc, double bias_scale = 1.0) const;

  const std::vector<DgcnnLayer>& layers() const { return layers_; }

  void collect(ParameterList& out);
  void collect(ConstParameterList& out) const;

 private:
  ExtractorOptions options_;
  std::vector<DgcnnLayer> layers_;
  VnMax patch_pool_;
  VnLinear widen_;
};

}  // namespace simeq
