// SPDX-License-Identifier: Apache-2.0
#include "simeq/feature_extractor.hpp"

#include <algorithm>
#include <stdexcept>

namespace simeq {

DgcnnLayer::DgcnnLayer(const std::string& name, std::size_t in, std::size_t out, Rng& rng, double leaky_alpha,
                       double bias_norm)
    : edge_map_(name + ".edge", 2 * in, out, rng, leaky_alpha, bias_norm), pool_(name + ".pool", out, rng, bias_norm) {}

DgcnnLayer::DgcnnLayer(VnNonlinear edge_map, VnMax pool) : edge_map_(std::move(edge_map)), pool_(std::move(pool)) {
  if (edge_map_.in_channels() % 2 != 0 || pool_.channels() != edge_map_.out_channels()) {
    throw std::invalid_argument("DgcnnLayer: edge map / pool widths do not fit");
  }
}

ad::Var DgcnnLayer::forward(const ForwardContext& ctx, ad::Var x, const KnnGraph& graph) const {
  if (graph.tokens != x.dim(0)) {
    throw std::invalid_argument("DgcnnLayer: graph has " + std::to_string(graph.tokens) + " tokens, features have " +
                                std::to_string(x.dim(0)));
  }
  if (x.dim(1) != in_channels()) {
    throw std::invalid_argument("DgcnnLayer: expected " + std::to_string(in_channels()) + " channels, got " +
                                std::to_string(x.dim(1)));
  }
  std::vector<std::size_t> centre(graph.indices.size());
  for (std::size_t e = 0; e < centre.size(); ++e) centre[e] = e / graph.k;
  ad::Var vi = ad::gather_tokens(x, std::move(centre));
  ad::Var vj = ad::gather_tokens(x, graph.indices);
  ad::Var edge = ad::concat({vj + ad::mean(x, 0) - vi, vi}, 1);
  return pool_.forward(ctx, edge_map_.forward(ctx, edge), graph.k);
}

VectorFeatureSet DgcnnLayer::operator()(const VectorFeatureSet& v, const KnnGraph& graph, double bias_scale) const {
  ad::Tape tape(false);
  ForwardContext ctx{tape, bias_scale};
  return VectorFeatureSet(forward(ctx, tape.constant(v.tensor()), graph).value());
}

void DgcnnLayer::collect(ParameterList& out) {
  edge_map_.collect(out);
  pool_.collect(out);
}

void DgcnnLayer::collect(ConstParameterList& out) const {
  edge_map_.collect(out);
  pool_.collect(out);
}

FeatureExtractor::FeatureExtractor(const std::string& name, const ExtractorOptions& o, Rng& rng) : options_(o) {
  if (o.widths.empty()) throw std::invalid_argument("FeatureExtractor: need at least one DGCNN layer");
  if (o.patches < 1 || o.patch_size < 1 || o.knn_k < 1) {
    throw std::invalid_argument("FeatureExtractor: patches, patch_size and knn_k must be >= 1");
  }
  std::size_t in = 1;
  for (std::size_t l = 0; l < o.widths.size(); ++l) {
    layers_.emplace_back(name + ".dgcnn" + std::to_string(l), in, o.widths[l], rng, o.leaky_alpha, o.bias_norm);
    in = o.widths[l];
  }
  patch_pool_ = VnMax(name + ".patch_pool", in, rng, o.bias_norm);
  widen_ = VnLinear(name + ".widen", in, o.out_channels, rng, o.bias_norm);
}

std::size_t FeatureExtractor::min_points() const {
  return std::max({options_.patches, options_.patch_size, options_.knn_k + 1});
}

FeatureExtractor::Output FeatureExtractor::forward(const ForwardContext& ctx, const PointCloud& pc) const {
  require_valid(pc, "feature extractor input");
  if (pc.size() < min_points()) {
    throw std::invalid_argument("FeatureExtractor: " + std::to_string(pc.size()) + " points, need at least " +
                                std::to_string(min_points()));
  }
  const KnnGraph graph = build_knn(pc, options_.knn_k);
  ad::Var x = ctx.tape.constant(points_tensor(pc));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    x = layers_[l].forward(ctx, x, graph);
    ctx.tap("dgcnn" + std::to_string(l), x);
  }
  Output out;
  out.point_features = x;
  out.centers = farthest_point_sample(pc.points, options_.patches);
  ad::Var grouped = ad::gather_tokens(x, knn_groups(pc.points, out.centers, options_.patch_size));
  ad::Var pooled = patch_pool_.forward(ctx, grouped, options_.patch_size);
  ctx.tap("patch_pool", pooled);
  out.patches = widen_.forward(ctx, pooled);
  ctx.tap("patch_embed", out.patches);
  return out;
}

VectorFeatureSet FeatureExtractor::operator()(const PointCloud& pc, double bias_scale) const {
  ad::Tape tape(false);
  ForwardContext ctx{tape, bias_scale};
  return VectorFeatureSet(forward(ctx, pc).patches.value());
}

void FeatureExtractor::collect(ParameterList& out) {
  for (DgcnnLayer& l : layers_) l.collect(out);
  patch_pool_.collect(out);
  widen_.collect(out);
}

void FeatureExtractor::collect(ConstParameterList& out) const {
  for (const DgcnnLayer& l : layers_) l.collect(out);
  patch_pool_.collect(out);
  widen_.collect(out);
}

}  // namespace simeq
