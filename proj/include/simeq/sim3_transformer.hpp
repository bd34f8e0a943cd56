// SPDX-License-Identifier: Apache-2.0
//
// One SIM(3)-equivariant layer module: canonicalize -> invariant attention ->
// restore. Canonicalization strips translation and scale from each token,
// attention runs on the canonical features (weights are SIM(3)-invariant),
// and the restoration residual V + Phi(mu * Z) puts scale and translation back.
#pragma once

#include "simeq/vector_neurons.hpp"

#include <optional>
#include <string>
#include <vector>

namespace simeq {

/// Vanilla layernorm epsilon applied to the (scale-free) norm vector.
inline constexpr double kLayerNormEpsilon = 1e-5;

class VnLayerNorm {
 public:
  VnLayerNorm() = default;
  /// gain = 1, offset = 0.
  VnLayerNorm(const std::string& name, std::size_t channels);

  std::size_t channels() const { return gain_.value.dim(1); }
  Tensor& gain() { return gain_.value; }
  Tensor& offset() { return offset_.value; }

  /// Per token: center on the channel mean, split each row into norm and
  /// direction, divide the norms by their mean, layernorm them, and rescale
  /// the directions by the result.
  ad::Var forward(const ForwardContext& ctx, ad::Var x) const;
  VectorFeatureSet operator()(const VectorFeatureSet& v) const;

  void collect(ParameterList& out);
  void collect(ConstParameterList& out) const;

 private:
  ad::Parameter gain_;
  ad::Parameter offset_;
};

class VnAttention {
 public:
  VnAttention() = default;
  /// channels must be divisible by heads; each head owns channels/heads channels.
  VnAttention(const std::string& name, std::size_t channels, std::size_t heads, Rng& rng, double bias_norm = 0.0);

  std::size_t heads() const { return heads_.size(); }
  std::size_t channels() const { return head_width_ * heads_.size(); }

  struct Output {
    ad::Var z;
    std::vector<ad::Var> weights;  // one {Mq, Mk, 1} matrix per head
  };

  /// Inputs must already be canonicalized.
  Output forward(const ForwardContext& ctx, ad::Var queries, ad::Var keys) const;

  void collect(ParameterList& out);
  void collect(ConstParameterList& out) const;

 private:
  struct Head {
    VnLinear query;
    VnLinear key;
    VnLinear value;
  };
  std::vector<Head> heads_;
  std::size_t head_width_ = 0;
};

/// Global scale statistic: mean over channels of || mean over tokens of (V_i - mean_d V_i[d]) ||.
ad::Var restoration_scale(ad::Var v);
double restoration_scale(const VectorFeatureSet& v);

class Restoration {
 public:
  Restoration() = default;
  Restoration(const std::string& name, std::size_t channels, Rng& rng, double bias_norm = 0.0);

  /// v + fuse(mu(v) * z)
  ad::Var forward(const ForwardContext& ctx, ad::Var v, ad::Var z) const;
  VnLinear& fuse_map() { return fuse_; }

  void collect(ParameterList& out);
  void collect(ConstParameterList& out) const;

 private:
  VnLinear fuse_;
};

enum class AttentionMode { kSelf, kCross };

struct BlockOptions {
  std::size_t channels = 32;
  std::size_t heads = 4;
  /// Feed-forward hidden width = ff_multiplier * channels.
  std::size_t ff_multiplier = 2;
  double leaky_alpha = 0.2;
  double bias_norm = 0.0;
  AttentionMode mode = AttentionMode::kSelf;
};

class Sim3Block {
 public:
  Sim3Block() = default;
  Sim3Block(const std::string& name, const BlockOptions& options, Rng& rng);

  AttentionMode mode() const { return mode_; }
  VnLayerNorm& norm1() { return norm1_; }
  VnLayerNorm& norm2() { return norm2_; }
  const VnAttention& attention() const { return attention_; }

  /// context is required iff mode is cross-attention.
  ad::Var forward(const ForwardContext& ctx, ad::Var queries, std::optional<ad::Var> context = std::nullopt) const;
  VectorFeatureSet operator()(const VectorFeatureSet& queries, const VectorFeatureSet* context = nullptr,
                              double bias_scale = 1.0) const;

  /// Attention weights of the first sub-path (per head), for inspection.
  std::vector<Tensor> attention_weights(const VectorFeatureSet& queries, const VectorFeatureSet* context = nullptr) const;

  void collect(ParameterList& out);
  void collect(ConstParameterList& out) const;

 private:
  AttentionMode mode_ = AttentionMode::kSelf;
  VnLayerNorm norm1_;
  VnAttention attention_;
  Restoration restore1_;
  VnLayerNorm norm2_;
  VnLinear ff_in_;
  VnNonlinear ff_act_;
  VnLinear ff_out_;
  Restoration restore2_;
};

/// Value-level canonicalize + attention weights (per head).
std::vector<Tensor> attention_weights(const VnLayerNorm& norm, const VnAttention& attention,
                                      const VectorFeatureSet& queries, const VectorFeatureSet& keys);

}  // namespace simeq
