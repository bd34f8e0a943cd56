// SPDX-License-Identifier: Apache-2.0
//
// Vector-neuron features and the primitive SIM(3)-equivariant layers:
// VN-Linear (affine row constraint), VN-ReLU / VN-LeakyReLU and VN-Max.
//
// A feature set is a tensor {M tokens, D channels, 3}. Every channel row is a
// 3-vector on which g = (s, R, t) acts as a point: v -> s R v + t.
#pragma once

#include "simeq/autodiff.hpp"
#include "simeq/geometry.hpp"
#include "simeq/parameters.hpp"
#include "simeq/rng.hpp"

#include <optional>
#include <string>
#include <vector>

namespace simeq {

class VectorFeatureSet {
 public:
  VectorFeatureSet() = default;
  VectorFeatureSet(std::size_t tokens, std::size_t channels) : data_({tokens, channels, 3}) {}
  /// Requires shape {M >= 1, D >= 1, 3} with finite entries.
  explicit VectorFeatureSet(Tensor data);

  /// One single-channel token per point.
  static VectorFeatureSet from_points(const PointCloud& pc);
  static VectorFeatureSet random(std::size_t tokens, std::size_t channels, Rng& rng, double spread = 1.0);

  std::size_t tokens() const { return data_.dim(0); }
  std::size_t channels() const { return data_.dim(1); }

  Vec3 row(std::size_t token, std::size_t channel) const {
    return {data_(token, channel, 0), data_(token, channel, 1), data_(token, channel, 2)};
  }
  void set_row(std::size_t token, std::size_t channel, const Vec3& v) {
    for (int k = 0; k < 3; ++k) data_(token, channel, k) = v[k];
  }

  const Tensor& tensor() const { return data_; }

  /// Applies g to every channel row.
  VectorFeatureSet transformed(const Sim3Transform& g) const;

 private:
  Tensor data_;
};

/// Applies g to every 3-row of a {M, D, 3} tensor.
Tensor transform_rows(const Sim3Transform& g, const Tensor& t);
/// Point cloud <-> {N, 1, 3} tensor.
Tensor points_tensor(const PointCloud& pc);
PointCloud tensor_points(const Tensor& t);

/// Shared evaluation state for one forward pass. bias_scale multiplies every
/// layer's bias norm (used by the approximate-equivariance sweep).
struct ForwardContext {
  ad::Tape& tape;
  double bias_scale = 1.0;
  std::vector<std::pair<std::string, ad::Var>>* taps = nullptr;

  void tap(const std::string& name, ad::Var v) const {
    if (taps) taps->emplace_back(name, v);
  }
};

/// Row i += (1 - sum_j w_ij) / D_in, so every row sums to one.
Tensor project_rows_to_affine(const Tensor& weights);

class VnLinear {
 public:
  VnLinear() = default;
  /// Free weights drawn from U(-a, a), a = 1/sqrt(in). A bias direction is
  /// allocated when bias_norm > 0.
  VnLinear(std::string name, std::size_t in, std::size_t out, Rng& rng, double bias_norm = 0.0);
  /// Explicit free (unprojected) weights {out, in, 1}.
  static VnLinear from_weights(std::string name, Tensor free_weights);

  std::size_t in_channels() const { return weight_.value.dim(1); }
  std::size_t out_channels() const { return weight_.value.dim(0); }
  const std::string& name() const { return weight_.name; }

  /// The constrained matrix actually applied.
  Tensor effective_weights() const { return project_rows_to_affine(weight_.value); }
  Tensor& free_weights() { return weight_.value; }

  double bias_norm() const { return bias_norm_; }
  bool has_bias() const { return bias_direction_.has_value(); }
  /// Allocates a direction on first use.
  void set_bias(double norm, Rng& rng);
  void set_bias_direction(const Tensor& direction);

  ad::Var forward(const ForwardContext& ctx, ad::Var x) const;
  VectorFeatureSet operator()(const VectorFeatureSet& v, double bias_scale = 1.0) const;

  void collect(ParameterList& out);
  void collect(ConstParameterList& out) const;

 private:
  ad::Parameter weight_;
  std::optional<ad::Parameter> bias_direction_;
  double bias_norm_ = 0.0;
};

/// VN-ReLU (alpha = 0) and VN-LeakyReLU.
class VnNonlinear {
 public:
  VnNonlinear() = default;
  VnNonlinear(const std::string& name, std::size_t in, std::size_t out, Rng& rng, double leaky_alpha = 0.0,
              double bias_norm = 0.0);
  VnNonlinear(VnLinear feature, VnLinear direction, VnLinear origin, double leaky_alpha);

  double leaky_alpha() const { return alpha_; }
  std::size_t in_channels() const { return feature_.in_channels(); }
  std::size_t out_channels() const { return feature_.out_channels(); }
  VnLinear& feature_map() { return feature_; }
  VnLinear& direction_map() { return direction_; }
  VnLinear& origin_map() { return origin_; }

  ad::Var forward(const ForwardContext& ctx, ad::Var x) const;
  VectorFeatureSet operator()(const VectorFeatureSet& v, double bias_scale = 1.0) const;

  /// Per-token, per-channel <F_O, B_O> (the branch condition).
  Tensor branch_scores(const VectorFeatureSet& v) const;

  void collect(ParameterList& out);
  void collect(ConstParameterList& out) const;

 private:
  VnLinear feature_;
  VnLinear direction_;
  VnLinear origin_;
  double alpha_ = 0.0;
};

/// VN-Max: per channel, keeps the token whose centered vector is most aligned
/// with its centered direction. Ties go to the lowest token index.
class VnMax {
 public:
  VnMax() = default;
  VnMax(const std::string& name, std::size_t channels, Rng& rng, double bias_norm = 0.0);
  VnMax(VnLinear direction, VnLinear origin);

  std::size_t channels() const { return direction_.in_channels(); }

  /// x {G * group, D, 3} pooled over consecutive groups -> {G, D, 3}.
  ad::Var forward(const ForwardContext& ctx, ad::Var x, std::size_t group) const;
  ad::Var forward(const ForwardContext& ctx, ad::Var x) const { return forward(ctx, x, x.dim(0)); }
  VectorFeatureSet operator()(const VectorFeatureSet& v) const;

  /// Selected token per (group, channel), flattened {G * D}.
  std::vector<std::size_t> select(const ForwardContext& ctx, ad::Var x, std::size_t group) const;
  std::vector<std::size_t> select(const VectorFeatureSet& v) const;

  void collect(ParameterList& out);
  void collect(ConstParameterList& out) const;

 private:
  VnLinear direction_;
  VnLinear origin_;
};

/// Norm guard for divisions by direction norms.
inline constexpr double kVnNormEpsilon = 1e-8;

}  // namespace simeq
