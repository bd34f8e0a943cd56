// SPDX-License-Identifier: Apache-2.0
#include "simeq/vector_neurons.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace simeq {

VectorFeatureSet::VectorFeatureSet(Tensor data) : data_(std::move(data)) {
  if (data_.dim(2) != 3 || data_.dim(0) < 1 || data_.dim(1) < 1) {
    throw std::invalid_argument("VectorFeatureSet: expected {M>=1, D>=1, 3}, got " + to_string(data_.shape()));
  }
  if (!data_.all_finite()) throw std::invalid_argument("VectorFeatureSet: non-finite entry");
}

VectorFeatureSet VectorFeatureSet::from_points(const PointCloud& pc) {
  return VectorFeatureSet(points_tensor(pc));
}

VectorFeatureSet VectorFeatureSet::random(std::size_t tokens, std::size_t channels, Rng& rng, double spread) {
  std::normal_distribution<double> normal(0.0, spread);
  Tensor t({tokens, channels, 3});
  for (double& v : t.values()) v = normal(rng);
  return VectorFeatureSet(std::move(t));
}

VectorFeatureSet VectorFeatureSet::transformed(const Sim3Transform& g) const {
  return VectorFeatureSet(transform_rows(g, data_));
}

Tensor transform_rows(const Sim3Transform& g, const Tensor& t) {
  if (t.dim(2) != 3) throw std::invalid_argument("transform_rows: last axis must be 3");
  Tensor out(t.shape());
  const std::size_t rows = t.dim(0) * t.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    const Vec3 p(t[3 * r], t[3 * r + 1], t[3 * r + 2]);
    const Vec3 q = g.apply(p);
    out[3 * r] = q.x();
    out[3 * r + 1] = q.y();
    out[3 * r + 2] = q.z();
  }
  return out;
}

Tensor points_tensor(const PointCloud& pc) {
  Tensor t({pc.size(), 1, 3});
  for (std::size_t i = 0; i < pc.size(); ++i)
    for (int k = 0; k < 3; ++k) t(i, 0, k) = pc.points[i][k];
  return t;
}

PointCloud tensor_points(const Tensor& t) {
  if (t.dim(2) != 3) throw std::invalid_argument("tensor_points: last axis must be 3");
  PointCloud pc;
  const std::size_t rows = t.dim(0) * t.dim(1);
  pc.points.reserve(rows);
  for (std::size_t r = 0; r < rows; ++r) pc.points.emplace_back(t[3 * r], t[3 * r + 1], t[3 * r + 2]);
  return pc;
}

Tensor project_rows_to_affine(const Tensor& weights) {
  const std::size_t rows = weights.dim(0), cols = weights.dim(1);
  if (cols < 1 || weights.dim(2) != 1) {
    throw std::invalid_argument("project_rows_to_affine: expected {rows, cols>=1, 1}, got " +
                                to_string(weights.shape()));
  }
  Tensor out = weights;
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += weights(r, c, 0);
    const double shift = (1.0 - s) / static_cast<double>(cols);
    for (std::size_t c = 0; c < cols; ++c) out(r, c, 0) += shift;
  }
  return out;
}

// ---------------------------------------------------------------------------
// VN-Linear

VnLinear::VnLinear(std::string name, std::size_t in, std::size_t out, Rng& rng, double bias_norm) {
  if (in < 1 || out < 1) throw std::invalid_argument("VnLinear: widths must be >= 1");
  const double a = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-a, a);
  weight_.name = std::move(name);
  weight_.value = Tensor({out, in, 1});
  for (double& v : weight_.value.values()) v = u(rng);
  if (bias_norm > 0.0) set_bias(bias_norm, rng);
}

VnLinear VnLinear::from_weights(std::string name, Tensor free_weights) {
  if (free_weights.dim(2) != 1 || free_weights.dim(0) < 1 || free_weights.dim(1) < 1) {
    throw std::invalid_argument("VnLinear::from_weights: expected {out, in, 1}");
  }
  VnLinear layer;
  layer.weight_.name = std::move(name);
  layer.weight_.value = std::move(free_weights);
  return layer;
}

void VnLinear::set_bias(double norm, Rng& rng) {
  if (norm < 0.0) throw std::invalid_argument("VnLinear: bias norm must be >= 0");
  if (!bias_direction_) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor dir({1, out_channels(), 3});
    for (double& v : dir.values()) v = normal(rng);
    bias_direction_ = ad::Parameter{weight_.name + ".bias_direction", std::move(dir)};
  }
  bias_norm_ = norm;
}

void VnLinear::set_bias_direction(const Tensor& direction) {
  if (direction.shape() != Shape{1, out_channels(), 3}) {
    throw std::invalid_argument("VnLinear: bias direction must be {1, out, 3}");
  }
  if (!bias_direction_) bias_direction_ = ad::Parameter{weight_.name + ".bias_direction", direction};
  bias_direction_->value = direction;
}

ad::Var VnLinear::forward(const ForwardContext& ctx, ad::Var x) const {
  if (x.dim(1) != in_channels()) {
    throw std::invalid_argument("VN-Linear '" + name() + "': input has " + std::to_string(x.dim(1)) +
                                " channels, layer expects " + std::to_string(in_channels()));
  }
  ad::Tape& tape = ctx.tape;
  ad::Var w = ad::affine_rows(tape.parameter(weight_));
  ad::Var y = ad::channel_mix(w, x);
  const double b = bias_norm_ * ctx.bias_scale;
  if (bias_direction_ && b != 0.0) {
    ad::Var dir = tape.parameter(*bias_direction_);
    ad::Var len = ad::clamp_min(ad::sqrt(ad::sum_all(dir * dir)), 1e-12);
    y = y + ad::scale(dir / len, b);
  }
  return y;
}

VectorFeatureSet VnLinear::operator()(const VectorFeatureSet& v, double bias_scale) const {
  ad::Tape tape(false);
  ForwardContext ctx{tape, bias_scale};
  return VectorFeatureSet(forward(ctx, tape.constant(v.tensor())).value());
}

void VnLinear::collect(ParameterList& out) {
  out.push_back(&weight_);
  if (bias_direction_) out.push_back(&*bias_direction_);
}

void VnLinear::collect(ConstParameterList& out) const {
  out.push_back(&weight_);
  if (bias_direction_) out.push_back(&*bias_direction_);
}

// ---------------------------------------------------------------------------
// VN-ReLU / VN-LeakyReLU

VnNonlinear::VnNonlinear(const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                         double leaky_alpha, double bias_norm)
    : feature_(name + ".feature", in, out, rng, bias_norm),
      direction_(name + ".direction", in, out, rng, bias_norm),
      origin_(name + ".origin", in, out, rng, bias_norm),
      alpha_(leaky_alpha) {
  if (!(leaky_alpha >= 0.0 && leaky_alpha < 1.0)) throw std::invalid_argument("VnNonlinear: alpha in [0, 1)");
}

VnNonlinear::VnNonlinear(VnLinear feature, VnLinear direction, VnLinear origin, double leaky_alpha)
    : feature_(std::move(feature)), direction_(std::move(direction)), origin_(std::move(origin)), alpha_(leaky_alpha) {
  if (!(leaky_alpha >= 0.0 && leaky_alpha < 1.0)) throw std::invalid_argument("VnNonlinear: alpha in [0, 1)");
  if (feature_.in_channels() != direction_.in_channels() || feature_.in_channels() != origin_.in_channels() ||
      feature_.out_channels() != direction_.out_channels() || feature_.out_channels() != origin_.out_channels()) {
    throw std::invalid_argument("VnNonlinear: feature/direction/origin widths differ");
  }
}

ad::Var VnNonlinear::forward(const ForwardContext& ctx, ad::Var x) const {
  ad::Tape& tape = ctx.tape;
  ad::Var f = feature_.forward(ctx, x);
  ad::Var b = direction_.forward(ctx, x);
  ad::Var o = origin_.forward(ctx, x);
  ad::Var fo = f - o;
  ad::Var bo = b - o;
  ad::Var inner = ad::sum(fo * bo, 2);
  ad::Var bo_sq = ad::sum(bo * bo, 2);

  // Second branch only where <F_O, B_O> < 0 and the direction is not degenerate.
  const Tensor& iv = inner.value();
  const Tensor& nv = bo_sq.value();
  Tensor mask(iv.shape());
  for (std::size_t r = 0; r < mask.size(); ++r) {
    mask[r] = (iv[r] < 0.0 && std::sqrt(nv[r]) >= kVnNormEpsilon) ? 1.0 : 0.0;
  }
  ad::Var coef = tape.constant(std::move(mask)) * inner / ad::clamp_min(bo_sq, kVnNormEpsilon * kVnNormEpsilon);
  ad::Var relu = f - coef * bo;
  if (alpha_ == 0.0) return relu;
  return ad::scale(f, alpha_) + ad::scale(relu, 1.0 - alpha_);
}

VectorFeatureSet VnNonlinear::operator()(const VectorFeatureSet& v, double bias_scale) const {
  ad::Tape tape(false);
  ForwardContext ctx{tape, bias_scale};
  return VectorFeatureSet(forward(ctx, tape.constant(v.tensor())).value());
}

Tensor VnNonlinear::branch_scores(const VectorFeatureSet& v) const {
  ad::Tape tape(false);
  ForwardContext ctx{tape};
  ad::Var x = tape.constant(v.tensor());
  ad::Var o = origin_.forward(ctx, x);
  return ad::sum((feature_.forward(ctx, x) - o) * (direction_.forward(ctx, x) - o), 2).value();
}

void VnNonlinear::collect(ParameterList& out) {
  feature_.collect(out);
  direction_.collect(out);
  origin_.collect(out);
}

void VnNonlinear::collect(ConstParameterList& out) const {
  feature_.collect(out);
  direction_.collect(out);
  origin_.collect(out);
}

// ---------------------------------------------------------------------------
// VN-Max

VnMax::VnMax(const std::string& name, std::size_t channels, Rng& rng, double bias_norm)
    : direction_(name + ".direction", channels, channels, rng, bias_norm),
      origin_(name + ".origin", channels, channels, rng, bias_norm) {}

VnMax::VnMax(VnLinear direction, VnLinear origin) : direction_(std::move(direction)), origin_(std::move(origin)) {
  if (direction_.in_channels() != origin_.in_channels()) {
    throw std::invalid_argument("VnMax: direction and origin maps must share the input width");
  }
  if (direction_.out_channels() != direction_.in_channels() || origin_.out_channels() != origin_.in_channels()) {
    throw std::invalid_argument("VnMax: maps must preserve the channel count");
  }
}

std::vector<std::size_t> VnMax::select(const ForwardContext& ctx, ad::Var x, std::size_t group) const {
  const std::size_t m = x.dim(0), d = x.dim(1);
  if (group == 0 || m == 0 || m % group != 0) {
    throw std::invalid_argument("VN-Max: " + std::to_string(m) + " tokens do not split into groups of " +
                                std::to_string(group));
  }
  const Tensor& v = x.value();
  const Tensor b = direction_.forward(ctx, x).value();
  const Tensor o = origin_.forward(ctx, x).value();
  const std::size_t groups = m / group;
  std::vector<std::size_t> index(groups * d);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t ch = 0; ch < d; ++ch) {
      std::size_t best = g * group;
      double best_score = -std::numeric_limits<double>::infinity();
      for (std::size_t i = g * group; i < (g + 1) * group; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < 3; ++k) s += (v(i, ch, k) - o(i, ch, k)) * (b(i, ch, k) - o(i, ch, k));
        if (s > best_score) {
          best_score = s;
          best = i;
        }
      }
      index[g * d + ch] = best;
    }
  }
  return index;
}

std::vector<std::size_t> VnMax::select(const VectorFeatureSet& v) const {
  ad::Tape tape(false);
  ForwardContext ctx{tape};
  return select(ctx, tape.constant(v.tensor()), v.tokens());
}

ad::Var VnMax::forward(const ForwardContext& ctx, ad::Var x, std::size_t group) const {
  if (x.dim(1) != channels()) {
    throw std::invalid_argument("VN-Max: input has " + std::to_string(x.dim(1)) + " channels, layer expects " +
                                std::to_string(channels()));
  }
  auto index = select(ctx, x, group);
  const std::size_t groups = x.dim(0) / group;
  return ad::gather_channels(x, std::move(index), groups);
}

VectorFeatureSet VnMax::operator()(const VectorFeatureSet& v) const {
  ad::Tape tape(false);
  ForwardContext ctx{tape};
  return VectorFeatureSet(forward(ctx, tape.constant(v.tensor())).value());
}

void VnMax::collect(ParameterList& out) {
  direction_.collect(out);
  origin_.collect(out);
}

void VnMax::collect(ConstParameterList& out) const {
  direction_.collect(out);
  origin_.collect(out);
}

}  // namespace simeq
