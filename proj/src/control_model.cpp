// SPDX-License-Identifier: Apache-2.0
#include "simeq/control_model.hpp"

#include "simeq/errors.hpp"
#include "simeq/spatial.hpp"

#include <cmath>

namespace simeq {

ScalarLinear::ScalarLinear(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
    : weight_{name + ".weight", Tensor({out, in, 1})}, bias_{name + ".bias", Tensor({1, out, 1})} {
  const double a = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-a, a);
  for (double& v : weight_.value.values()) v = u(rng);
  for (double& v : bias_.value.values()) v = u(rng);
}

ad::Var ScalarLinear::forward(const ForwardContext& ctx, ad::Var x) const {
  return ad::channel_mix(ctx.tape.parameter(weight_), x) + ctx.tape.parameter(bias_);
}

void ScalarLinear::collect(ParameterList& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

void ScalarLinear::collect(ConstParameterList& out) const {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

ControlModel::ControlModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  if (config_.architecture != "control") throw UsageError("ControlModel: architecture must be control");
  Rng rng = make_rng(config_.seed, Stream::kInit);
  const std::size_t w = config_.control_width;
  point1_ = ScalarLinear("control.point1", 3, w / 2 + 1, rng);
  point2_ = ScalarLinear("control.point2", w / 2 + 1, w, rng);
  coarse1_ = ScalarLinear("control.coarse1", w, 2 * w, rng);
  coarse2_ = ScalarLinear("control.coarse2", 2 * w, 3 * config_.generated_queries, rng);
  offset1_ = ScalarLinear("control.offset1", w + 3, w, rng);
  offset2_ = ScalarLinear("control.offset2", w, 3 * config_.upsample_factor(), rng);
}

CompletionVars ControlModel::forward(const ForwardContext& ctx, const PointCloud& partial) const {
  require_valid(partial, "partial");
  if (partial.size() < min_points()) {
    throw DegenerateInputError("partial has " + std::to_string(partial.size()) + " points, the model needs " +
                               std::to_string(min_points()));
  }
  const std::size_t n = partial.size();
  const std::size_t q = config_.coarse_count();
  const std::size_t f = config_.upsample_factor();
  ad::Var pts = ctx.tape.constant(points_tensor(partial));  // {N, 1, 3}
  ad::Var x = ad::reshape(pts, Shape{n, 3, 1});
  ad::Var h = ad::leaky_relu(point1_.forward(ctx, x), 0.0);
  h = ad::leaky_relu(point2_.forward(ctx, h), 0.0);
  ad::Var global = ad::max_over_tokens(h);  // {1, W, 1}

  ad::Var c = ad::leaky_relu(coarse1_.forward(ctx, global), 0.0);
  ad::Var generated = ad::reshape(coarse2_.forward(ctx, c), Shape{config_.generated_queries, 1, 3});
  ad::Var sampled = ad::gather_tokens(pts, farthest_point_sample(partial.points, config_.input_queries));
  ad::Var anchors = ad::concat({sampled, generated}, 0);  // {Q, 1, 3}

  ad::Var tiled = ad::gather_tokens(global, std::vector<std::size_t>(q, 0));
  ad::Var per_query = ad::concat({tiled, ad::reshape(anchors, Shape{q, 3, 1})}, 1);
  ad::Var o = ad::leaky_relu(offset1_.forward(ctx, per_query), 0.0);
  ad::Var offsets = ad::reshape(offset2_.forward(ctx, o), Shape{q, f, 3});
  ad::Var dense = ad::reshape(offsets + anchors, Shape{q * f, 1, 3});
  return CompletionVars{anchors, dense};
}

void ControlModel::collect(ParameterList& out) {
  for (ScalarLinear* l : {&point1_, &point2_, &coarse1_, &coarse2_, &offset1_, &offset2_}) l->collect(out);
}

void ControlModel::collect(ConstParameterList& out) const {
  for (const ScalarLinear* l : {&point1_, &point2_, &coarse1_, &coarse2_, &offset1_, &offset2_}) l->collect(out);
}

}  // namespace simeq
