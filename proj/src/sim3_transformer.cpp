// SPDX-License-Identifier: Apache-2.0
#include "simeq/sim3_transformer.hpp"

#include <cmath>
#include <stdexcept>

namespace simeq {

// ---------------------------------------------------------------------------
// Canonicalization

VnLayerNorm::VnLayerNorm(const std::string& name, std::size_t channels)
    : gain_{name + ".gain", Tensor({1, channels, 1}, 1.0)}, offset_{name + ".offset", Tensor({1, channels, 1}, 0.0)} {
  if (channels < 1) throw std::invalid_argument("VnLayerNorm: channels must be >= 1");
}

ad::Var VnLayerNorm::forward(const ForwardContext& ctx, ad::Var x) const {
  if (x.dim(1) != channels()) {
    throw std::invalid_argument("VN-LayerNorm: input has " + std::to_string(x.dim(1)) + " channels, expected " +
                                std::to_string(channels()));
  }
  ad::Tape& tape = ctx.tape;
  ad::Var centered = x - ad::mean(x, 1);
  ad::Var norms = ad::norm3(centered);                                  // {M, D, 1}
  ad::Var direction = centered / ad::clamp_min(norms, kVnNormEpsilon);  // unit rows
  // Dividing by the mean norm makes the layernorm input exactly scale free,
  // so its epsilon cannot leak the input scale.
  ad::Var relative = norms / ad::clamp_min(ad::mean(norms, 1), kVnNormEpsilon);
  ad::Var dev = relative - ad::mean(relative, 1);
  ad::Var var = ad::mean(dev * dev, 1);
  ad::Var standardized = dev / ad::sqrt(ad::add_constant(var, kLayerNormEpsilon));
  ad::Var ln = standardized * tape.parameter(gain_) + tape.parameter(offset_);
  return ln * direction;
}

VectorFeatureSet VnLayerNorm::operator()(const VectorFeatureSet& v) const {
  ad::Tape tape(false);
  ForwardContext ctx{tape};
  return VectorFeatureSet(forward(ctx, tape.constant(v.tensor())).value());
}

void VnLayerNorm::collect(ParameterList& out) {
  out.push_back(&gain_);
  out.push_back(&offset_);
}

void VnLayerNorm::collect(ConstParameterList& out) const {
  out.push_back(&gain_);
  out.push_back(&offset_);
}

// ---------------------------------------------------------------------------
// Attention

VnAttention::VnAttention(const std::string& name, std::size_t channels, std::size_t heads, Rng& rng,
                         double bias_norm) {
  if (heads < 1 || channels % heads != 0) {
    throw std::invalid_argument("VnAttention: " + std::to_string(channels) + " channels not divisible by " +
                                std::to_string(heads) + " heads");
  }
  head_width_ = channels / heads;
  for (std::size_t h = 0; h < heads; ++h) {
    const std::string p = name + ".head" + std::to_string(h);
    heads_.push_back(Head{VnLinear(p + ".query", head_width_, head_width_, rng, bias_norm),
                          VnLinear(p + ".key", head_width_, head_width_, rng, bias_norm),
                          VnLinear(p + ".value", head_width_, head_width_, rng, bias_norm)});
  }
}

VnAttention::Output VnAttention::forward(const ForwardContext& ctx, ad::Var queries, ad::Var keys) const {
  if (queries.dim(1) != channels() || keys.dim(1) != channels()) {
    throw std::invalid_argument("VN-Attention: expected " + std::to_string(channels()) + " channels");
  }
  const double inv_sqrt = 1.0 / std::sqrt(3.0 * static_cast<double>(head_width_));
  Output out;
  std::vector<ad::Var> parts;
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    ad::Var qh = ad::slice(queries, 1, h * head_width_, head_width_);
    ad::Var kh = ad::slice(keys, 1, h * head_width_, head_width_);
    ad::Var q = heads_[h].query.forward(ctx, qh);
    ad::Var k = heads_[h].key.forward(ctx, kh);
    ad::Var v = heads_[h].value.forward(ctx, kh);
    ad::Var a = ad::softmax_rows(ad::scale(ad::frob_gram(q, k), inv_sqrt));
    out.weights.push_back(a);
    parts.push_back(ad::mix_tokens(a, v));
  }
  out.z = ad::concat(parts, 1);
  return out;
}

void VnAttention::collect(ParameterList& out) {
  for (Head& h : heads_) {
    h.query.collect(out);
    h.key.collect(out);
    h.value.collect(out);
  }
}

void VnAttention::collect(ConstParameterList& out) const {
  for (const Head& h : heads_) {
    h.query.collect(out);
    h.key.collect(out);
    h.value.collect(out);
  }
}

std::vector<Tensor> attention_weights(const VnLayerNorm& norm, const VnAttention& attention,
                                      const VectorFeatureSet& queries, const VectorFeatureSet& keys) {
  ad::Tape tape(false);
  ForwardContext ctx{tape};
  ad::Var q = norm.forward(ctx, tape.constant(queries.tensor()));
  ad::Var k = norm.forward(ctx, tape.constant(keys.tensor()));
  std::vector<Tensor> out;
  for (ad::Var a : attention.forward(ctx, q, k).weights) out.push_back(a.value());
  return out;
}

// ---------------------------------------------------------------------------
// Restoration

ad::Var restoration_scale(ad::Var v) {
  ad::Var centered = v - ad::mean(v, 1);          // V_i - mean_d V_i[d]
  ad::Var token_mean = ad::mean(centered, 0);     // {1, D, 3}
  return ad::mean(ad::norm3(token_mean), 1);      // {1, 1, 1}
}

double restoration_scale(const VectorFeatureSet& v) {
  ad::Tape tape(false);
  return restoration_scale(tape.constant(v.tensor())).value()[0];
}

Restoration::Restoration(const std::string& name, std::size_t channels, Rng& rng, double bias_norm)
    : fuse_(name + ".fuse", channels, channels, rng, bias_norm) {}

ad::Var Restoration::forward(const ForwardContext& ctx, ad::Var v, ad::Var z) const {
  if (v.shape() != z.shape()) {
    throw std::invalid_argument("Restoration: residual " + to_string(v.shape()) + " vs update " + to_string(z.shape()));
  }
  ad::Var mu = restoration_scale(v);
  return v + fuse_.forward(ctx, mu * z);
}

void Restoration::collect(ParameterList& out) { fuse_.collect(out); }
void Restoration::collect(ConstParameterList& out) const { fuse_.collect(out); }

// ---------------------------------------------------------------------------
// Block

Sim3Block::Sim3Block(const std::string& name, const BlockOptions& o, Rng& rng)
    : mode_(o.mode),
      norm1_(name + ".norm1", o.channels),
      attention_(name + ".attention", o.channels, o.heads, rng, o.bias_norm),
      restore1_(name + ".restore1", o.channels, rng, o.bias_norm),
      norm2_(name + ".norm2", o.channels),
      ff_in_(name + ".ff_in", o.channels, o.ff_multiplier * o.channels, rng, o.bias_norm),
      ff_act_(name + ".ff_act", o.ff_multiplier * o.channels, o.ff_multiplier * o.channels, rng, o.leaky_alpha,
              o.bias_norm),
      ff_out_(name + ".ff_out", o.ff_multiplier * o.channels, o.channels, rng, o.bias_norm),
      restore2_(name + ".restore2", o.channels, rng, o.bias_norm) {}

ad::Var Sim3Block::forward(const ForwardContext& ctx, ad::Var queries, std::optional<ad::Var> context) const {
  if ((mode_ == AttentionMode::kCross) != context.has_value()) {
    throw std::invalid_argument(mode_ == AttentionMode::kCross ? "Sim3Block: cross-attention needs a context"
                                                               : "Sim3Block: self-attention takes no context");
  }
  ad::Var qn = norm1_.forward(ctx, queries);
  ad::Var kn = context ? norm1_.forward(ctx, *context) : qn;
  ad::Var x1 = restore1_.forward(ctx, queries, attention_.forward(ctx, qn, kn).z);
  ad::Var hn = norm2_.forward(ctx, x1);
  ad::Var ff = ff_out_.forward(ctx, ff_act_.forward(ctx, ff_in_.forward(ctx, hn)));
  return restore2_.forward(ctx, x1, ff);
}

VectorFeatureSet Sim3Block::operator()(const VectorFeatureSet& queries, const VectorFeatureSet* context,
                                       double bias_scale) const {
  ad::Tape tape(false);
  ForwardContext ctx{tape, bias_scale};
  std::optional<ad::Var> c;
  if (context) c = tape.constant(context->tensor());
  return VectorFeatureSet(forward(ctx, tape.constant(queries.tensor()), c).value());
}

std::vector<Tensor> Sim3Block::attention_weights(const VectorFeatureSet& queries,
                                                 const VectorFeatureSet* context) const {
  return simeq::attention_weights(norm1_, attention_, queries, context ? *context : queries);
}

void Sim3Block::collect(ParameterList& out) {
  norm1_.collect(out);
  attention_.collect(out);
  restore1_.collect(out);
  norm2_.collect(out);
  ff_in_.collect(out);
  ff_act_.collect(out);
  ff_out_.collect(out);
  restore2_.collect(out);
}

void Sim3Block::collect(ConstParameterList& out) const {
  norm1_.collect(out);
  attention_.collect(out);
  restore1_.collect(out);
  norm2_.collect(out);
  ff_in_.collect(out);
  ff_act_.collect(out);
  ff_out_.collect(out);
  restore2_.collect(out);
}

}  // namespace simeq
