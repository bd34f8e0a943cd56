// SPDX-License-Identifier: Apache-2.0
#include "simeq/completion_model.hpp"

#include "simeq/control_model.hpp"
#include "simeq/errors.hpp"
#include "simeq/point_io.hpp"

#include <algorithm>
#include <stdexcept>

namespace simeq {

// ---------------------------------------------------------------------------
// Configuration

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw UsageError("model config: " + m); };
  if (architecture != "equivariant" && architecture != "control") fail("unknown architecture '" + architecture + "'");
  if (n_in < 1 || n_out < 1 || patch_count < 1 || patch_size < 1 || channel_width < 1 || head_count < 1 || knn_k < 1)
    fail("sizes must be >= 1");
  if (input_queries < 1 || generated_queries < 1) fail("query counts must be >= 1");
  if (n_out % coarse_count() != 0) {
    fail("n_out = " + std::to_string(n_out) + " is not a multiple of the coarse count " +
         std::to_string(coarse_count()));
  }
  if (channel_width % head_count != 0) fail("channel_width must be divisible by head_count");
  if (channel_width < 2) fail("channel_width must be >= 2");
  if (dgcnn_widths.empty()) fail("need at least one DGCNN layer");
  if (leaky_alpha < 0.0 || leaky_alpha >= 1.0) fail("leaky_alpha must lie in [0, 1)");
  if (bias_norm < 0.0) fail("bias_norm must be >= 0");
  if (control_width < 1) fail("control_width must be >= 1");
  const std::size_t need = std::max({patch_count, patch_size, knn_k + 1, input_queries});
  if (n_in < need) fail("n_in = " + std::to_string(n_in) + " is below the minimum " + std::to_string(need));
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.n_in = 2048;
  c.n_out = 16384;
  c.patch_count = 128;
  c.patch_size = 32;
  c.channel_width = 64;
  c.encoder_depth = 6;
  c.decoder_depth = 8;
  c.dgcnn_widths = {32, 32};
  c.input_queries = 128;
  c.generated_queries = 384;
  return c;
}

ModelConfig ModelConfig::preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "full") return full();
  throw UsageError("unknown model preset '" + name + "' (expected desk or full)");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"schema_version", 1},
          {"architecture", c.architecture},
          {"n_in", c.n_in},
          {"n_out", c.n_out},
          {"patch_count", c.patch_count},
          {"patch_size", c.patch_size},
          {"channel_width", c.channel_width},
          {"encoder_depth", c.encoder_depth},
          {"decoder_depth", c.decoder_depth},
          {"head_count", c.head_count},
          {"knn_k", c.knn_k},
          {"dgcnn_widths", c.dgcnn_widths},
          {"input_queries", c.input_queries},
          {"generated_queries", c.generated_queries},
          {"leaky_alpha", c.leaky_alpha},
          {"bias_norm", c.bias_norm},
          {"control_width", c.control_width},
          {"seed", c.seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  try {
    if (j.value("schema_version", 1) != 1) throw UsageError("model config: unsupported schema_version");
    ModelConfig c;
    c.architecture = j.value("architecture", c.architecture);
    c.n_in = j.value("n_in", c.n_in);
    c.n_out = j.value("n_out", c.n_out);
    c.patch_count = j.value("patch_count", c.patch_count);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.channel_width = j.value("channel_width", c.channel_width);
    c.encoder_depth = j.value("encoder_depth", c.encoder_depth);
    c.decoder_depth = j.value("decoder_depth", c.decoder_depth);
    c.head_count = j.value("head_count", c.head_count);
    c.knn_k = j.value("knn_k", c.knn_k);
    c.dgcnn_widths = j.value("dgcnn_widths", c.dgcnn_widths);
    c.input_queries = j.value("input_queries", c.input_queries);
    c.generated_queries = j.value("generated_queries", c.generated_queries);
    c.leaky_alpha = j.value("leaky_alpha", c.leaky_alpha);
    c.bias_norm = j.value("bias_norm", c.bias_norm);
    c.control_width = j.value("control_width", c.control_width);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("model config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Shared interface

Completion CompletionNetwork::complete(const PointCloud& partial, double bias_scale) const {
  ad::Tape tape(false);
  ForwardContext ctx{tape, bias_scale};
  const CompletionVars out = forward(ctx, partial);
  Completion c{tensor_points(out.coarse.value()), tensor_points(out.dense.value())};
  c.coarse.frame_label = partial.frame_label;
  c.dense.frame_label = partial.frame_label;
  return c;
}

ParameterList CompletionNetwork::parameters() {
  ParameterList out;
  collect(out);
  return out;
}

ConstParameterList CompletionNetwork::parameters() const {
  ConstParameterList out;
  collect(out);
  return out;
}

// ---------------------------------------------------------------------------
// Queries

QueryGenerator::QueryGenerator(const std::string& name, std::size_t channels, std::size_t point_width,
                               std::size_t input_queries, std::size_t generated_queries, Rng& rng, double bias_norm)
    : input_queries_(input_queries),
      generated_queries_(generated_queries),
      channels_(channels),
      lift_(name + ".lift", 1 + point_width, channels - 1, rng, bias_norm),
      global_pool_(name + ".global_pool", channels, rng, bias_norm),
      query_map_(name + ".query_map", channels, generated_queries * channels, rng, bias_norm) {}

ad::Var QueryGenerator::forward(const ForwardContext& ctx, ad::Var encoded, const PointCloud& partial,
                                ad::Var point_features) const {
  if (encoded.dim(0) < 1 || encoded.dim(1) != channels_) {
    throw std::invalid_argument("QueryGenerator: encoder output " + to_string(encoded.shape()) + ", expected " +
                                std::to_string(channels_) + " channels");
  }
  if (partial.size() < input_queries_) {
    throw std::invalid_argument("QueryGenerator: partial has " + std::to_string(partial.size()) + " points, need " +
                                std::to_string(input_queries_));
  }
  if (point_features.dim(0) != partial.size() || point_features.dim(1) + 1 != lift_.in_channels()) {
    throw std::invalid_argument("QueryGenerator: point features " + to_string(point_features.shape()) +
                                " do not match the partial");
  }
  const std::vector<std::size_t> picked = farthest_point_sample(partial.points, input_queries_);
  ad::Var anchors = ad::gather_tokens(ctx.tape.constant(points_tensor(partial)), picked);
  ad::Var lifted = lift_.forward(ctx, ad::concat({anchors, ad::gather_tokens(point_features, picked)}, 1));
  ad::Var q_input = ad::concat({anchors, lifted}, 1);
  ad::Var pooled = global_pool_.forward(ctx, encoded);
  ad::Var q_generated =
      ad::reshape(query_map_.forward(ctx, pooled), Shape{generated_queries_, channels_, 3});
  return ad::concat({q_input, q_generated}, 0);
}

void QueryGenerator::collect(ParameterList& out) {
  lift_.collect(out);
  global_pool_.collect(out);
  query_map_.collect(out);
}

void QueryGenerator::collect(ConstParameterList& out) const {
  lift_.collect(out);
  global_pool_.collect(out);
  query_map_.collect(out);
}

ad::Var query_anchors(ad::Var queries) { return ad::slice(queries, 1, 0, 1); }

// ---------------------------------------------------------------------------
// Head

ReconstructionHead::ReconstructionHead(const std::string& name, std::size_t channels, std::size_t upsample_factor,
                                       Rng& rng)
    : expand_(name + ".expand", channels, upsample_factor, rng) {}

ad::Var ReconstructionHead::forward(const ForwardContext& ctx, ad::Var decoded, ad::Var queries) const {
  if (decoded.dim(0) != queries.dim(0)) {
    throw std::invalid_argument("ReconstructionHead: " + std::to_string(decoded.dim(0)) + " decoded tokens vs " +
                                std::to_string(queries.dim(0)) + " queries");
  }
  ad::Var offsets = expand_.forward(ctx, decoded - ad::mean(decoded, 1));
  ad::Var points = offsets + query_anchors(queries);
  return ad::reshape(points, Shape{decoded.dim(0) * upsample_factor(), 1, 3});
}

PointCloud ReconstructionHead::operator()(const VectorFeatureSet& decoded, const VectorFeatureSet& queries) const {
  ad::Tape tape(false);
  ForwardContext ctx{tape};
  return tensor_points(forward(ctx, tape.constant(decoded.tensor()), tape.constant(queries.tensor())).value());
}

void ReconstructionHead::collect(ParameterList& out) { expand_.collect(out); }
void ReconstructionHead::collect(ConstParameterList& out) const { expand_.collect(out); }

// ---------------------------------------------------------------------------
// Model

namespace {

ExtractorOptions extractor_options(const ModelConfig& c) {
  ExtractorOptions o;
  o.patches = c.patch_count;
  o.knn_k = c.knn_k;
  o.patch_size = c.patch_size;
  o.widths = c.dgcnn_widths;
  o.out_channels = c.channel_width;
  o.leaky_alpha = c.leaky_alpha;
  o.bias_norm = c.bias_norm;
  return o;
}

BlockOptions block_options(const ModelConfig& c, AttentionMode mode) {
  BlockOptions o;
  o.channels = c.channel_width;
  o.heads = c.head_count;
  o.leaky_alpha = c.leaky_alpha;
  o.bias_norm = c.bias_norm;
  o.mode = mode;
  return o;
}

}  // namespace

CompletionModel::CompletionModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  if (config_.architecture != "equivariant") throw UsageError("CompletionModel: architecture must be equivariant");
  Rng rng = make_rng(config_.seed, Stream::kInit);
  extractor_ = FeatureExtractor("extractor", extractor_options(config_), rng);
  for (std::size_t l = 0; l < config_.encoder_depth; ++l) {
    encoder_.emplace_back("encoder" + std::to_string(l), block_options(config_, AttentionMode::kSelf), rng);
  }
  queries_ = QueryGenerator("queries", config_.channel_width, config_.dgcnn_widths.back(), config_.input_queries,
                            config_.generated_queries, rng, config_.bias_norm);
  for (std::size_t l = 0; l < config_.decoder_depth; ++l) {
    decoder_.emplace_back("decoder" + std::to_string(l), block_options(config_, AttentionMode::kCross), rng);
  }
  head_ = ReconstructionHead("head", config_.channel_width, config_.upsample_factor(), rng);
}

std::size_t CompletionModel::min_points() const {
  return std::max(extractor_.min_points(), config_.input_queries);
}

CompletionVars CompletionModel::forward(const ForwardContext& ctx, const PointCloud& partial) const {
  require_valid(partial, "partial");
  if (partial.size() < min_points()) {
    throw DegenerateInputError("partial has " + std::to_string(partial.size()) + " points, the model needs " +
                               std::to_string(min_points()));
  }
  const FeatureExtractor::Output features = extractor_.forward(ctx, partial);
  ad::Var x = features.patches;
  for (std::size_t l = 0; l < encoder_.size(); ++l) {
    x = encoder_[l].forward(ctx, x);
    ctx.tap("encoder" + std::to_string(l), x);
  }
  ad::Var q = queries_.forward(ctx, x, partial, features.point_features);
  ctx.tap("queries", q);
  ad::Var y = q;
  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    y = decoder_[l].forward(ctx, y, x);
    ctx.tap("decoder" + std::to_string(l), y);
  }
  CompletionVars out{query_anchors(q), head_.forward(ctx, y, q)};
  ctx.tap("dense", out.dense);
  return out;
}

void CompletionModel::collect(ParameterList& out) {
  extractor_.collect(out);
  for (Sim3Block& b : encoder_) b.collect(out);
  queries_.collect(out);
  for (Sim3Block& b : decoder_) b.collect(out);
  head_.collect(out);
}

void CompletionModel::collect(ConstParameterList& out) const {
  extractor_.collect(out);
  for (const Sim3Block& b : encoder_) b.collect(out);
  queries_.collect(out);
  for (const Sim3Block& b : decoder_) b.collect(out);
  head_.collect(out);
}

std::unique_ptr<CompletionNetwork> make_network(const ModelConfig& config) {
  config.validate();
  if (config.architecture == "control") return std::make_unique<ControlModel>(config);
  return std::make_unique<CompletionModel>(config);
}

void save_network(const std::filesystem::path& dir, const CompletionNetwork& net) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "model_config.json", to_json(net.config()).dump(2) + "\n");
  save_parameters(dir, "params", net.parameters());
}

std::unique_ptr<CompletionNetwork> load_network(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(dir / "model_config.json"));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("model_config.json: " + std::string(e.what()));
  }
  std::unique_ptr<CompletionNetwork> net = make_network(model_config_from_json(j));
  load_parameters(dir, "params", net->parameters());
  return net;
}

}  // namespace simeq
