// SPDX-License-Identifier: Apache-2.0
#include "simeq/training.hpp"

#include "simeq/errors.hpp"
#include "simeq/metrics.hpp"
#include "simeq/point_io.hpp"
#include "simeq/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

namespace simeq {

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw UsageError("train: learning_rate must be >= 0");
  if (!(weight_decay >= 0.0)) throw UsageError("train: weight_decay must be >= 0");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) throw UsageError("train: lr_decay_factor must lie in (0, 1]");
  if (lr_decay_every < 1) throw UsageError("train: lr_decay_every must be >= 1");
  if (batch_size < 1) throw UsageError("train: batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw UsageError("train: betas must lie in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw UsageError("train: adam_epsilon must be > 0");
  if (threads < 1) throw UsageError("train: threads must be >= 1");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"schema_version", 1},       {"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
          {"lr_decay_factor", c.lr_decay_factor}, {"lr_decay_every", c.lr_decay_every}, {"epochs", c.epochs},
          {"batch_size", c.batch_size}, {"beta1", c.beta1},                 {"beta2", c.beta2},
          {"adam_epsilon", c.adam_epsilon}, {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  try {
    if (j.value("schema_version", 1) != 1) throw UsageError("train config: unsupported schema_version");
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
    c.lr_decay_every = j.value("lr_decay_every", c.lr_decay_every);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("train config: ") + e.what());
  }
}

double learning_rate_at(const TrainConfig& c, std::size_t epoch) {
  return c.learning_rate * std::pow(c.lr_decay_factor, static_cast<double>(epoch / c.lr_decay_every));
}

// ---------------------------------------------------------------------------
// Optimizer

AdamW::AdamW(ParameterList params, double beta1, double beta2, double epsilon)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(epsilon) {
  for (const ad::Parameter* p : params_) {
    m_.push_back({p->name + ".adam_m", Tensor(p->value.shape())});
    v_.push_back({p->name + ".adam_v", Tensor(p->value.shape())});
  }
}

void AdamW::step(const std::vector<Tensor>& grads, double lr, double weight_decay) {
  if (grads.size() != params_.size()) throw std::invalid_argument("AdamW::step: gradient count mismatch");
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(beta1_, t);
  const double c2 = 1.0 - std::pow(beta2_, t);
  const double decay = 1.0 - lr * weight_decay;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k]->value;
    const Tensor& g = grads[k];
    if (g.shape() != p.shape()) throw std::invalid_argument("AdamW::step: gradient shape mismatch for " + params_[k]->name);
    Tensor& m = m_[k].value;
    Tensor& v = v_[k].value;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      p[i] = p[i] * decay - lr * update;
    }
  }
}

ParameterBlob AdamW::state() const {
  ConstParameterList all;
  for (const ad::Parameter& p : m_) all.push_back(&p);
  for (const ad::Parameter& p : v_) all.push_back(&p);
  return pack_parameters(all);
}

void AdamW::load_state(const ParameterBlob& blob, std::uint64_t steps) {
  ParameterList all;
  for (ad::Parameter& p : m_) all.push_back(&p);
  for (ad::Parameter& p : v_) all.push_back(&p);
  unpack_parameters(blob, all);
  steps_ = steps;
}

// ---------------------------------------------------------------------------
// Loss

PreparedSample prepare_sample(const ToySample& s, std::size_t coarse_count) {
  require_valid(s.partial, "training partial");
  require_valid(s.gt, "training ground truth");
  const NormalizedCloud nc = self_normalize(s.partial);
  PreparedSample p;
  p.input = nc.cloud;
  p.to_dataset = nc.to_input;
  p.gt = apply_transform(nc.to_input.inverse(), s.gt);
  if (p.gt.size() < coarse_count) {
    throw UsageError("ground truth has " + std::to_string(p.gt.size()) + " points, fewer than the coarse count " +
                     std::to_string(coarse_count));
  }
  p.coarse_target = farthest_point_subset(p.gt, coarse_count);
  p.dataset_gt = s.gt;
  return p;
}

ad::Var completion_loss(const CompletionVars& out, ad::Var coarse_target, ad::Var gt) {
  return chamfer_l1(out.coarse, coarse_target) + chamfer_l1(out.dense, gt);
}

double completion_loss(const PointCloud& coarse, const PointCloud& dense, const PointCloud& gt,
                       std::size_t coarse_count) {
  return chamfer_l1(coarse, farthest_point_subset(gt, coarse_count)) + chamfer_l1(dense, gt);
}

LossAndGradients loss_and_gradients(const CompletionNetwork& net, const PreparedSample& s) {
  ad::Tape tape;
  ForwardContext ctx{tape};
  const CompletionVars out = net.forward(ctx, s.input);
  ad::Var loss = completion_loss(out, tape.constant(points_tensor(s.coarse_target)), tape.constant(points_tensor(s.gt)));
  tape.backward(loss);
  LossAndGradients r;
  r.loss = loss.value()[0];
  for (const ad::Parameter* p : net.parameters()) r.grads.push_back(tape.parameter_grad(*p));
  return r;
}

namespace {

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

LossAndGradients batch_loss_and_gradients(const CompletionNetwork& net, const std::vector<const PreparedSample*>& batch,
                                          std::size_t threads) {
  if (batch.empty()) throw std::invalid_argument("batch_loss_and_gradients: empty batch");
  std::vector<LossAndGradients> parts(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) { parts[i] = loss_and_gradients(net, *batch[i]); });
  LossAndGradients total = std::move(parts[0]);
  for (std::size_t i = 1; i < parts.size(); ++i) {
    total.loss += parts[i].loss;
    for (std::size_t k = 0; k < total.grads.size(); ++k) {
      Tensor& g = total.grads[k];
      const Tensor& h = parts[i].grads[k];
      for (std::size_t e = 0; e < g.size(); ++e) g[e] += h[e];
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  total.loss *= inv;
  for (Tensor& g : total.grads)
    for (double& v : g.values()) v *= inv;
  return total;
}

double validation_cd_x1000(const CompletionNetwork& net, const std::vector<PreparedSample>& samples,
                           std::size_t threads) {
  if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<double> cd(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    const Completion c = net.complete(samples[i].input);
    cd[i] = chamfer_l1(apply_transform(samples[i].to_dataset, c.dense), samples[i].dataset_gt);
  });
  double sum = 0.0;
  for (double v : cd) sum += v;
  return kChamferReportScale * sum / static_cast<double>(cd.size());
}

nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"lr", r.lr},
          {"train_loss", r.train_loss},
          {"val_cd_l1_x1000", std::isfinite(r.val_cd_l1_x1000) ? nlohmann::json(r.val_cd_l1_x1000) : nlohmann::json()},
          {"wall_seconds", r.wall_seconds}};
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(CompletionNetwork& net, const std::vector<ToySample>& train, const std::vector<ToySample>& validation,
                 const TrainConfig& config)
    : net_(net), config_(config) {
  config_.validate();
  if (train.empty()) throw UsageError("train: empty training set");
  const std::size_t coarse = net.config().coarse_count();
  for (const ToySample& s : train) train_.push_back(prepare_sample(s, coarse));
  for (const ToySample& s : validation) validation_.push_back(prepare_sample(s, coarse));
  optimizer_ = AdamW(net_.parameters(), config_.beta1, config_.beta2, config_.adam_epsilon);
}

double Trainer::validation_cd() const { return validation_cd_x1000(net_, validation_, config_.threads); }

EpochRecord Trainer::run_epoch() {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t epoch = epochs_done_;
  const double lr = learning_rate_at(config_, epoch);
  std::vector<std::size_t> order(train_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(config_.seed, Stream::kShuffle, epoch);
  std::shuffle(order.begin(), order.end(), rng);

  double loss_sum = 0.0;
  std::size_t step = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += config_.batch_size, ++step) {
    std::vector<const PreparedSample*> batch;
    for (std::size_t i = begin; i < std::min(order.size(), begin + config_.batch_size); ++i) {
      batch.push_back(&train_[order[i]]);
    }
    const LossAndGradients lg = batch_loss_and_gradients(net_, batch, config_.threads);
    bool finite = std::isfinite(lg.loss);
    for (const Tensor& g : lg.grads) finite = finite && g.all_finite();
    if (!finite) {
      throw NumericalError("non-finite loss or gradient at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step) + " (loss " + std::to_string(lg.loss) + ")");
    }
    optimizer_.step(lg.grads, lr, config_.weight_decay);
    loss_sum += lg.loss * static_cast<double>(batch.size());
  }
  for (const ad::Parameter* p : net_.parameters()) {
    if (!p->value.all_finite()) throw NumericalError("parameter " + p->name + " became non-finite at epoch " +
                                                     std::to_string(epoch));
  }
  EpochRecord r;
  r.epoch = epoch;
  r.lr = lr;
  r.train_loss = loss_sum / static_cast<double>(order.size());
  r.val_cd_l1_x1000 = validation_cd();
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ++epochs_done_;
  return r;
}

std::vector<EpochRecord> Trainer::run(const std::function<void(const EpochRecord&)>& on_epoch) {
  std::vector<EpochRecord> out;
  while (epochs_done_ < config_.epochs) {
    out.push_back(run_epoch());
    if (on_epoch) on_epoch(out.back());
  }
  return out;
}

void Trainer::save_checkpoint(const std::filesystem::path& dir) const {
  save_network(dir, net_);
  const ParameterBlob opt = optimizer_.state();
  write_file_atomic(dir / "optimizer.bin", opt.bytes);
  write_file_atomic(dir / "optimizer.json", opt.manifest.dump(2) + "\n");
  const nlohmann::json state = {{"epochs_done", epochs_done_}, {"optimizer_steps", optimizer_.steps()},
                                {"train_config", to_json(config_)}};
  write_file_atomic(dir / "train_state.json", state.dump(2) + "\n");
}

void Trainer::load_checkpoint(const std::filesystem::path& dir) {
  try {
    const nlohmann::json mc = nlohmann::json::parse(read_file(dir / "model_config.json"));
    if (model_config_from_json(mc).architecture != net_.config().architecture) {
      throw UsageError("checkpoint architecture does not match the model");
    }
    load_parameters(dir, "params", net_.parameters());
    ParameterBlob opt;
    opt.bytes = read_file(dir / "optimizer.bin");
    opt.manifest = nlohmann::json::parse(read_file(dir / "optimizer.json"));
    const nlohmann::json state = nlohmann::json::parse(read_file(dir / "train_state.json"));
    optimizer_.load_state(opt, state.at("optimizer_steps").get<std::uint64_t>());
    epochs_done_ = state.at("epochs_done").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("checkpoint " + dir.string() + ": " + e.what());
  }
}

std::pair<std::vector<ToySample>, std::vector<ToySample>> split_dataset(const std::vector<ToySample>& all,
                                                                        std::size_t every) {
  std::pair<std::vector<ToySample>, std::vector<ToySample>> out;
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (every > 0 && i % every == every - 1) {
      out.second.push_back(all[i]);
    } else {
      out.first.push_back(all[i]);
    }
  }
  return out;
}

}  // namespace simeq
