// SPDX-License-Identifier: Apache-2.0
//
// Two-term Chamfer loss, AdamW with step decay, and a deterministic training
// loop with checkpoint/resume.
//
// Each sample is trained in the frame given by self-normalizing its partial;
// the ground truth follows the same transform. Validation Chamfer is measured
// after mapping predictions back to the dataset frame.
#pragma once

#include "simeq/completion_model.hpp"
#include "simeq/toy_data.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace simeq {

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 5e-4;
  double lr_decay_factor = 0.9;
  std::size_t lr_decay_every = 15;
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  /// Worker threads for per-sample gradients. Results do not depend on it.
  std::size_t threads = 1;

  /// Throws UsageError.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// lr0 * factor^floor(epoch / every), epochs counted from 0.
double learning_rate_at(const TrainConfig& c, std::size_t epoch);

/// Adam with decoupled weight decay: p <- p (1 - lr wd) - lr mhat / (sqrt(vhat) + eps).
class AdamW {
 public:
  AdamW() = default;
  AdamW(ParameterList params, double beta1, double beta2, double epsilon);

  void step(const std::vector<Tensor>& grads, double lr, double weight_decay);
  std::uint64_t steps() const { return steps_; }

  ParameterBlob state() const;
  /// Throws UsageError when the blob does not match the parameter list.
  void load_state(const ParameterBlob& blob, std::uint64_t steps);

 private:
  ParameterList params_;
  std::vector<ad::Parameter> m_;
  std::vector<ad::Parameter> v_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  std::uint64_t steps_ = 0;
};

/// Sample expressed in the self-normalized frame of its partial.
struct PreparedSample {
  PointCloud input;
  PointCloud gt;
  PointCloud coarse_target;
  /// Normalized frame -> dataset frame.
  Sim3Transform to_dataset;
  PointCloud dataset_gt;
};

PreparedSample prepare_sample(const ToySample& s, std::size_t coarse_count);

/// chamfer(coarse, coarse_target) + chamfer(dense, gt).
ad::Var completion_loss(const CompletionVars& out, ad::Var coarse_target, ad::Var gt);
double completion_loss(const PointCloud& coarse, const PointCloud& dense, const PointCloud& gt,
                       std::size_t coarse_count);

struct LossAndGradients {
  double loss = 0.0;
  std::vector<Tensor> grads;  // aligned with net.parameters()
};

LossAndGradients loss_and_gradients(const CompletionNetwork& net, const PreparedSample& s);
/// Mean over samples, ordered reduction; threads only split the work.
LossAndGradients batch_loss_and_gradients(const CompletionNetwork& net, const std::vector<const PreparedSample*>& batch,
                                          std::size_t threads);

/// Mean raw Chamfer (dense vs gt) in the dataset frame, times 1000.
double validation_cd_x1000(const CompletionNetwork& net, const std::vector<PreparedSample>& samples,
                           std::size_t threads = 1);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_cd_l1_x1000 = 0.0;
  double wall_seconds = 0.0;
};

nlohmann::json to_json(const EpochRecord& r);

class Trainer {
 public:
  /// An empty validation set skips validation (val_cd_l1_x1000 = NaN).
  Trainer(CompletionNetwork& net, const std::vector<ToySample>& train, const std::vector<ToySample>& validation,
          const TrainConfig& config);

  std::size_t epochs_done() const { return epochs_done_; }
  const TrainConfig& config() const { return config_; }

  /// Throws NumericalError on a non-finite loss or gradient; parameters are
  /// left at their last finite state.
  EpochRecord run_epoch();
  /// Runs the remaining epochs up to config.epochs.
  std::vector<EpochRecord> run(const std::function<void(const EpochRecord&)>& on_epoch = {});

  double validation_cd() const;

  /// Writes model_config.json, params.*, optimizer.*, train_state.json.
  void save_checkpoint(const std::filesystem::path& dir) const;
  /// Restores parameters, optimizer state and epoch counter.
  void load_checkpoint(const std::filesystem::path& dir);

 private:
  CompletionNetwork& net_;
  TrainConfig config_;
  std::vector<PreparedSample> train_;
  std::vector<PreparedSample> validation_;
  AdamW optimizer_;
  std::size_t epochs_done_ = 0;
};

/// Deterministic split: every `every`-th sample (index % every == every - 1)
/// goes to validation. every = 0 puts everything in training.
std::pair<std::vector<ToySample>, std::vector<ToySample>> split_dataset(const std::vector<ToySample>& all,
                                                                        std::size_t every);

}  // namespace simeq
