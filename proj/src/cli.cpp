// SPDX-License-Identifier: Apache-2.0
#include "simeq/cli.hpp"

#include "simeq/audit.hpp"
#include "simeq/errors.hpp"
#include "simeq/point_io.hpp"
#include "simeq/protocol.hpp"
#include "simeq/training.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace simeq {
namespace fs = std::filesystem;

std::size_t default_threads() {
  if (const char* env = std::getenv("SIMEQ_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

std::string digest_path(const fs::path& path) {
  if (fs::is_regular_file(path)) return sha256_hex(read_file(path));
  if (!fs::is_directory(path)) throw UsageError("cannot digest " + path.string() + ": not found");
  std::vector<std::string> lines;
  for (const fs::directory_entry& e : fs::recursive_directory_iterator(path)) {
    if (!e.is_regular_file() || e.path().filename() == "run_manifest.json") continue;
    lines.push_back(fs::relative(e.path(), path).generic_string() + " " + sha256_hex(read_file(e.path())) + "\n");
  }
  std::sort(lines.begin(), lines.end());
  std::string all;
  for (const std::string& l : lines) all += l;
  return sha256_hex(all);
}

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class RunManifest {
 public:
  RunManifest(std::string command, const std::vector<std::string>& args)
      : command_(std::move(command)), args_(args), started_(utc_now()) {}

  void set_config(const nlohmann::json& config, std::uint64_t seed) {
    config_ = config;
    seed_ = seed;
  }
  void add_input(const std::string& role, const fs::path& p) { inputs_[role] = {{"path", p.string()}, {"sha256", digest_path(p)}}; }
  void add_output(const std::string& role, const fs::path& p) { outputs_[role] = p.string(); }

  void write(const fs::path& dir) const {
    const nlohmann::json j = {{"command", command_},
                              {"arguments", args_},
                              {"tool_version", kToolVersion},
                              {"seed", seed_},
                              {"config", config_},
                              {"config_sha256", sha256_hex(config_.dump())},
                              {"inputs", inputs_},
                              {"outputs", outputs_},
                              {"started_at", started_},
                              {"finished_at", utc_now()}};
    fs::create_directories(dir);
    write_file_atomic(dir / "run_manifest.json", j.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::vector<std::string> args_;
  std::string started_;
  nlohmann::json config_ = nlohmann::json::object();
  std::uint64_t seed_ = 0;
  nlohmann::json inputs_ = nlohmann::json::object();
  nlohmann::json outputs_ = nlohmann::json::object();
};

nlohmann::json read_json_file(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_file(p));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(p.string() + ": " + e.what());
  }
}

fs::path manifest_dir(const fs::path& output_file) {
  const fs::path parent = output_file.parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

// ---------------------------------------------------------------------------
// gen

struct GenOptions {
  std::string spec;
  long long n = -1;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_gen(const GenOptions& o, const std::vector<std::string>& args, std::ostream& out) {
  if (o.n < 1) throw UsageError("gen: --n must be >= 1");
  ToyDatasetConfig cfg = o.spec.empty() ? ToyDatasetConfig::defaults() : toy_config_from_json(read_json_file(o.spec));
  cfg.validate();
  RunManifest manifest("gen", args);
  manifest.set_config(to_json(cfg), o.seed);
  if (!o.spec.empty()) manifest.add_input("spec", o.spec);
  const auto samples = generate_toy_dataset(cfg, static_cast<std::size_t>(o.n), o.seed);
  write_dataset(o.out, samples, {{"seed", o.seed}, {"config", to_json(cfg)}});
  manifest.add_output("dataset", o.out);
  manifest.write(o.out);
  out << "wrote " << samples.size() << " pairs to " << o.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string data;
  std::string out;
  std::string preset = "desk";
  std::string arch;
  std::string config;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
  std::optional<double> weight_decay;
  std::optional<std::size_t> batch_size;
  std::optional<std::uint64_t> seed;
  std::size_t val_every = 8;
  bool resume = false;
  std::size_t threads = 1;
};

void replace_checkpoint(const fs::path& dir, const Trainer& trainer) {
  const fs::path tmp = dir.string() + ".tmp";
  fs::remove_all(tmp);
  trainer.save_checkpoint(tmp);
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

int cmd_train(const TrainOptions& o, const std::vector<std::string>& args, std::ostream& out) {
  ModelConfig mc = ModelConfig::preset(o.preset);
  TrainConfig tc;
  if (!o.config.empty()) {
    const nlohmann::json j = read_json_file(o.config);
    if (j.contains("model")) {
      nlohmann::json merged = to_json(mc);
      merged.update(j.at("model"));
      mc = model_config_from_json(merged);
    }
    if (j.contains("train")) tc = train_config_from_json(j.at("train"));
  }
  if (!o.arch.empty()) mc.architecture = o.arch;
  if (o.seed) {
    mc.seed = *o.seed;
    tc.seed = *o.seed;
  }
  if (o.epochs) tc.epochs = *o.epochs;
  if (o.lr) tc.learning_rate = *o.lr;
  if (o.weight_decay) tc.weight_decay = *o.weight_decay;
  if (o.batch_size) tc.batch_size = *o.batch_size;
  tc.threads = o.threads;
  mc.validate();
  tc.validate();

  const std::vector<ToySample> data = read_dataset(o.data);
  auto [train_set, val_set] = split_dataset(data, o.val_every);
  if (train_set.empty()) throw UsageError("train: no training samples after the validation split");

  const fs::path out_dir(o.out);
  const fs::path ckpt = out_dir / "checkpoint";
  const fs::path log_path = out_dir / "train_log.jsonl";
  fs::create_directories(out_dir);

  RunManifest manifest("train", args);
  manifest.set_config({{"model", to_json(mc)}, {"train", to_json(tc)}, {"val_every", o.val_every}}, tc.seed);
  manifest.add_input("data", o.data);

  std::unique_ptr<CompletionNetwork> net = make_network(mc);
  Trainer trainer(*net, train_set, val_set, tc);
  std::string log;
  if (o.resume && fs::exists(ckpt / "train_state.json")) {
    trainer.load_checkpoint(ckpt);
    if (fs::exists(log_path)) log = read_file(log_path);
    out << "resumed at epoch " << trainer.epochs_done() << "\n";
  } else {
    replace_checkpoint(ckpt, trainer);
  }
  write_file_atomic(log_path, log);

  try {
    trainer.run([&](const EpochRecord& r) {
      log += to_json(r).dump() + "\n";
      write_file_atomic(log_path, log);
      replace_checkpoint(ckpt, trainer);
      out << "epoch " << r.epoch << " lr " << r.lr << " loss " << r.train_loss << " val_cd_x1000 "
          << r.val_cd_l1_x1000 << " (" << r.wall_seconds << " s)\n";
    });
  } catch (const NumericalError&) {
    manifest.add_output("checkpoint", ckpt);
    manifest.add_output("log", log_path);
    manifest.write(out_dir);
    throw;
  }
  manifest.add_output("checkpoint", ckpt);
  manifest.add_output("log", log_path);
  manifest.write(out_dir);
  out << "checkpoint written to " << ckpt.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// complete

struct CompleteOptions {
  std::string checkpoint;
  std::string input;
  std::string out;
  std::string coarse_out;
};

fs::path checkpoint_dir(const std::string& path) {
  const fs::path p(path);
  if (fs::exists(p / "model_config.json")) return p;
  if (fs::exists(p / "checkpoint" / "model_config.json")) return p / "checkpoint";
  throw UsageError("no checkpoint at " + path);
}

int cmd_complete(const CompleteOptions& o, const std::vector<std::string>& args, std::ostream& out) {
  const fs::path ckpt = checkpoint_dir(o.checkpoint);
  std::unique_ptr<CompletionNetwork> net = load_network(ckpt);
  const PointCloud input = read_point_cloud(o.input);
  require_valid(input, "input");
  if (input.size() < net->min_points()) {
    throw UsageError("input has " + std::to_string(input.size()) + " points, the model needs at least " +
                     std::to_string(net->min_points()));
  }
  RunManifest manifest("complete", args);
  manifest.set_config(to_json(net->config()), net->config().seed);
  manifest.add_input("checkpoint", ckpt);
  manifest.add_input("input", o.input);

  const NormalizedCloud nc = self_normalize(input);
  const Completion c = net->complete(nc.cloud);
  PointCloud dense = apply_transform(nc.to_input, c.dense);
  dense.frame_label = input.frame_label;
  write_point_cloud(o.out, dense);
  manifest.add_output("dense", o.out);
  if (!o.coarse_out.empty()) {
    write_point_cloud(o.coarse_out, apply_transform(nc.to_input, c.coarse));
    manifest.add_output("coarse", o.coarse_out);
  }
  manifest.write(manifest_dir(o.out));
  out << "wrote " << dense.size() << " points to " << o.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct GroupOptions {
  std::string group = "identity";
  std::uint64_t seed = 0;
  std::optional<double> scale_low;
  std::optional<double> scale_high;
  std::optional<double> translation;

  TransformDistribution distribution() const {
    TransformDistribution d = TransformDistribution::by_name(group, seed);
    if (scale_low) d.scale_low = *scale_low;
    if (scale_high) d.scale_high = *scale_high;
    if (translation) d.translation_range = *translation;
    try {
      d.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return d;
  }
};

nlohmann::json distribution_json(const TransformDistribution& d) {
  return {{"rotation", d.rotation_mode == RotationMode::kUniformSO3 ? "uniform-so3" : "identity"},
          {"scale_low", d.scale_low},
          {"scale_high", d.scale_high},
          {"translation_range", d.translation_range},
          {"seed", d.seed}};
}

struct EvalOptions {
  std::string checkpoint;
  std::string data;
  GroupOptions group;
  std::string out;
  std::string csv;
  bool mmd = false;
  std::optional<double> max_cd;
  std::optional<double> min_f1;
  std::size_t threads = 1;
};

int cmd_eval(const EvalOptions& o, const std::vector<std::string>& args, std::ostream& out) {
  const fs::path ckpt = checkpoint_dir(o.checkpoint);
  std::unique_ptr<CompletionNetwork> net = load_network(ckpt);
  const std::vector<ToySample> data = read_dataset(o.data);
  ProtocolConfig cfg;
  cfg.test_group = o.group.distribution();
  cfg.threads = o.threads;
  std::vector<PointCloud> refs;
  if (o.mmd) {
    for (const ToySample& s : data) refs.push_back(s.gt);
  }
  const MetricsReport report = run_protocol(*net, data, cfg, o.mmd ? &refs : nullptr);

  RunManifest manifest("eval", args);
  manifest.set_config({{"test_group", distribution_json(cfg.test_group)}, {"f_threshold", cfg.f_threshold}},
                      o.group.seed);
  manifest.add_input("checkpoint", ckpt);
  manifest.add_input("data", o.data);
  nlohmann::json j = to_json(report);
  j["test_group"] = distribution_json(cfg.test_group);
  bool pass = true;
  nlohmann::json gates = nlohmann::json::object();
  if (o.max_cd) {
    const bool ok = report.cd_l1_x1000 <= *o.max_cd;
    gates["max_cd"] = {{"threshold", *o.max_cd}, {"pass", ok}};
    pass = pass && ok;
  }
  if (o.min_f1) {
    const bool ok = report.f1 >= *o.min_f1;
    gates["min_f1"] = {{"threshold", *o.min_f1}, {"pass", ok}};
    pass = pass && ok;
  }
  j["gates"] = gates;
  if (!o.out.empty()) {
    write_file_atomic(o.out, j.dump(2) + "\n");
    manifest.add_output("report", o.out);
  }
  if (!o.csv.empty()) {
    write_file_atomic(o.csv, per_sample_csv(report));
    manifest.add_output("csv", o.csv);
  }
  if (!o.out.empty()) manifest.write(manifest_dir(o.out));
  out << "group " << o.group.group << ": cd_l1_x1000 " << report.cd_l1_x1000 << " f1 " << report.f1;
  if (report.fidelity) out << " fidelity " << *report.fidelity;
  if (report.mmd) out << " mmd " << *report.mmd;
  out << "\n";
  return pass ? kExitOk : kExitThreshold;
}

// ---------------------------------------------------------------------------
// audit

GroupOptions sim3_group() {
  GroupOptions g;
  g.group = "sim3";
  return g;
}

struct AuditOptions {
  std::string checkpoint;
  std::string random_preset;
  double bias_norm = 0.0;
  std::string data;
  std::size_t inputs = 8;
  GroupOptions group = sim3_group();
  std::size_t trials = 100;
  double bias_scale = 1.0;
  bool sweep = false;
  std::optional<double> max_error;
  std::string out;
  std::string plot_csv_path;
  std::size_t threads = 1;
};

int cmd_audit(const AuditOptions& o, const std::vector<std::string>& args, std::ostream& out) {
  if (o.trials < 1) throw UsageError("audit: --trials must be >= 1");
  RunManifest manifest("audit", args);
  std::unique_ptr<CompletionNetwork> net;
  if (!o.checkpoint.empty()) {
    const fs::path ckpt = checkpoint_dir(o.checkpoint);
    net = load_network(ckpt);
    manifest.add_input("checkpoint", ckpt);
  } else if (!o.random_preset.empty()) {
    ModelConfig mc = ModelConfig::preset(o.random_preset);
    mc.bias_norm = o.bias_norm;
    mc.seed = o.group.seed;
    net = make_network(mc);
  } else {
    throw UsageError("audit: give --checkpoint or --random-preset");
  }

  std::vector<PointCloud> inputs;
  if (!o.data.empty()) {
    const std::vector<ToySample> data = read_dataset(o.data);
    for (std::size_t i = 0; i < std::min(o.inputs, data.size()); ++i) inputs.push_back(self_normalize(data[i].partial).cloud);
    manifest.add_input("data", o.data);
  } else {
    Rng rng = make_rng(o.group.seed, Stream::kAudit);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::size_t i = 0; i < o.inputs; ++i) {
      PointCloud pc;
      for (std::size_t p = 0; p < net->config().n_in; ++p) pc.points.emplace_back(u(rng), u(rng), u(rng));
      inputs.push_back(std::move(pc));
    }
  }

  AuditConfig cfg;
  cfg.distribution = o.group.distribution();
  cfg.trials = o.trials;
  cfg.bias_scale = o.bias_scale;
  if (!o.sweep) cfg.sweep_scales.clear();
  cfg.threads = o.threads;
  const EquivarianceAuditReport report = audit_equivariance(*net, inputs, cfg);

  nlohmann::json j = to_json(report);
  j["distribution"] = distribution_json(cfg.distribution);
  j["bias_scale"] = cfg.bias_scale;
  bool pass = true;
  if (o.max_error) {
    pass = report.end_to_end.max < *o.max_error;
    for (const auto& [name, s] : report.per_layer) pass = pass && s.max < *o.max_error;
    j["gate"] = {{"max_error", *o.max_error}, {"pass", pass}};
  }
  manifest.set_config({{"distribution", distribution_json(cfg.distribution)},
                       {"trials", cfg.trials},
                       {"bias_scale", cfg.bias_scale}},
                      o.group.seed);
  if (!o.out.empty()) {
    write_file_atomic(o.out, j.dump(2) + "\n");
    manifest.add_output("report", o.out);
    manifest.write(manifest_dir(o.out));
  }
  if (!o.plot_csv_path.empty()) write_file_atomic(o.plot_csv_path, plot_csv(report));
  out << "end-to-end relative error: mean " << report.end_to_end.mean << " max " << report.end_to_end.max << "\n";
  for (const auto& [scale, s] : report.bias_sweep) out << "  bias scale " << scale << ": max " << s.max << "\n";
  return pass ? kExitOk : kExitThreshold;
}

void add_group_options(CLI::App* cmd, GroupOptions& g) {
  cmd->add_option("--group", g.group, "Transform group: identity, so3, se3, sim3")->capture_default_str();
  cmd->add_option("--transform-seed", g.seed, "Seed for sampled transforms")->capture_default_str();
  cmd->add_option("--scale-low", g.scale_low, "Lower scale bound");
  cmd->add_option("--scale-high", g.scale_high, "Upper scale bound");
  cmd->add_option("--translation", g.translation, "Translation half-range");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"SIM(3)-equivariant point cloud completion", "simeq"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  const std::size_t threads = default_threads();

  GenOptions gen;
  CLI::App* gen_cmd = app.add_subcommand("gen", "Generate a toy (partial, complete) dataset");
  gen_cmd->add_option("--spec", gen.spec, "Dataset spec JSON (defaults when omitted)");
  gen_cmd->add_option("--n", gen.n, "Number of pairs")->required();
  gen_cmd->add_option("--seed", gen.seed, "Root seed")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();

  TrainOptions train;
  train.threads = threads;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a completion model");
  train_cmd->add_option("--data", train.data, "Dataset directory")->required();
  train_cmd->add_option("--out", train.out, "Output directory")->required();
  train_cmd->add_option("--preset", train.preset, "Model preset: desk or full")->capture_default_str();
  train_cmd->add_option("--arch", train.arch, "equivariant or control");
  train_cmd->add_option("--config", train.config, "JSON with optional \"model\" and \"train\" sections");
  train_cmd->add_option("--epochs", train.epochs, "Epochs");
  train_cmd->add_option("--lr", train.lr, "Initial learning rate");
  train_cmd->add_option("--weight-decay", train.weight_decay, "Decoupled weight decay");
  train_cmd->add_option("--batch-size", train.batch_size, "Samples per step");
  train_cmd->add_option("--seed", train.seed, "Root seed for weights and shuffling");
  train_cmd->add_option("--val-every", train.val_every, "Every n-th sample is held out (0: none)")
      ->capture_default_str();
  train_cmd->add_flag("--resume", train.resume, "Continue from <out>/checkpoint");
  train_cmd->add_option("--threads", train.threads, "Worker threads")->capture_default_str();

  CompleteOptions complete;
  CLI::App* complete_cmd = app.add_subcommand("complete", "Complete one partial cloud in its own frame");
  complete_cmd->add_option("--checkpoint", complete.checkpoint, "Checkpoint directory")->required();
  complete_cmd->add_option("--input", complete.input, "Input .xyz or .ply")->required();
  complete_cmd->add_option("--out", complete.out, "Dense output .xyz or .ply")->required();
  complete_cmd->add_option("--coarse-out", complete.coarse_out, "Coarse output file");

  EvalOptions eval;
  eval.threads = threads;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate under the de-biased protocol");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint directory")->required();
  eval_cmd->add_option("--data", eval.data, "Dataset directory")->required();
  add_group_options(eval_cmd, eval.group);
  eval_cmd->add_option("--out", eval.out, "Report JSON");
  eval_cmd->add_option("--csv", eval.csv, "Per-sample CSV");
  eval_cmd->add_flag("--mmd", eval.mmd, "Also report MMD against the dataset ground truths");
  eval_cmd->add_option("--max-cd", eval.max_cd, "Fail (exit 4) when mean CD-l1 x1000 exceeds this");
  eval_cmd->add_option("--min-f1", eval.min_f1, "Fail (exit 4) when mean F1 is below this");
  eval_cmd->add_option("--threads", eval.threads, "Worker threads")->capture_default_str();

  AuditOptions audit;
  audit.threads = threads;
  CLI::App* audit_cmd = app.add_subcommand("audit", "Measure equivariance error");
  audit_cmd->add_option("--checkpoint", audit.checkpoint, "Checkpoint directory");
  audit_cmd->add_option("--random-preset", audit.random_preset, "Audit freshly initialized weights of a preset");
  audit_cmd->add_option("--bias-norm", audit.bias_norm, "Bias norm for --random-preset")->capture_default_str();
  audit_cmd->add_option("--data", audit.data, "Dataset whose partials are used as inputs");
  audit_cmd->add_option("--inputs", audit.inputs, "Number of input clouds")->capture_default_str();
  add_group_options(audit_cmd, audit.group);
  audit_cmd->add_option("--trials", audit.trials, "Trials")->capture_default_str();
  audit_cmd->add_option("--bias-scale", audit.bias_scale, "Global bias scale")->capture_default_str();
  audit_cmd->add_flag("--sweep", audit.sweep, "Sweep bias scale over 1, 0.1, 0.01, 0");
  audit_cmd->add_option("--max-error", audit.max_error, "Fail (exit 4) when any max error reaches this");
  audit_cmd->add_option("--out", audit.out, "Report JSON");
  audit_cmd->add_option("--plot-csv", audit.plot_csv_path, "Transform magnitude vs error CSV");
  audit_cmd->add_option("--threads", audit.threads, "Worker threads")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen(gen, args, out);
    if (train_cmd->parsed()) return cmd_train(train, args, out);
    if (complete_cmd->parsed()) return cmd_complete(complete, args, out);
    if (eval_cmd->parsed()) return cmd_eval(eval, args, out);
    if (audit_cmd->parsed()) return cmd_audit(audit, args, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DegenerateInputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace simeq
