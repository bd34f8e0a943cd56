// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate. Runs every criterion at its stated tolerance and prints one
// PASS/FAIL line per criterion. Exit status 0 only when all pass.
#include "CLI11.hpp"
#include "metric_oracles.hpp"
#include "op_catalog.hpp"
#include "simeq/audit.hpp"
#include "simeq/cli.hpp"
#include "simeq/point_io.hpp"
#include "simeq/protocol.hpp"
#include "simeq/spatial.hpp"
#include "test_util.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

namespace simeq {
namespace {

namespace fs = std::filesystem;
using testing::random_cloud;

struct Outcome {
  bool pass = false;
  std::string detail;
  nlohmann::json data = nlohmann::json::object();
};

struct Criterion {
  int id;
  std::string title;
  std::function<Outcome(double& budget_seconds)> run;
};

// s in [0.1, 10], |t| <= 10.
TransformDistribution wide_sim3(std::uint64_t seed) {
  return TransformDistribution::sim3(seed, 0.1, 10.0, 10.0 / std::sqrt(3.0));
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double elapsed_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// 1. Per-layer equivariance

Outcome per_layer_equivariance(double& budget) {
  budget = 60.0;
  constexpr std::size_t kTrials = 1000;
  constexpr double kTol = 1e-7;
  Rng rng(101);
  VnLinear lin("lin", 6, 5, rng);
  VnNonlinear relu("relu", 6, 5, rng, 0.0);
  VnNonlinear leaky("leaky", 6, 5, rng, 0.2);
  VnMax max("max", 6, rng);
  VnLayerNorm norm("norm", 8);
  for (std::size_t c = 0; c < 8; ++c) {
    norm.gain()[c] = 1.0 + 0.1 * static_cast<double>(c);
    norm.offset()[c] = 0.05 * static_cast<double>(c) - 0.2;
  }
  VnAttention attention("att", 8, 2, rng);
  Restoration restore("restore", 8, rng);
  DgcnnLayer dgcnn("dgcnn", 4, 6, rng, 0.2);
  QueryGenerator queries("queries", 8, 4, 6, 5, rng);
  ReconstructionHead head("head", 8, 4, rng);

  std::map<std::string, double> worst;
  const auto dist = wide_sim3(101);
  for (std::uint64_t i = 0; i < kTrials; ++i) {
    const Sim3Transform g = sample_transform(dist, i);
    const Sim3Transform rot(1.0, g.rotation(), Vec3::Zero());
    auto track = [&](const std::string& name, const Tensor& a, const Tensor& b) {
      worst[name] = std::max(worst[name], relative_error(a, b));
    };

    const VectorFeatureSet v = VectorFeatureSet::random(8, 6, rng);
    const VectorFeatureSet gv = v.transformed(g);
    track("VN-Linear", lin(gv).tensor(), lin(v).transformed(g).tensor());
    track("VN-ReLU", relu(gv).tensor(), relu(v).transformed(g).tensor());
    track("VN-LeakyReLU", leaky(gv).tensor(), leaky(v).transformed(g).tensor());
    track("VN-Max", max(gv).tensor(), max(v).transformed(g).tensor());

    // Canonicalization removes s and t and follows R.
    const VectorFeatureSet w = VectorFeatureSet::random(6, 8, rng);
    const VectorFeatureSet gw = w.transformed(g);
    track("VN-LayerNorm", norm(gw).tensor(), norm(w).transformed(rot).tensor());

    const auto a = attention_weights(norm, attention, w, w);
    const auto ga = attention_weights(norm, attention, gw, gw);
    for (std::size_t h = 0; h < a.size(); ++h) track("attention weights", ga[h], a[h]);

    {
      // Residual follows g, the attention update follows R only.
      const VectorFeatureSet z = VectorFeatureSet::random(6, 8, rng);
      ad::Tape tape(false);
      ForwardContext ctx{tape};
      const Tensor moved =
          restore.forward(ctx, tape.constant(gw.tensor()), tape.constant(z.transformed(rot).tensor())).value();
      const Tensor base = restore.forward(ctx, tape.constant(w.tensor()), tape.constant(z.tensor())).value();
      track("restoration", moved, VectorFeatureSet(base).transformed(g).tensor());
    }

    {
      const PointCloud pc = random_cloud(24, 1000 + i);
      const KnnGraph graph = build_knn(pc, 5);
      const VectorFeatureSet x = VectorFeatureSet::random(24, 4, rng);
      track("DGCNN layer", dgcnn(x.transformed(g), graph).tensor(), dgcnn(x, graph).transformed(g).tensor());
    }

    {
      const PointCloud partial = random_cloud(20, 2000 + i);
      const VectorFeatureSet enc = VectorFeatureSet::random(7, 8, rng);
      const VectorFeatureSet feats = VectorFeatureSet::random(20, 4, rng);
      auto run = [&](const Sim3Transform& t) {
        ad::Tape tape(false);
        ForwardContext ctx{tape};
        return queries
            .forward(ctx, tape.constant(enc.transformed(t).tensor()), apply_transform(t, partial),
                     tape.constant(feats.transformed(t).tensor()))
            .value();
      };
      track("query generator", run(g), VectorFeatureSet(run(Sim3Transform::identity())).transformed(g).tensor());
    }

    {
      const VectorFeatureSet dec = VectorFeatureSet::random(10, 8, rng);
      const VectorFeatureSet q = VectorFeatureSet::random(10, 8, rng);
      track("reconstruction head", points_tensor(head(dec.transformed(g), q.transformed(g))),
            points_tensor(apply_transform(g, head(dec, q))));
    }
  }

  Outcome o;
  o.pass = true;
  double overall = 0.0;
  std::string failing;
  for (const auto& [name, e] : worst) {
    o.data[name] = e;
    overall = std::max(overall, e);
    if (!(e < kTol)) {
      o.pass = false;
      failing += " " + name;
    }
  }
  o.detail = std::to_string(worst.size()) + " layers x " + std::to_string(kTrials) + " trials, max relative error " +
             sci(overall) + " (limit 1e-7)" + (failing.empty() ? "" : "; failing:" + failing);
  return o;
}

// ---------------------------------------------------------------------------
// 2. End-to-end equivariance

std::vector<PointCloud> audit_inputs(std::size_t count, std::size_t points, std::uint64_t seed) {
  std::vector<PointCloud> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(random_cloud(points, seed + i));
  return out;
}

Outcome end_to_end_equivariance(double& budget) {
  budget = 120.0;
  ModelConfig mc = ModelConfig::desk();
  mc.seed = 202;
  CompletionModel model(mc);
  AuditConfig cfg;
  cfg.distribution = wide_sim3(202);
  cfg.trials = 200;
  cfg.sweep_scales.clear();
  const EquivarianceAuditReport r = audit_equivariance(model, audit_inputs(4, mc.n_in, 202), cfg);
  Outcome o;
  o.pass = r.trials == 200 && r.end_to_end.max < 1e-5;
  o.detail = "desk model, random weights, 200 trials: max relative error " + sci(r.end_to_end.max) + " (limit 1e-5)";
  o.data = {{"max", r.end_to_end.max}, {"mean", r.end_to_end.mean}};
  return o;
}

// ---------------------------------------------------------------------------
// 3. Bias sweep

Outcome bias_sweep(double& budget) {
  budget = 0.0;
  ModelConfig mc = ModelConfig::desk();
  mc.seed = 303;
  mc.bias_norm = 1e-3;
  CompletionModel model(mc);
  AuditConfig cfg;
  cfg.distribution = wide_sim3(303);
  cfg.trials = 20;
  const EquivarianceAuditReport r = audit_equivariance(model, audit_inputs(4, mc.n_in, 303), cfg);
  Outcome o;
  o.data = nlohmann::json::array();
  std::string curve;
  for (const auto& [scale, s] : r.bias_sweep) {
    curve += (curve.empty() ? "" : ", ") + sci(scale) + ": " + sci(s.max);
    o.data.push_back({{"bias_scale", scale}, {"max", s.max}, {"mean", s.mean}});
  }
  const double last = r.bias_sweep.empty() ? 1.0 : r.bias_sweep.back().second.max;
  o.pass = r.bias_sweep.size() == 4 && r.sweep_monotone() && last < 1e-5;
  o.detail = "bias norm 1e-3, 20 trials, max error by scale {" + curve + "}" +
             (r.sweep_monotone() ? ", non-increasing" : ", NOT monotone");
  return o;
}

// ---------------------------------------------------------------------------
// 4. Gradient checks

Outcome gradient_checks(double& budget) {
  budget = 300.0;
  std::vector<testing::GradCase> cases = testing::primitive_grad_cases(404);
  for (testing::GradCase& c : testing::layer_grad_cases(404)) cases.push_back(std::move(c));
  Outcome o;
  o.pass = true;
  double worst = 0.0;
  std::string worst_name, failing;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const testing::GradCase& c = cases[i];
    const testing::GradCheckResult r = testing::check_gradients(c.f, c.leaves, 404 + i, c.per_leaf, c.step);
    o.data[c.name] = {{"relative_error", r.relative_error}, {"coordinates", r.coordinates}};
    if (r.relative_error > worst) {
      worst = r.relative_error;
      worst_name = c.name;
    }
    if (!(r.relative_error < 1e-4) || r.coordinates < 64) {
      o.pass = false;
      failing += " " + c.name;
    }
  }
  o.detail = std::to_string(cases.size()) + " operations, worst relative error " + sci(worst) + " (" + worst_name +
             ", limit 1e-4), >= 64 coordinates each" + (failing.empty() ? "" : "; failing:" + failing);
  return o;
}

// ---------------------------------------------------------------------------
// 5. Metric oracles

Outcome metric_oracles(double& budget) {
  budget = 0.0;
  Rng rng(505);
  std::uniform_int_distribution<std::size_t> size(1, 128);
  std::uniform_real_distribution<double> tau(0.05, 0.5);
  double cd = 0.0, fs = 0.0, fid = 0.0, mm = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const PointCloud a = random_cloud(size(rng), 10000 + 5 * i, 0.3);
    const PointCloud b = random_cloud(size(rng), 10001 + 5 * i, 0.3);
    const std::vector<PointCloud> refs = {b, random_cloud(size(rng), 10002 + 5 * i, 0.3),
                                          random_cloud(size(rng), 10003 + 5 * i, 0.3)};
    const double t = tau(rng);
    cd = std::max(cd, std::abs(chamfer_l1(a, b) - testing::brute_chamfer(a, b)));
    fs = std::max(fs, std::abs(f_score(a, b, t) - testing::brute_f_score(a, b, t)));
    fid = std::max(fid, std::abs(fidelity(a, b) - testing::brute_fidelity(a, b)));
    mm = std::max(mm, std::abs(mmd(a, refs) - testing::brute_mmd(a, refs)));
  }
  Outcome o;
  o.pass = cd <= 1e-12 && fs <= 1e-12 && fid <= 1e-12 && mm <= 1e-12;
  o.detail = "100 instances, n <= 128, max |diff| chamfer " + sci(cd) + ", f_score " + sci(fs) + ", fidelity " +
             sci(fid) + ", mmd " + sci(mm) + " (limit 1e-12)";
  o.data = {{"chamfer", cd}, {"f_score", fs}, {"fidelity", fid}, {"mmd", mm}};
  return o;
}

// ---------------------------------------------------------------------------
// 6. De-biased protocol demonstration

// Both models get the same data, schedule and seed.
constexpr std::size_t kDemoPairs = 288;
constexpr std::size_t kDemoValEvery = 9;  // 256 train / 32 validation
constexpr std::size_t kDemoTestPairs = 64;
constexpr std::size_t kDemoEpochs = 40;
constexpr double kDemoLearningRate = 3e-3;

struct DemoRun {
  double seconds = 0.0;
  double untrained_val = 0.0;
  double trained_val = 0.0;
  double cd_identity = 0.0;
  double cd_sim3 = 0.0;
};

DemoRun train_and_evaluate(const std::string& arch, const std::vector<ToySample>& train,
                           const std::vector<ToySample>& val, const std::vector<ToySample>& test) {
  ModelConfig mc = ModelConfig::desk();
  mc.architecture = arch;
  mc.seed = 606;
  auto net = make_network(mc);
  TrainConfig tc;
  tc.learning_rate = kDemoLearningRate;
  tc.epochs = kDemoEpochs;
  tc.seed = 606;
  DemoRun r;
  const auto t0 = std::chrono::steady_clock::now();
  Trainer trainer(*net, train, val, tc);
  r.untrained_val = trainer.validation_cd();
  const auto records = trainer.run();
  r.seconds = elapsed_since(t0);
  r.trained_val = records.back().val_cd_l1_x1000;
  ProtocolConfig identity;
  ProtocolConfig sim3;
  sim3.test_group = wide_sim3(607);
  r.cd_identity = run_protocol(*net, test, identity).cd_l1_x1000;
  r.cd_sim3 = run_protocol(*net, test, sim3).cd_l1_x1000;
  return r;
}

Outcome protocol_demo(double& budget) {
  budget = 0.0;
  const auto [train, val] = split_dataset(generate_toy_dataset(ToyDatasetConfig::defaults(), kDemoPairs, 606),
                                          kDemoValEvery);
  const auto test = generate_toy_dataset(ToyDatasetConfig::defaults(), kDemoTestPairs, 6060);
  const DemoRun eq = train_and_evaluate("equivariant", train, val, test);
  const DemoRun ctl = train_and_evaluate("control", train, val, test);

  const double eq_gap = std::abs(eq.cd_sim3 - eq.cd_identity) / eq.cd_identity;
  const double ctl_ratio = ctl.cd_sim3 / ctl.cd_identity;
  const bool time_ok = eq.seconds <= 1800.0;
  Outcome o;
  o.pass = train.size() >= 256 && time_ok && eq_gap <= 0.01 && ctl_ratio >= 2.0;
  o.detail = std::to_string(train.size()) + " training pairs, " + std::to_string(kDemoEpochs) +
             " epochs; equivariant CD x1000 identity " + sci(eq.cd_identity) + " vs SIM(3) " + sci(eq.cd_sim3) +
             " (gap " + sci(100.0 * eq_gap) + "%, limit 1%); control " + sci(ctl.cd_identity) + " -> " +
             sci(ctl.cd_sim3) + " (" + sci(ctl_ratio) + "x, need >= 2x); equivariant training " +
             sci(eq.seconds) + " s (limit 1800 s)";
  auto run_json = [](const DemoRun& r) {
    return nlohmann::json{{"train_seconds", r.seconds},   {"untrained_val_cd_x1000", r.untrained_val},
                          {"trained_val_cd_x1000", r.trained_val}, {"cd_identity_x1000", r.cd_identity},
                          {"cd_sim3_x1000", r.cd_sim3}};
  };
  o.data = {{"equivariant", run_json(eq)},
            {"control", run_json(ctl)},
            {"epochs", kDemoEpochs},
            {"learning_rate", kDemoLearningRate},
            {"train_pairs", train.size()}};
  return o;
}

// ---------------------------------------------------------------------------
// 7. KNN invariance

Outcome knn_invariance(double& budget) {
  budget = 0.0;
  std::size_t mismatches = 0, checks = 0;
  for (std::uint64_t c = 0; c < 50; ++c) {
    const PointCloud pc = random_cloud(64, 7000 + c);
    const KnnGraph base = build_knn(pc, 16);
    const auto dist = wide_sim3(700 + c);
    for (std::uint64_t t = 0; t < 100; ++t) {
      ++checks;
      if (build_knn(apply_transform(sample_transform(dist, t), pc), 16).indices != base.indices) ++mismatches;
    }
  }
  Outcome o;
  o.pass = mismatches == 0;
  o.detail = std::to_string(checks) + " transformed clouds (50 clouds x 100 transforms, k = 16): " +
             std::to_string(mismatches) + " index mismatches";
  o.data = {{"checks", checks}, {"mismatches", mismatches}};
  return o;
}

// ---------------------------------------------------------------------------
// 8. Training determinism

int cli(const std::vector<std::string>& args, std::string& log) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  log += out.str() + err.str();
  return code;
}

Outcome train_determinism(double& budget, const fs::path& work) {
  budget = 0.0;
  const fs::path root = work / "determinism";
  fs::remove_all(root);
  std::string log;
  Outcome o;
  if (cli({"gen", "--n", "8", "--seed", "808", "--out", (root / "data").string()}, log) != kExitOk) {
    o.detail = "gen failed: " + log;
    return o;
  }
  std::vector<std::string> digests;
  for (const std::string run : {"a", "b"}) {
    const int code = cli({"train", "--data", (root / "data").string(), "--out", (root / run).string(), "--epochs", "2",
                          "--batch-size", "3", "--lr", "1e-3", "--seed", "808"},
                         log);
    if (code != kExitOk) {
      o.detail = "train failed: " + log;
      return o;
    }
    digests.push_back(digest_path(root / run / "checkpoint"));
  }
  o.pass = digests[0] == digests[1];
  o.detail = "two train runs, checkpoint sha256 " + digests[0].substr(0, 16) + (o.pass ? " == " : " != ") +
             digests[1].substr(0, 16);
  o.data = {{"digests", digests}};
  return o;
}

}  // namespace
}  // namespace simeq

int main(int argc, char** argv) {
  using namespace simeq;
  CLI::App app{"Acceptance gate"};
  std::string workdir = (std::filesystem::temp_directory_path() / "simeq_acceptance").string();
  std::set<int> only;
  app.add_option("--workdir", workdir, "Scratch and report directory")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria (ids 1-8)");
  CLI11_PARSE(app, argc, argv);
  const fs::path work(workdir);
  fs::create_directories(work);

  const std::vector<Criterion> criteria = {
      {1, "per-layer equivariance", per_layer_equivariance},
      {2, "end-to-end equivariance", end_to_end_equivariance},
      {3, "approximate-equivariance bias sweep", bias_sweep},
      {4, "gradient correctness", gradient_checks},
      {5, "metric oracles", metric_oracles},
      {6, "de-biased protocol demonstration", protocol_demo},
      {7, "KNN invariance", knn_invariance},
      {8, "training determinism", [&](double& b) { return train_determinism(b, work); }},
  };

  nlohmann::json report = nlohmann::json::array();
  bool all = true;
  for (const Criterion& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    double budget = 0.0;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(budget);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double seconds = elapsed_since(t0);
    if (budget > 0.0 && seconds > budget) {
      o.pass = false;
      o.detail += "; runtime over the " + sci(budget) + " s limit";
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.title << ": " << o.detail << " ("
              << sci(seconds) << " s)" << std::endl;
    report.push_back({{"id", c.id},
                      {"title", c.title},
                      {"pass", o.pass},
                      {"seconds", seconds},
                      {"detail", o.detail},
                      {"data", o.data}});
  }
  write_file_atomic(work / "acceptance_report.json", report.dump(2) + "\n");
  std::cout << (all ? "ALL CRITERIA PASS" : "SOME CRITERIA FAILED") << std::endl;
  return all ? 0 : 1;
}
