// SPDX-License-Identifier: Apache-2.0
#include "simeq/audit.hpp"

#include "simeq/point_io.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace simeq {

double relative_error(const Tensor& actual, const Tensor& expected) {
  if (actual.shape() != expected.shape()) {
    throw std::invalid_argument("relative_error: shapes " + to_string(actual.shape()) + " and " +
                                to_string(expected.shape()));
  }
  double diff = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double d = actual[i] - expected[i];
    diff += d * d;
  }
  return std::sqrt(diff) / std::max(expected.norm(), kAuditErrorFloor);
}

void ErrorStats::add(double e) {
  mean = (mean * static_cast<double>(count) + e) / static_cast<double>(count + 1);
  max = std::max(max, e);
  ++count;
}

bool EquivarianceAuditReport::sweep_monotone() const {
  for (std::size_t i = 1; i < bias_sweep.size(); ++i) {
    if (bias_sweep[i].second.max > bias_sweep[i - 1].second.max) return false;
  }
  return true;
}

namespace {

nlohmann::json stats_json(const ErrorStats& s) { return {{"mean", s.mean}, {"max", s.max}, {"count", s.count}}; }

using Taps = std::vector<std::pair<std::string, ad::Var>>;

struct TrialResult {
  std::vector<std::pair<std::string, double>> layers;
  double end_to_end = 0.0;
  std::vector<double> sweep;
};

// Runs f on x and on g x at one bias scale; returns per-tap errors and the dense error.
TrialResult compare(const CompletionNetwork& net, const PointCloud& x, const Sim3Transform& g, double bias_scale,
                    bool with_layers) {
  ad::Tape ta(false), tb(false);
  Taps taps_a, taps_b;
  ForwardContext ca{ta, bias_scale, with_layers ? &taps_a : nullptr};
  ForwardContext cb{tb, bias_scale, with_layers ? &taps_b : nullptr};
  const CompletionVars fa = net.forward(ca, x);
  const CompletionVars fb = net.forward(cb, apply_transform(g, x));
  TrialResult r;
  for (std::size_t i = 0; i < std::min(taps_a.size(), taps_b.size()); ++i) {
    r.layers.emplace_back(taps_a[i].first,
                          relative_error(taps_b[i].second.value(), transform_rows(g, taps_a[i].second.value())));
  }
  r.end_to_end = relative_error(fb.dense.value(), transform_rows(g, fa.dense.value()));
  return r;
}

double rotation_angle(const Mat3& r) { return std::acos(std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0)); }

}  // namespace

EquivarianceAuditReport audit_equivariance(const CompletionNetwork& net, const std::vector<PointCloud>& inputs,
                                           const AuditConfig& cfg) {
  if (cfg.trials < 1) throw std::invalid_argument("audit: trials must be >= 1");
  if (inputs.empty()) throw std::invalid_argument("audit: no inputs");
  cfg.distribution.validate();
  std::vector<TrialResult> results(cfg.trials);
  std::vector<Sim3Transform> transforms(cfg.trials);
  std::vector<std::exception_ptr> errors(cfg.trials);

  auto run_trial = [&](std::size_t t) {
    const PointCloud& x = inputs[t % inputs.size()];
    const Sim3Transform g = sample_transform(cfg.distribution, t);
    transforms[t] = g;
    TrialResult r = compare(net, x, g, cfg.bias_scale, true);
    for (double s : cfg.sweep_scales) r.sweep.push_back(compare(net, x, g, s, false).end_to_end);
    results[t] = std::move(r);
  };

  const std::size_t threads = std::max<std::size_t>(1, std::min(cfg.threads, cfg.trials));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t t = w; t < cfg.trials; t += threads) {
        try {
          run_trial(t);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      }
    });
  }
  for (std::thread& th : pool) th.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  EquivarianceAuditReport report;
  report.trials = cfg.trials;
  report.seed = cfg.distribution.seed;
  for (double s : cfg.sweep_scales) report.bias_sweep.emplace_back(s, ErrorStats{});
  for (std::size_t t = 0; t < cfg.trials; ++t) {
    const TrialResult& r = results[t];
    for (const auto& [name, e] : r.layers) report.per_layer[name].add(e);
    report.end_to_end.add(r.end_to_end);
    for (std::size_t k = 0; k < r.sweep.size(); ++k) report.bias_sweep[k].second.add(r.sweep[k]);
    const Sim3Transform& g = transforms[t];
    report.plot.push_back({t, g.scale(), rotation_angle(g.rotation()), g.translation().norm(), r.end_to_end});
  }
  return report;
}

nlohmann::json to_json(const EquivarianceAuditReport& r) {
  nlohmann::json layers = nlohmann::json::object();
  for (const auto& [name, s] : r.per_layer) layers[name] = stats_json(s);
  nlohmann::json sweep = nlohmann::json::array();
  for (const auto& [scale, s] : r.bias_sweep) {
    nlohmann::json row = stats_json(s);
    row["bias_scale"] = scale;
    sweep.push_back(row);
  }
  return {{"trials", r.trials},
          {"seed", r.seed},
          {"per_layer_error", layers},
          {"end_to_end_error", stats_json(r.end_to_end)},
          {"bias_sweep", sweep},
          {"bias_sweep_monotone", r.sweep_monotone()}};
}

std::string plot_csv(const EquivarianceAuditReport& r) {
  std::ostringstream ss;
  ss.precision(17);
  ss << "trial,scale,rotation_angle,translation_norm,error\n";
  for (const AuditPlotRow& p : r.plot) {
    ss << p.trial << ',' << p.scale << ',' << p.rotation_angle << ',' << p.translation_norm << ',' << p.error << '\n';
  }
  return ss.str();
}

}  // namespace simeq
