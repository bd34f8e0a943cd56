// SPDX-License-Identifier: Apache-2.0
#include "simeq/protocol.hpp"

#include "simeq/metrics.hpp"
#include "simeq/point_io.hpp"

#include <sstream>
#include <stdexcept>
#include <thread>

namespace simeq {
namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::string optional_cell(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream ss;
  ss.precision(17);
  ss << *v;
  return ss.str();
}

}  // namespace

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const SampleMetrics& s : r.per_sample) {
    rows.push_back({{"index", s.index},
                    {"cd_l1_x1000", s.cd_l1_x1000},
                    {"f1", s.f1},
                    {"fidelity", optional_json(s.fidelity)},
                    {"mmd", optional_json(s.mmd)},
                    {"transform", transform_to_json(s.transform)}});
  }
  return {{"cd_l1_x1000", r.cd_l1_x1000},
          {"f1", r.f1},
          {"fidelity", optional_json(r.fidelity)},
          {"mmd", optional_json(r.mmd)},
          {"samples", r.per_sample.size()},
          {"per_sample", rows}};
}

std::string per_sample_csv(const MetricsReport& r) {
  std::ostringstream ss;
  ss.precision(17);
  ss << "index,cd_l1_x1000,f1,fidelity,mmd\n";
  for (const SampleMetrics& s : r.per_sample) {
    ss << s.index << ',' << s.cd_l1_x1000 << ',' << s.f1 << ',' << optional_cell(s.fidelity) << ','
       << optional_cell(s.mmd) << '\n';
  }
  return ss.str();
}

MetricsReport run_protocol(const Predictor& predict, const std::vector<ToySample>& dataset, const ProtocolConfig& cfg,
                           const std::vector<PointCloud>* mmd_references) {
  if (dataset.empty()) throw std::invalid_argument("run_protocol: empty dataset");
  cfg.test_group.validate();
  std::vector<SampleMetrics> rows(dataset.size());
  std::vector<std::exception_ptr> errors(dataset.size());

  auto evaluate = [&](std::size_t i) {
    const ToySample& s = dataset[i];
    const Sim3Transform g = sample_transform(cfg.test_group, i);
    const PointCloud sensor_partial = apply_transform(g, s.partial);
    const NormalizedCloud nc = self_normalize(sensor_partial);
    const PointCloud pred_normalized = predict(nc.cloud, i);
    require_valid(pred_normalized, "prediction");
    const PointCloud pred = apply_transform(g.inverse(), apply_transform(nc.to_input, pred_normalized));
    SampleMetrics m;
    m.index = i;
    m.transform = g;
    m.cd_l1_x1000 = kChamferReportScale * chamfer_l1(pred, s.gt);
    m.f1 = f_score(pred, s.gt, cfg.f_threshold);
    if (cfg.compute_fidelity) m.fidelity = fidelity(s.partial, pred);
    if (mmd_references) m.mmd = mmd(pred, *mmd_references);
    rows[i] = m;
  };

  const std::size_t threads = std::max<std::size_t>(1, std::min(cfg.threads, dataset.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < dataset.size(); ++i) evaluate(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < dataset.size(); i += threads) {
          try {
            evaluate(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (std::thread& t : pool) t.join();
    for (const std::exception_ptr& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  MetricsReport r;
  double fid = 0.0, mm = 0.0;
  for (const SampleMetrics& m : rows) {
    r.cd_l1_x1000 += m.cd_l1_x1000;
    r.f1 += m.f1;
    if (m.fidelity) fid += *m.fidelity;
    if (m.mmd) mm += *m.mmd;
  }
  const double n = static_cast<double>(rows.size());
  r.cd_l1_x1000 /= n;
  r.f1 /= n;
  if (cfg.compute_fidelity) r.fidelity = fid / n;
  if (mmd_references) r.mmd = mm / n;
  r.per_sample = std::move(rows);
  return r;
}

MetricsReport run_protocol(const CompletionNetwork& net, const std::vector<ToySample>& dataset,
                           const ProtocolConfig& cfg, const std::vector<PointCloud>* mmd_references) {
  return run_protocol([&net](const PointCloud& x, std::size_t) { return net.complete(x).dense; }, dataset, cfg,
                      mmd_references);
}

}  // namespace simeq
