// SPDX-License-Identifier: Apache-2.0
#include "simeq/toy_data.hpp"

#include "simeq/errors.hpp"
#include "simeq/point_io.hpp"
#include "simeq/rng.hpp"
#include "simeq/spatial.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

namespace simeq {
namespace {

const std::vector<std::string>& required_params(ShapeFamily f) {
  static const std::vector<std::string> cap{"radius", "cap_angle"};
  static const std::vector<std::string> box{"hx", "hy", "hz"};
  static const std::vector<std::string> cyl{"radius", "half_height"};
  static const std::vector<std::string> two{"hx", "hy", "hz", "hx2", "hy2", "hz2", "dx", "dy", "dz"};
  switch (f) {
    case ShapeFamily::kSphereCap: return cap;
    case ShapeFamily::kBox: return box;
    case ShapeFamily::kCylinder: return cyl;
    case ShapeFamily::kTwoBox: return two;
  }
  return box;
}

bool is_offset(const std::string& key) { return key == "dx" || key == "dy" || key == "dz"; }

double param(const std::map<std::string, double>& p, const std::string& key) {
  auto it = p.find(key);
  if (it == p.end()) throw UsageError("toy shape: missing parameter '" + key + "'");
  return it->second;
}

struct Face {
  Vec3 center;
  Vec3 u;  // half-extent vectors spanning the face
  Vec3 v;
  double area;
};

void add_box_faces(std::vector<Face>& faces, const Vec3& c, double hx, double hy, double hz) {
  const Vec3 ex(hx, 0, 0), ey(0, hy, 0), ez(0, 0, hz);
  for (double s : {1.0, -1.0}) {
    faces.push_back({c + s * ex, ey, ez, 4 * hy * hz});
    faces.push_back({c + s * ey, ex, ez, 4 * hx * hz});
    faces.push_back({c + s * ez, ex, ey, 4 * hx * hy});
  }
}

PointCloud sample_faces(const std::vector<Face>& faces, std::size_t count, Rng& rng) {
  std::vector<double> weights;
  for (const Face& f : faces) weights.push_back(f.area);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PointCloud pc;
  pc.points.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const Face& f = faces[pick(rng)];
    const double a = u(rng);
    const double b = u(rng);
    pc.points.push_back(f.center + a * f.u + b * f.v);
  }
  return pc;
}

}  // namespace

std::string family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::kSphereCap: return "sphere-cap";
    case ShapeFamily::kBox: return "box";
    case ShapeFamily::kCylinder: return "cylinder";
    case ShapeFamily::kTwoBox: return "two-box";
  }
  return "box";
}

ShapeFamily family_from_name(const std::string& name) {
  if (name == "sphere-cap") return ShapeFamily::kSphereCap;
  if (name == "box") return ShapeFamily::kBox;
  if (name == "cylinder") return ShapeFamily::kCylinder;
  if (name == "two-box") return ShapeFamily::kTwoBox;
  throw UsageError("unknown shape family '" + name + "'");
}

void ToyShapeSpec::validate() const {
  for (const std::string& key : required_params(family)) {
    const double v = param(params, key);
    if (!std::isfinite(v) || (!is_offset(key) && v <= 0.0)) {
      throw UsageError("toy shape " + family_name(family) + ": parameter '" + key + "' must be positive");
    }
  }
  if (family == ShapeFamily::kSphereCap && param(params, "cap_angle") > std::numbers::pi) {
    throw UsageError("toy shape sphere-cap: cap_angle must be <= pi");
  }
  if (!(jitter >= 0.0 && jitter < 1.0)) throw UsageError("toy shape: jitter must lie in [0, 1)");
  if (!(crop.keep_fraction > 0.0 && crop.keep_fraction <= 1.0)) {
    throw UsageError("toy shape: keep_fraction must lie in (0, 1]");
  }
  if (!crop.view_direction.allFinite()) throw UsageError("toy shape: non-finite view direction");
}

void ToyDatasetConfig::validate() const {
  if (shapes.empty()) throw UsageError("toy dataset: no shapes");
  if (gt_points < 1) throw UsageError("toy dataset: gt_points must be >= 1");
  for (const ToyShapeSpec& s : shapes) s.validate();
}

ToyDatasetConfig ToyDatasetConfig::defaults() {
  ToyDatasetConfig c;
  ToyShapeSpec cap{ShapeFamily::kSphereCap, {{"radius", 0.8}, {"cap_angle", 2.0}}, 0.2, {}};
  ToyShapeSpec box{ShapeFamily::kBox, {{"hx", 0.7}, {"hy", 0.45}, {"hz", 0.3}}, 0.25, {}};
  ToyShapeSpec cyl{ShapeFamily::kCylinder, {{"radius", 0.4}, {"half_height", 0.7}}, 0.25, {}};
  ToyShapeSpec two{ShapeFamily::kTwoBox,
                   {{"hx", 0.5}, {"hy", 0.3}, {"hz", 0.2}, {"hx2", 0.2}, {"hy2", 0.2}, {"hz2", 0.4},
                    {"dx", 0.4}, {"dy", 0.1}, {"dz", 0.3}},
                   0.2,
                   {}};
  c.shapes = {cap, box, cyl, two};
  return c;
}

nlohmann::json to_json(const ToyShapeSpec& s) {
  const Vec3& v = s.crop.view_direction;
  return {{"family", family_name(s.family)},
          {"params", s.params},
          {"jitter", s.jitter},
          {"crop", {{"view", {v.x(), v.y(), v.z()}}, {"keep_fraction", s.crop.keep_fraction}}}};
}

nlohmann::json to_json(const ToyDatasetConfig& c) {
  nlohmann::json shapes = nlohmann::json::array();
  for (const ToyShapeSpec& s : c.shapes) shapes.push_back(to_json(s));
  return {{"schema_version", 1}, {"gt_points", c.gt_points}, {"partial_points", c.partial_points}, {"shapes", shapes}};
}

ToyShapeSpec toy_shape_from_json(const nlohmann::json& j) {
  try {
    ToyShapeSpec s;
    s.family = family_from_name(j.at("family").get<std::string>());
    s.params = j.at("params").get<std::map<std::string, double>>();
    s.jitter = j.value("jitter", 0.0);
    if (j.contains("crop")) {
      const nlohmann::json& c = j.at("crop");
      if (c.contains("view")) {
        const auto v = c.at("view").get<std::vector<double>>();
        if (v.size() != 3) throw UsageError("toy shape: crop.view needs 3 entries");
        s.crop.view_direction = Vec3(v[0], v[1], v[2]);
      }
      s.crop.keep_fraction = c.value("keep_fraction", s.crop.keep_fraction);
    }
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("toy shape: ") + e.what());
  }
}

ToyDatasetConfig toy_config_from_json(const nlohmann::json& j) {
  try {
    if (j.value("schema_version", 1) != 1) throw UsageError("toy dataset: unsupported schema_version");
    ToyDatasetConfig c = ToyDatasetConfig::defaults();
    c.gt_points = j.value("gt_points", c.gt_points);
    c.partial_points = j.value("partial_points", c.partial_points);
    if (j.contains("shapes")) {
      c.shapes.clear();
      for (const nlohmann::json& s : j.at("shapes")) c.shapes.push_back(toy_shape_from_json(s));
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("toy dataset: ") + e.what());
  }
}

PointCloud sample_shape(ShapeFamily family, const std::map<std::string, double>& p, std::size_t count,
                        std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PointCloud pc;
  switch (family) {
    case ShapeFamily::kSphereCap: {
      const double r = param(p, "radius");
      const double zmin = std::cos(param(p, "cap_angle"));
      for (std::size_t i = 0; i < count; ++i) {
        const double z = zmin + (1.0 - zmin) * unit(rng);
        const double phi = 2.0 * std::numbers::pi * unit(rng);
        const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
        pc.points.push_back(r * Vec3(rho * std::cos(phi), rho * std::sin(phi), z));
      }
      break;
    }
    case ShapeFamily::kBox: {
      std::vector<Face> faces;
      add_box_faces(faces, Vec3::Zero(), param(p, "hx"), param(p, "hy"), param(p, "hz"));
      pc = sample_faces(faces, count, rng);
      break;
    }
    case ShapeFamily::kTwoBox: {
      std::vector<Face> faces;
      add_box_faces(faces, Vec3::Zero(), param(p, "hx"), param(p, "hy"), param(p, "hz"));
      add_box_faces(faces, Vec3(param(p, "dx"), param(p, "dy"), param(p, "dz")), param(p, "hx2"), param(p, "hy2"),
                    param(p, "hz2"));
      pc = sample_faces(faces, count, rng);
      break;
    }
    case ShapeFamily::kCylinder: {
      const double r = param(p, "radius");
      const double h = param(p, "half_height");
      const double side = 4.0 * std::numbers::pi * r * h;
      const double cap = std::numbers::pi * r * r;
      std::discrete_distribution<int> part({side, cap, cap});
      for (std::size_t i = 0; i < count; ++i) {
        const int which = part(rng);
        const double phi = 2.0 * std::numbers::pi * unit(rng);
        if (which == 0) {
          const double z = h * (2.0 * unit(rng) - 1.0);
          pc.points.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
        } else {
          const double rho = r * std::sqrt(unit(rng));
          pc.points.emplace_back(rho * std::cos(phi), rho * std::sin(phi), which == 1 ? h : -h);
        }
      }
      break;
    }
  }
  pc.frame_label = "canonical";
  return pc;
}

PointCloud crop_view(const PointCloud& pc, const Vec3& view, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw std::invalid_argument("crop_view: keep_fraction");
  const std::size_t n = pc.size();
  const std::size_t keep =
      std::min(n, static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(n))));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> proj(n);
  for (std::size_t i = 0; i < n; ++i) proj[i] = view.dot(pc.points[i]);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return proj[a] > proj[b]; });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  PointCloud out{{}, pc.frame_label};
  for (std::size_t i : order) out.points.push_back(pc.points[i]);
  return out;
}

ToySample generate_toy_sample(const ToyDatasetConfig& config, std::uint64_t seed, std::size_t index) {
  const ToyShapeSpec& spec = config.shapes[index % config.shapes.size()];
  Rng rng = make_rng(seed, Stream::kData, index);
  std::uniform_real_distribution<double> jit(1.0 - spec.jitter, 1.0 + spec.jitter);
  std::map<std::string, double> params = spec.params;
  for (auto& [key, value] : params) value *= jit(rng);
  if (spec.family == ShapeFamily::kSphereCap) params["cap_angle"] = std::min(params["cap_angle"], std::numbers::pi);

  Vec3 view = spec.crop.view_direction;
  const Mat3 random_rotation = sample_uniform_rotation(rng);
  if (view.norm() == 0.0) view = random_rotation.col(2);

  ToySample s;
  s.family = family_name(spec.family);
  s.gt = sample_shape(spec.family, params, config.gt_points, rng());
  s.partial = crop_view(s.gt, view, spec.crop.keep_fraction);
  if (config.partial_points > 0) {
    if (s.partial.size() < config.partial_points) {
      throw UsageError("toy sample " + std::to_string(index) + ": crop keeps " + std::to_string(s.partial.size()) +
                       " points, fewer than partial_points = " + std::to_string(config.partial_points));
    }
    s.partial = farthest_point_subset(s.partial, config.partial_points);
  }
  return s;
}

std::vector<ToySample> generate_toy_dataset(const ToyDatasetConfig& config, std::size_t n, std::uint64_t seed) {
  config.validate();
  std::vector<ToySample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_toy_sample(config, seed, i));
  return out;
}

namespace {

std::string sample_stem(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return buf;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const std::vector<ToySample>& samples,
                   const nlohmann::json& extra_manifest) {
  std::filesystem::create_directories(dir);
  nlohmann::json files = nlohmann::json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string stem = sample_stem(i);
    write_file_atomic(dir / (stem + "_partial.xyz"), format_xyz(samples[i].partial));
    write_file_atomic(dir / (stem + "_gt.xyz"), format_xyz(samples[i].gt));
    files.push_back({{"partial", stem + "_partial.xyz"}, {"gt", stem + "_gt.xyz"}, {"family", samples[i].family}});
  }
  nlohmann::json manifest = extra_manifest;
  manifest["format"] = "simeq-toy-dataset";
  manifest["version"] = 1;
  manifest["count"] = samples.size();
  manifest["samples"] = files;
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::vector<ToySample> read_dataset(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
    if (manifest.at("format") != "simeq-toy-dataset") throw UsageError("dataset manifest: wrong format tag");
    std::vector<ToySample> out;
    for (const nlohmann::json& f : manifest.at("samples")) {
      ToySample s;
      s.partial = read_point_cloud(dir / f.at("partial").get<std::string>());
      s.gt = read_point_cloud(dir / f.at("gt").get<std::string>());
      s.family = f.value("family", "");
      out.push_back(std::move(s));
    }
    if (out.empty()) throw UsageError("dataset " + dir.string() + " has no samples");
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("dataset manifest: " + std::string(e.what()));
  }
}

}  // namespace simeq
