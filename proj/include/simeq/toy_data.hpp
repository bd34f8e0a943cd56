// SPDX-License-Identifier: Apache-2.0
//
// Synthetic (partial, complete) pairs in a canonical frame: surface samples of
// simple solids, cropped by a half-space to mimic a single view.
#pragma once

#include "simeq/geometry.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace simeq {

enum class ShapeFamily { kSphereCap, kBox, kCylinder, kTwoBox };

std::string family_name(ShapeFamily f);
/// "sphere-cap", "box", "cylinder", "two-box". Throws UsageError otherwise.
ShapeFamily family_from_name(const std::string& name);

struct CropSpec {
  /// Points with the largest projection on this direction are kept. The zero
  /// vector draws a uniformly random direction per sample.
  Vec3 view_direction = Vec3::Zero();
  /// In (0, 1]; 1 keeps everything.
  double keep_fraction = 0.6;
};

struct ToyShapeSpec {
  ShapeFamily family = ShapeFamily::kBox;
  /// sphere-cap: radius, cap_angle (radians, polar half-angle)
  /// box: hx, hy, hz
  /// cylinder: radius, half_height
  /// two-box: hx, hy, hz, hx2, hy2, hz2, dx, dy, dz
  std::map<std::string, double> params;
  /// Each parameter is multiplied by a factor uniform in [1 - jitter, 1 + jitter].
  double jitter = 0.0;
  CropSpec crop;

  /// Throws UsageError on missing or non-positive parameters.
  void validate() const;
};

struct ToyDatasetConfig {
  std::vector<ToyShapeSpec> shapes;
  std::size_t gt_points = 1024;
  /// Partials are farthest-point resampled to this many points; 0 keeps the raw crop.
  std::size_t partial_points = 256;

  void validate() const;
  static ToyDatasetConfig defaults();
};

nlohmann::json to_json(const ToyShapeSpec& s);
nlohmann::json to_json(const ToyDatasetConfig& c);
ToyShapeSpec toy_shape_from_json(const nlohmann::json& j);
/// Missing keys keep the defaults. Throws UsageError on bad input.
ToyDatasetConfig toy_config_from_json(const nlohmann::json& j);

struct ToySample {
  PointCloud partial;
  PointCloud gt;
  std::string family;
};

/// Uniform surface sample of the (jittered) solid described by params.
PointCloud sample_shape(ShapeFamily family, const std::map<std::string, double>& params, std::size_t count,
                        std::uint64_t seed);
/// Keeps the ceil(keep_fraction * N) points with the largest projection on
/// view (ties to the lower index), in their original order.
PointCloud crop_view(const PointCloud& pc, const Vec3& view, double keep_fraction);

/// Sample i uses shapes[i % shapes.size()] and an RNG derived from (seed, i).
ToySample generate_toy_sample(const ToyDatasetConfig& config, std::uint64_t seed, std::size_t index);
std::vector<ToySample> generate_toy_dataset(const ToyDatasetConfig& config, std::size_t n, std::uint64_t seed);

/// <dir>/manifest.json plus NNNNN_partial.xyz / NNNNN_gt.xyz per sample.
void write_dataset(const std::filesystem::path& dir, const std::vector<ToySample>& samples,
                   const nlohmann::json& extra_manifest = nlohmann::json::object());
/// Throws UsageError when the directory or any listed file is missing.
std::vector<ToySample> read_dataset(const std::filesystem::path& dir);

}  // namespace simeq
