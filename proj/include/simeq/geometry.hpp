// SPDX-License-Identifier: Apache-2.0
//
// The similarity group SIM(3), its action on point clouds, and transform
// sampling for train/test regimes (identity, SO(3), SE(3), SIM(3)).
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace simeq {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// A similarity transform p -> s * R * p + t with s > 0 and R in SO(3).
class Sim3Transform {
 public:
  Sim3Transform() = default;
  /// Throws std::invalid_argument if scale <= 0 or rotation is not in SO(3) (1e-9).
  Sim3Transform(double scale, const Mat3& rotation, const Vec3& translation);

  static Sim3Transform identity() { return {}; }

  double scale() const { return scale_; }
  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Vec3 apply(const Vec3& p) const { return scale_ * (rotation_ * p) + translation_; }
  /// Action on a direction / difference vector: translation does not apply.
  Vec3 apply_linear(const Vec3& v) const { return scale_ * (rotation_ * v); }

  Sim3Transform inverse() const;

  /// Max absolute deviation over all 13 fields.
  double distance(const Sim3Transform& other) const;

 private:
  double scale_ = 1.0;
  Mat3 rotation_ = Mat3::Identity();
  Vec3 translation_ = Vec3::Zero();
};

/// compose(a, b) applies b first, then a.
Sim3Transform compose(const Sim3Transform& a, const Sim3Transform& b);

Mat3 rotation_about_x(double radians);
Mat3 rotation_about_y(double radians);
Mat3 rotation_about_z(double radians);

struct PointCloud {
  std::vector<Vec3> points;
  std::string frame_label;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Throws std::invalid_argument on an empty cloud or a non-finite coordinate.
void require_valid(const PointCloud& pc, std::string_view what);

PointCloud apply_transform(const Sim3Transform& g, const PointCloud& pc);

enum class RotationMode { kIdentity, kUniformSO3 };

struct TransformDistribution {
  RotationMode rotation_mode = RotationMode::kIdentity;
  double scale_low = 1.0;
  double scale_high = 1.0;
  /// Half-width of the translation cube; 0 disables translation.
  double translation_range = 0.0;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument when bounds are inconsistent.
  void validate() const;

  static TransformDistribution identity(std::uint64_t seed = 0);
  static TransformDistribution so3(std::uint64_t seed = 0);
  static TransformDistribution se3(std::uint64_t seed = 0, double translation_range = 1.0);
  /// Defaults: scale log-uniform in [0.5, 2], translation in [-1, 1]^3.
  static TransformDistribution sim3(std::uint64_t seed = 0, double scale_low = 0.5,
                                    double scale_high = 2.0, double translation_range = 1.0);
  /// One of "identity", "so3", "se3", "sim3". Throws UsageError otherwise.
  static TransformDistribution by_name(std::string_view name, std::uint64_t seed);
};

/// Deterministic in (dist.seed, index); independent of call order.
Sim3Transform sample_transform(const TransformDistribution& dist, std::uint64_t index);

/// Uniform rotation from a normalized quaternion of four standard normals.
template <typename Engine>
Mat3 sample_uniform_rotation(Engine& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::Quaterniond q;
  double n2 = 0.0;
  do {
    q = Eigen::Quaterniond(normal(rng), normal(rng), normal(rng), normal(rng));
    n2 = q.squaredNorm();
  } while (n2 < 1e-20);
  q.normalize();
  return q.toRotationMatrix();
}

struct NormalizedCloud {
  PointCloud cloud;
  /// Maps the normalized cloud back onto the input.
  Sim3Transform to_input;
};

/// Centers on the centroid and scales so the farthest point has norm 1.
/// Throws DegenerateInputError when all points coincide.
NormalizedCloud self_normalize(const PointCloud& pc);

Vec3 centroid(std::span<const Vec3> points);

}  // namespace simeq
