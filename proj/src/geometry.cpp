// SPDX-License-Identifier: Apache-2.0
#include "simeq/geometry.hpp"

#include "simeq/errors.hpp"
#include "simeq/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace simeq {

namespace {
constexpr double kRotationTolerance = 1e-9;
}

Sim3Transform::Sim3Transform(double scale, const Mat3& rotation, const Vec3& translation)
    : scale_(scale), rotation_(rotation), translation_(translation) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw std::invalid_argument("Sim3Transform: scale must be positive and finite");
  }
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw std::invalid_argument("Sim3Transform: non-finite rotation or translation");
  }
  const double ortho = (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho > kRotationTolerance || std::abs(rotation.determinant() - 1.0) > kRotationTolerance) {
    throw std::invalid_argument("Sim3Transform: rotation is not in SO(3)");
  }
}

Sim3Transform Sim3Transform::inverse() const {
  Sim3Transform inv;
  inv.scale_ = 1.0 / scale_;
  inv.rotation_ = rotation_.transpose();
  inv.translation_ = -(inv.scale_ * (inv.rotation_ * translation_));
  return inv;
}

double Sim3Transform::distance(const Sim3Transform& other) const {
  double d = std::abs(scale_ - other.scale_);
  d = std::max(d, (rotation_ - other.rotation_).cwiseAbs().maxCoeff());
  d = std::max(d, (translation_ - other.translation_).cwiseAbs().maxCoeff());
  return d;
}

Sim3Transform compose(const Sim3Transform& a, const Sim3Transform& b) {
  // a(b(p)) = sa Ra (sb Rb p + tb) + ta
  Mat3 r = a.rotation() * b.rotation();
  // Re-orthonormalize only if drift would violate the SO(3) check.
  if ((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-12) {
    Eigen::Quaterniond q(r);
    r = q.normalized().toRotationMatrix();
  }
  return Sim3Transform(a.scale() * b.scale(), r, a.apply_linear(b.translation()) + a.translation());
}

Mat3 rotation_about_x(double radians) {
  return Eigen::AngleAxisd(radians, Vec3::UnitX()).toRotationMatrix();
}
Mat3 rotation_about_y(double radians) {
  return Eigen::AngleAxisd(radians, Vec3::UnitY()).toRotationMatrix();
}
Mat3 rotation_about_z(double radians) {
  return Eigen::AngleAxisd(radians, Vec3::UnitZ()).toRotationMatrix();
}

void require_valid(const PointCloud& pc, std::string_view what) {
  if (pc.points.empty()) {
    throw std::invalid_argument(std::string(what) + ": point cloud is empty");
  }
  for (const Vec3& p : pc.points) {
    if (!p.allFinite()) {
      throw std::invalid_argument(std::string(what) + ": point cloud has a non-finite coordinate");
    }
  }
}

PointCloud apply_transform(const Sim3Transform& g, const PointCloud& pc) {
  PointCloud out;
  out.frame_label = pc.frame_label;
  out.points.reserve(pc.points.size());
  for (const Vec3& p : pc.points) out.points.push_back(g.apply(p));
  return out;
}

void TransformDistribution::validate() const {
  if (!(scale_low > 0.0) || !(scale_high > 0.0) || scale_low > scale_high) {
    throw std::invalid_argument("TransformDistribution: need 0 < scale_low <= scale_high");
  }
  if (!(translation_range >= 0.0) || !std::isfinite(translation_range)) {
    throw std::invalid_argument("TransformDistribution: translation_range must be >= 0");
  }
}

TransformDistribution TransformDistribution::identity(std::uint64_t seed) {
  TransformDistribution d;
  d.seed = seed;
  return d;
}

TransformDistribution TransformDistribution::so3(std::uint64_t seed) {
  TransformDistribution d;
  d.rotation_mode = RotationMode::kUniformSO3;
  d.seed = seed;
  return d;
}

TransformDistribution TransformDistribution::se3(std::uint64_t seed, double translation_range) {
  TransformDistribution d = so3(seed);
  d.translation_range = translation_range;
  return d;
}

TransformDistribution TransformDistribution::sim3(std::uint64_t seed, double scale_low,
                                                  double scale_high, double translation_range) {
  TransformDistribution d = se3(seed, translation_range);
  d.scale_low = scale_low;
  d.scale_high = scale_high;
  return d;
}

TransformDistribution TransformDistribution::by_name(std::string_view name, std::uint64_t seed) {
  if (name == "identity" || name == "I") return identity(seed);
  if (name == "so3") return so3(seed);
  if (name == "se3") return se3(seed);
  if (name == "sim3") return sim3(seed);
  throw UsageError("unknown transform group '" + std::string(name) +
                   "' (expected identity, so3, se3 or sim3)");
}

Sim3Transform sample_transform(const TransformDistribution& dist, std::uint64_t index) {
  dist.validate();
  Rng rng = make_rng(dist.seed, Stream::kTransform, index);
  Mat3 rotation = Mat3::Identity();
  if (dist.rotation_mode == RotationMode::kUniformSO3) rotation = sample_uniform_rotation(rng);

  double scale = dist.scale_low;
  if (dist.scale_high > dist.scale_low) {
    std::uniform_real_distribution<double> u(std::log(dist.scale_low), std::log(dist.scale_high));
    scale = std::exp(u(rng));
  }
  Vec3 translation = Vec3::Zero();
  if (dist.translation_range > 0.0) {
    std::uniform_real_distribution<double> u(-dist.translation_range, dist.translation_range);
    for (int k = 0; k < 3; ++k) translation[k] = u(rng);
  }
  return Sim3Transform(scale, rotation, translation);
}

Vec3 centroid(std::span<const Vec3> points) {
  Vec3 c = Vec3::Zero();
  for (const Vec3& p : points) c += p;
  return points.empty() ? c : Vec3(c / static_cast<double>(points.size()));
}

NormalizedCloud self_normalize(const PointCloud& pc) {
  require_valid(pc, "self_normalize");
  const Vec3 c = centroid(pc.points);
  double radius = 0.0;
  for (const Vec3& p : pc.points) radius = std::max(radius, (p - c).norm());
  if (!(radius > 0.0)) {
    throw DegenerateInputError("self_normalize: cloud has zero extent (all points identical)");
  }
  NormalizedCloud out;
  out.cloud.frame_label = pc.frame_label;
  out.cloud.points.reserve(pc.size());
  for (const Vec3& p : pc.points) out.cloud.points.push_back((p - c) / radius);
  out.to_input = Sim3Transform(radius, Mat3::Identity(), c);
  return out;
}

}  // namespace simeq
