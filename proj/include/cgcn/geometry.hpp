#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace cgcn {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Proper rigid motion p -> R p + t.
struct RigidTransform {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return R * p + t; }
  RigidTransform inverse() const { return {R.transpose(), -(R.transpose() * t)}; }
  /// (this ∘ other)(p) = this(other(p))
  RigidTransform compose(const RigidTransform& other) const { return {R * other.R, R * other.t + t}; }

  /// R Rᵀ = I and det R = +1 within `tol`.
  bool is_valid(double tol = 1e-9) const {
    return (R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(R.determinant() - 1.0) <= tol && t.allFinite();
  }
};

/// Rotation angle of R in degrees, in [0, 180].
inline double rotation_angle_deg(const Mat3& R) {
  const double c = std::clamp((R.trace() - 1.0) * 0.5, -1.0, 1.0);
  return std::acos(c) * 180.0 / EIGEN_PI;
}

}  // namespace cgcn
