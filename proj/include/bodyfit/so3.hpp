#pragma once

#include "bodyfit/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace bodyfit {

// Cross-product matrix: skew(v) * w == v.cross(w).
inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

// Exponential map so(3) -> SO(3) via Rodrigues' formula; below 1e-8 rad the
// coefficients use their second-order Taylor expansions.
inline Mat3 exp_so3(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 k = skew(omega);
  double a, b;
  if (theta < 1e-8) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Mat3::Identity() + a * k + b * k * k;
}

// Inverse of exp_so3 on rotations with angle < pi.
inline Vec3 log_so3(const Mat3& r) {
  const double c = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  const double theta = std::acos(c);
  const Vec3 w(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  if (theta < 1e-8) return 0.5 * w;
  return theta / (2.0 * std::sin(theta)) * w;
}

// Geodesic angle between two rotations, radians.
inline double rotation_angle_between(const Mat3& a, const Mat3& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) * 0.5, -1.0, 1.0);
  return std::acos(c);
}

// Similarity transform y = s * exp(omega^) * x + t about the world origin.
struct Sim3Params {
  double s = 1.0;
  Vec3 omega = Vec3::Zero();
  Vec3 t = Vec3::Zero();

  static Sim3Params identity() { return {}; }

  Mat3 rotation() const { return exp_so3(omega); }
  Vec3 apply(const Vec3& x) const { return s * (rotation() * x) + t; }

  Sim3Params inverse() const {
    const Mat3 rt = rotation().transpose();
    return {1.0 / s, -omega, -(rt * t) / s};
  }

  // Keeps |omega| <= pi by mapping to the equivalent axis-angle.
  void normalize_rotation() {
    const double theta = omega.norm();
    if (theta > std::numbers::pi) omega *= (theta - 2.0 * std::numbers::pi) / theta;
  }

  void validate() const {
    if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("Sim3 scale must be positive and finite");
    if (!omega.allFinite() || !t.allFinite()) throw ValidationError("Sim3 parameters must be finite");
  }
};

// Composition: (a * b)(x) = a(b(x)).
inline Sim3Params compose(const Sim3Params& a, const Sim3Params& b) {
  const Mat3 ra = a.rotation();
  Sim3Params out;
  out.s = a.s * b.s;
  out.omega = log_so3(ra * b.rotation());
  out.t = a.s * (ra * b.t) + a.t;
  return out;
}

inline void apply_sim3_inplace(const Sim3Params& p, std::span<Vec3> points) {
  const Mat3 sr = p.s * p.rotation();
  for (auto& x : points) x = sr * x + p.t;
}

// Faces and attributes are copied unchanged.
inline TriMesh apply_sim3(const Sim3Params& p, const TriMesh& mesh) {
  TriMesh out = mesh;
  apply_sim3_inplace(p, out.vertices);
  return out;
}

}  // namespace bodyfit
