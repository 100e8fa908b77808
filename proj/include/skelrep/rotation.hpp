#pragma once

// Viewpoint synthesis: Euler-angle rotation matrices composed as
// Omega = Omega_x(pitch) * Omega_y(yaw) * Omega_z(roll) and applied to each
// frame's m x 3 joint matrix by right multiplication, Z^t = X^t * Omega.
// The convention is right-handed with counter-clockwise positive angles for
// row vectors, i.e. each factor is the transpose of the usual column-vector
// rotation about its axis.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

#include "skelrep/rng.hpp"
#include "skelrep/skeleton.hpp"

namespace skelrep {

struct EulerAngles {
  double pitch = 0.0;  // alpha, about x
  double yaw = 0.0;    // beta, about y
  double roll = 0.0;   // gamma, about z

  bool valid() const {
    const double two_pi = 2.0 * std::numbers::pi;
    auto ok = [&](double a) { return std::isfinite(a) && a >= 0.0 && a < two_pi; };
    return ok(pitch) && ok(yaw) && ok(roll);
  }
};

inline Eigen::Matrix3d rotation_about_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d r;
  r << 1, 0, 0,
       0, c, s,
       0, -s, c;
  return r;
}

inline Eigen::Matrix3d rotation_about_y(double b) {
  const double c = std::cos(b), s = std::sin(b);
  Eigen::Matrix3d r;
  r << c, 0, -s,
       0, 1, 0,
       s, 0, c;
  return r;
}

inline Eigen::Matrix3d rotation_about_z(double g) {
  const double c = std::cos(g), s = std::sin(g);
  Eigen::Matrix3d r;
  r << c, s, 0,
       -s, c, 0,
       0, 0, 1;
  return r;
}

inline Eigen::Matrix3d rotation_matrix(const EulerAngles& angles) {
  return rotation_about_x(angles.pitch) * rotation_about_y(angles.yaw) *
         rotation_about_z(angles.roll);
}

// Right-multiplies every timestamp's m x 3 joint matrix by omega. Label and
// metadata pass through unchanged.
inline SkeletonSequence rotate_sequence(const SkeletonSequence& seq, const Eigen::Matrix3d& omega) {
  if (seq.coords.shape[0] != 3) fail("rotate_sequence: d must be 3");
  SkeletonSequence out = seq;
  const Eigen::Index m = seq.joints(), t = seq.frames();
  for (Eigen::Index f = 0; f < t; ++f)
    for (Eigen::Index j = 0; j < m; ++j) {
      Eigen::RowVector3d x(seq.at(0, j, f), seq.at(1, j, f), seq.at(2, j, f));
      Eigen::RowVector3d z = x * omega;
      out.at(0, j, f) = z[0];
      out.at(1, j, f) = z[1];
      out.at(2, j, f) = z[2];
    }
  return out;
}

// Three independent uniform draws in [0, 2*pi).
inline EulerAngles sample_angles(Rng& rng) {
  const double two_pi = 2.0 * std::numbers::pi;
  EulerAngles a;
  a.pitch = rng.uniform(0.0, two_pi);
  a.yaw = rng.uniform(0.0, two_pi);
  a.roll = rng.uniform(0.0, two_pi);
  return a;
}

}  // namespace skelrep
