// Test-only reference implementations. These deliberately avoid the code
// paths they are used to check.
#pragma once

#include <Eigen/Core>
#include <cmath>
#include <random>

#include "orchard/geometry.hpp"

namespace orchard::oracle {

// Truncated matrix exponential series for the rotation exp map.
inline Matrix3d rotation_series(const Vector3d& v, int terms = 30) {
  const Matrix3d k = so3_hat(v);
  Matrix3d sum = Matrix3d::Identity();
  Matrix3d pow = Matrix3d::Identity();
  double factorial = 1.0;
  for (int n = 1; n < terms; ++n) {
    pow = pow * k;
    factorial *= n;
    sum += pow / factorial;
  }
  return sum;
}

// Frobenius-nearest rotation by seeded random search plus shrinking
// coordinate descent on SO(3). Independent of any SVD route.
inline Matrix3d brute_force_nearest_rotation(const Matrix3d& m,
                                             std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto cost = [&](const Matrix3d& r) { return (r - m).squaredNorm(); };

  Matrix3d best = Matrix3d::Identity();
  double best_cost = cost(best);
  for (int i = 0; i < 4000; ++i) {
    Vector3d w(gauss(rng), gauss(rng), gauss(rng));
    const double theta = std::uniform_real_distribution<double>(0, M_PI)(rng);
    const Matrix3d r = rodrigues_exp(theta * w.normalized());
    const double c = cost(r);
    if (c < best_cost) {
      best_cost = c;
      best = r;
    }
  }
  double step = 0.2;
  while (step > 1e-9) {
    bool improved = false;
    for (int axis = 0; axis < 3; ++axis) {
      for (double sign : {1.0, -1.0}) {
        const Matrix3d r =
            rodrigues_exp(sign * step * Vector3d::Unit(axis)) * best;
        const double c = cost(r);
        if (c < best_cost) {
          best_cost = c;
          best = r;
          improved = true;
        }
      }
    }
    if (!improved) step *= 0.5;
  }
  return best;
}

// Minimum distance from x to a densely sampled cylinder surface patch.
// Coarse 10^6-sample pass, then a refined local grid around the minimizer.
inline double sampled_cylinder_distance(const Vector3d& x, const Cylinder& c) {
  Vector3d u, w;
  {
    int k = 0;
    c.axis.cwiseAbs().minCoeff(&k);
    u = c.axis.cross(Vector3d::Unit(k)).normalized();
    w = c.axis.cross(u);
  }
  const double axial_center = c.axis.dot(x - c.origin);
  const double span = 4.0 * c.radius + 1.0;

  auto surface = [&](double angle, double axial) {
    return c.origin + axial * c.axis +
           c.radius * (std::cos(angle) * u + std::sin(angle) * w);
  };
  double best = std::numeric_limits<double>::infinity();
  double best_angle = 0, best_axial = 0;
  const int na = 1000, nz = 1000;
  for (int i = 0; i < na; ++i) {
    const double angle = 2.0 * M_PI * i / na;
    for (int j = 0; j < nz; ++j) {
      const double axial = axial_center - span + 2.0 * span * j / (nz - 1);
      const double d = (x - surface(angle, axial)).norm();
      if (d < best) {
        best = d;
        best_angle = angle;
        best_axial = axial;
      }
    }
  }
  const double da = 2.0 * M_PI / na, dz = 2.0 * span / (nz - 1);
  for (int i = -100; i <= 100; ++i) {
    for (int j = -100; j <= 100; ++j) {
      const double d =
          (x - surface(best_angle + i * da / 100.0, best_axial + j * dz / 100.0))
              .norm();
      best = std::min(best, d);
    }
  }
  return best;
}

// Pinhole projection via an explicit 3x4 homogeneous multiply.
inline Vector2d homogeneous_projection(const Vector3d& x,
                                       const Intrinsics& k) {
  Eigen::Matrix<double, 3, 4> p;
  p.setZero();
  p.block<3, 3>(0, 0) = k.matrix();
  Eigen::Vector4d xh(x.x(), x.y(), x.z(), 1.0);
  const Vector3d h = p * xh;
  return {h.x() / h.z(), h.y() / h.z()};
}

inline Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector3d w(gauss(rng), gauss(rng), gauss(rng));
  const double theta =
      std::uniform_real_distribution<double>(0.0, M_PI * 0.999)(rng);
  return rodrigues_exp(theta * w.normalized());
}

}  // namespace orchard::oracle
