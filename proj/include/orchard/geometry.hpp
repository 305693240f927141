#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <vector>

#include "orchard/error.hpp"

namespace orchard {

using Eigen::Matrix3d;
using Eigen::Vector2d;
using Eigen::Vector3d;

// Tolerances shared by the geometric invariants.
inline constexpr double kRotationDefectTol = 1e-6;
inline constexpr double kUnitNormTol = 1e-12;

// Rigid motion X -> R*X + t. Composition reads right-to-left like matrix
// products: (a * b) applies b first.
struct RigidTransform {
  Matrix3d rotation = Matrix3d::Identity();
  Vector3d translation = Vector3d::Zero();

  RigidTransform() = default;
  RigidTransform(const Matrix3d& r, const Vector3d& t)
      : rotation(r), translation(t) {}

  Vector3d apply(const Vector3d& x) const { return rotation * x + translation; }
  Vector3d operator*(const Vector3d& x) const { return apply(x); }

  RigidTransform operator*(const RigidTransform& other) const {
    return {rotation * other.rotation,
            rotation * other.translation + translation};
  }

  RigidTransform inverse() const {
    return {rotation.transpose(), -(rotation.transpose() * translation)};
  }
};

// Frobenius defect from the orthonormal manifold, |R^T R - I|.
double rotation_defect(const Matrix3d& r);

Matrix3d so3_hat(const Vector3d& v);

// Rodrigues exponential: rotation about v/|v| by angle |v|. Identity for
// |v| below 1e-12.
Matrix3d rodrigues_exp(const Vector3d& axis_angle);

// Inverse of rodrigues_exp with angle in [0, pi]. Throws invalid_rotation
// when the input is not orthonormal within kRotationDefectTol.
Vector3d rodrigues_log(const Matrix3d& rotation);

// Inverse of the left Jacobian of the SO(3) exponential at phi. Used by
// the pose-graph residual to map log-space perturbations.
Matrix3d so3_left_jacobian_inverse(const Vector3d& phi);

// Rotation minimizing |R - M|_F (SVD with determinant sign fix). Throws
// degenerate_input when M is rank-deficient (sigma_min <= 1e-9 sigma_max).
Matrix3d nearest_rotation(const Matrix3d& m);

struct Cylinder {
  Vector3d axis = Vector3d::UnitZ();   // unit
  Vector3d origin = Vector3d::Zero();  // point on the axis
  double radius = 0.0;
  double height = 0.0;

  // Axis point nearest to x.
  Vector3d project_to_axis(const Vector3d& x) const {
    return origin + axis.dot(x - origin) * axis;
  }
};

struct Plane {
  Vector3d normal = Vector3d::UnitZ();  // unit
  Vector3d origin = Vector3d::Zero();
  double slab_halfwidth = 0.0;  // t_s
};

// | dist(x, axis line) - radius |
double point_cylinder_distance(const Vector3d& x, const Cylinder& c);

// Distance from x to the axis line of c.
double point_axis_distance(const Vector3d& x, const Cylinder& c);

double plane_signed_distance(const Vector3d& x, const Plane& p);

// Object-frame losses of the semantic residuals. The object x-axis is the
// cylinder axis; the object z-axis is the plane normal.
double plane_slab_loss(const Vector3d& x_obj, double slab_halfwidth);
double cylinder_surface_loss(const Vector3d& x_obj, double radius);

struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;

  Matrix3d matrix() const {
    Matrix3d k;
    k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return k;
  }
};

// Pinhole projection of a camera-frame point. Throws behind_camera for
// non-positive depth.
Vector2d project_point(const Vector3d& x_cam, const Intrinsics& k);

// Homogeneous 2D line with |(a,b,c)| = 1 and the first nonzero of (a,b)
// positive, so lines compare canonically.
struct ImageLine {
  Vector3d coeffs = Vector3d::Zero();

  static ImageLine from_coefficients(const Vector3d& abc);
  static ImageLine through_points(const Vector2d& p, const Vector2d& q);

  double signed_value(const Vector2d& p) const {
    return coeffs[0] * p[0] + coeffs[1] * p[1] + coeffs[2];
  }
  // Euclidean point-line distance in the line's 2D plane.
  double distance(const Vector2d& p) const;
};

// Gauge fix for cylinders: move the stored origin to the axis point
// nearest the centroid of the supporting points.
Cylinder gauge_fix_cylinder(const Cylinder& c,
                            const std::vector<Vector3d>& support);

Eigen::Quaterniond to_quaternion(const Matrix3d& r);
Matrix3d from_quaternion(double qx, double qy, double qz, double qw);

}  // namespace orchard
