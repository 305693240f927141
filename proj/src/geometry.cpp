#include "orchard/geometry.hpp"

#include <Eigen/SVD>
#include <cmath>

namespace orchard {

double rotation_defect(const Matrix3d& r) {
  return (r.transpose() * r - Matrix3d::Identity()).norm();
}

Matrix3d so3_hat(const Vector3d& v) {
  Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

Matrix3d rodrigues_exp(const Vector3d& axis_angle) {
  const double theta = axis_angle.norm();
  if (theta < 1e-12) return Matrix3d::Identity();
  const Vector3d axis = axis_angle / theta;
  const Matrix3d k = so3_hat(axis);
  return Matrix3d::Identity() + std::sin(theta) * k +
         (1.0 - std::cos(theta)) * k * k;
}

Vector3d rodrigues_log(const Matrix3d& rotation) {
  if (rotation_defect(rotation) > kRotationDefectTol ||
      rotation.determinant() < 0.0) {
    throw Error(ErrorCode::invalid_rotation,
                "rodrigues_log: input is not a rotation matrix");
  }
  const double trace = rotation.trace();
  const double cos_theta = std::min(1.0, std::max(-1.0, (trace - 1.0) / 2.0));
  const double theta = std::acos(cos_theta);
  if (theta < 1e-10) {
    // First-order: R ~ I + hat(w)
    return 0.5 * Vector3d(rotation(2, 1) - rotation(1, 2),
                          rotation(0, 2) - rotation(2, 0),
                          rotation(1, 0) - rotation(0, 1));
  }
  if (theta > M_PI - 1e-6) {
    // Near pi the antisymmetric part vanishes; recover the axis from the
    // symmetric part R + I = 2*(axis axis^T - cos ...) structure.
    Matrix3d s = 0.5 * (rotation + Matrix3d::Identity());
    Vector3d axis;
    int k = 0;
    s.diagonal().maxCoeff(&k);
    axis = s.col(k) / std::sqrt(std::max(s(k, k), 1e-16));
    axis.normalize();
    // Fix the sign so exp(log(R)) = R: pick the sign matching the
    // antisymmetric remainder, or the first positive convention at pi.
    Vector3d w(rotation(2, 1) - rotation(1, 2),
               rotation(0, 2) - rotation(2, 0),
               rotation(1, 0) - rotation(0, 1));
    if (w.dot(axis) < 0) axis = -axis;
    if (w.norm() < 1e-12) {
      // Exactly pi: canonicalize so the first nonzero component is positive.
      for (int i = 0; i < 3; ++i) {
        if (std::abs(axis[i]) > 1e-12) {
          if (axis[i] < 0) axis = -axis;
          break;
        }
      }
    }
    return theta * axis;
  }
  Vector3d w(rotation(2, 1) - rotation(1, 2), rotation(0, 2) - rotation(2, 0),
             rotation(1, 0) - rotation(0, 1));
  return (theta / (2.0 * std::sin(theta))) * w;
}

Matrix3d so3_left_jacobian_inverse(const Vector3d& phi) {
  const double theta = phi.norm();
  const Matrix3d k = so3_hat(phi);
  if (theta < 1e-8) {
    return Matrix3d::Identity() - 0.5 * k + (1.0 / 12.0) * k * k;
  }
  const double half = 0.5 * theta;
  const double cot_term = 1.0 / (theta * theta) -
                          (1.0 + std::cos(theta)) /
                              (2.0 * theta * std::sin(theta));
  return Matrix3d::Identity() - 0.5 * k + cot_term * k * k;
}

Matrix3d nearest_rotation(const Matrix3d& m) {
  // Already a rotation to machine precision: return it unchanged, which
  // makes repeated application bit-stable.
  if (rotation_defect(m) < 1e-12 && m.determinant() > 0) return m;
  Eigen::JacobiSVD<Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(2) <= 1e-9 * sv(0)) {
    throw Error(ErrorCode::degenerate_input,
                "nearest_rotation: rank-deficient input");
  }
  Matrix3d u = svd.matrixU();
  Matrix3d v = svd.matrixV();
  Matrix3d r = u * v.transpose();
  if (r.determinant() < 0) {
    u.col(2) *= -1.0;
    r = u * v.transpose();
  }
  return r;
}

double point_axis_distance(const Vector3d& x, const Cylinder& c) {
  const Vector3d d = x - c.origin;
  return (d - c.axis.dot(d) * c.axis).norm();
}

double point_cylinder_distance(const Vector3d& x, const Cylinder& c) {
  return std::abs(point_axis_distance(x, c) - c.radius);
}

double plane_signed_distance(const Vector3d& x, const Plane& p) {
  return p.normal.dot(x - p.origin);
}

double plane_slab_loss(const Vector3d& x_obj, double slab_halfwidth) {
  const double z = x_obj.z();
  return std::max({z - slab_halfwidth, 0.0, -z - slab_halfwidth});
}

double cylinder_surface_loss(const Vector3d& x_obj, double radius) {
  return std::abs(std::sqrt(x_obj.y() * x_obj.y() + x_obj.z() * x_obj.z()) -
                  radius);
}

Vector2d project_point(const Vector3d& x_cam, const Intrinsics& k) {
  if (x_cam.z() <= 0.0) {
    throw Error(ErrorCode::behind_camera,
                "project_point: non-positive depth");
  }
  return {k.fx * x_cam.x() / x_cam.z() + k.cx,
          k.fy * x_cam.y() / x_cam.z() + k.cy};
}

ImageLine ImageLine::from_coefficients(const Vector3d& abc) {
  const double n = abc.norm();
  if (n < 1e-15) {
    throw Error(ErrorCode::degenerate_input, "ImageLine: zero coefficients");
  }
  Vector3d c = abc / n;
  double lead = c[0];
  if (std::abs(lead) < 1e-14) lead = c[1];
  if (lead < 0) c = -c;
  ImageLine line;
  line.coeffs = c;
  return line;
}

ImageLine ImageLine::through_points(const Vector2d& p, const Vector2d& q) {
  const Vector3d hp(p.x(), p.y(), 1.0);
  const Vector3d hq(q.x(), q.y(), 1.0);
  return from_coefficients(hp.cross(hq));
}

double ImageLine::distance(const Vector2d& p) const {
  const double ab = std::hypot(coeffs[0], coeffs[1]);
  return std::abs(signed_value(p)) / ab;
}

Cylinder gauge_fix_cylinder(const Cylinder& c,
                            const std::vector<Vector3d>& support) {
  if (support.empty()) return c;
  Vector3d centroid = Vector3d::Zero();
  for (const auto& p : support) centroid += p;
  centroid /= static_cast<double>(support.size());
  Cylinder out = c;
  out.origin = c.project_to_axis(centroid);
  return out;
}

Eigen::Quaterniond to_quaternion(const Matrix3d& r) {
  Eigen::Quaterniond q(r);
  if (q.w() < 0) q.coeffs() *= -1.0;
  return q;
}

Matrix3d from_quaternion(double qx, double qy, double qz, double qw) {
  Eigen::Quaterniond q(qw, qx, qy, qz);
  q.normalize();
  return q.toRotationMatrix();
}

}  // namespace orchard
