#include "orchard/residuals.hpp"

#include <cmath>

namespace orchard {

namespace {

using RowMap = Eigen::Map<
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// d(project)/d(x_cam) for the pinhole model.
Eigen::Matrix<double, 2, 3> projection_jacobian(const Vector3d& x,
                                                const Intrinsics& k) {
  Eigen::Matrix<double, 2, 3> j;
  const double iz = 1.0 / x.z();
  j << k.fx * iz, 0, -k.fx * x.x() * iz * iz, 0, k.fy * iz,
      -k.fy * x.y() * iz * iz;
  return j;
}

}  // namespace

ResidualBlock reprojection_residual(int pose_id, int landmark_id,
                                    const Intrinsics& k,
                                    const Vector2d& pixel, RobustLoss loss,
                                    double weight) {
  ResidualBlock block;
  block.params = {pose_id, landmark_id};
  block.dim = 2;
  block.loss = loss;
  block.weight = weight;
  block.eval = [k, pixel](const std::vector<const double*>& p, double* r,
                          const std::vector<double*>& jac) {
    const RigidTransform pose = pose_from_array(p[0]);
    const Vector3d x(p[1][0], p[1][1], p[1][2]);
    const Vector3d x_cam = pose * x;
    // A guarded projection keeps trial steps finite when a point dips
    // behind the camera; the huge residual makes LM reject the step.
    Vector2d proj;
    if (x_cam.z() > 1e-9) {
      proj = project_point(x_cam, k);
    } else {
      proj = Vector2d(1e9, 1e9);
    }
    r[0] = pixel.x() - proj.x();
    r[1] = pixel.y() - proj.y();
    if (!jac[0] && !jac[1]) return;
    Eigen::Matrix<double, 2, 3> dproj =
        x_cam.z() > 1e-9 ? projection_jacobian(x_cam, k)
                         : Eigen::Matrix<double, 2, 3>::Zero();
    if (jac[0]) {
      RowMap j(jac[0], 2, 6);
      j.block<2, 3>(0, 0) = dproj * so3_hat(pose.rotation * x);
      j.block<2, 3>(0, 3) = -dproj;
    }
    if (jac[1]) {
      RowMap j(jac[1], 2, 3);
      j = -dproj * pose.rotation;
    }
  };
  return block;
}

ResidualBlock infrared_residual(int pose_id, int landmark_id,
                                const Matrix3d& k_i,
                                const RigidTransform& rgb_to_ir,
                                const Vector3d& x_measured_cam,
                                RobustLoss loss, double weight) {
  ResidualBlock block;
  block.params = {pose_id, landmark_id};
  block.dim = 3;
  block.loss = loss;
  block.weight = weight;
  // K_i [R_i|t_i] x_meas - K_i [R_i|t_i] (R_c X + t_c); the affine parts
  // cancel so only K_i R_i enters the difference.
  const Matrix3d m = k_i * rgb_to_ir.rotation;
  const Vector3d lhs = m * x_measured_cam;
  block.eval = [m, lhs](const std::vector<const double*>& p, double* r,
                        const std::vector<double*>& jac) {
    const RigidTransform pose = pose_from_array(p[0]);
    const Vector3d x(p[1][0], p[1][1], p[1][2]);
    const Vector3d rx = pose.rotation * x;
    Eigen::Map<Vector3d>{r} = lhs - m * (rx + pose.translation);
    if (jac[0]) {
      RowMap j(jac[0], 3, 6);
      j.block<3, 3>(0, 0) = m * so3_hat(rx);
      j.block<3, 3>(0, 3) = -m;
    }
    if (jac[1]) {
      RowMap j(jac[1], 3, 3);
      j = -m * pose.rotation;
    }
  };
  return block;
}

ResidualBlock infrared_residual_normalized(int pose_id, int landmark_id,
                                           const Matrix3d& k_i,
                                           const RigidTransform& rgb_to_ir,
                                           const Vector3d& x_measured_cam,
                                           RobustLoss loss, double weight) {
  ResidualBlock block;
  block.params = {pose_id, landmark_id};
  block.dim = 2;
  block.loss = loss;
  block.weight = weight;
  Intrinsics ki{k_i(0, 0), k_i(1, 1), k_i(0, 2), k_i(1, 2)};
  const Vector3d ir_meas = rgb_to_ir * x_measured_cam;
  block.eval = [ki, rgb_to_ir, ir_meas](const std::vector<const double*>& p,
                                        double* r,
                                        const std::vector<double*>& jac) {
    const RigidTransform pose = pose_from_array(p[0]);
    const Vector3d x(p[1][0], p[1][1], p[1][2]);
    const Vector3d x_ir = rgb_to_ir * (pose * x);
    Vector2d lhs(1e9, 1e9), rhs(0, 0);
    bool valid = ir_meas.z() > 1e-9 && x_ir.z() > 1e-9;
    if (valid) {
      lhs = project_point(ir_meas, ki);
      rhs = project_point(x_ir, ki);
    }
    r[0] = lhs.x() - rhs.x();
    r[1] = lhs.y() - rhs.y();
    if (!jac[0] && !jac[1]) return;
    Eigen::Matrix<double, 2, 3> dproj =
        valid ? projection_jacobian(x_ir, ki)
              : Eigen::Matrix<double, 2, 3>::Zero();
    const Eigen::Matrix<double, 2, 3> d = dproj * rgb_to_ir.rotation;
    if (jac[0]) {
      RowMap j(jac[0], 2, 6);
      j.block<2, 3>(0, 0) = d * so3_hat(pose.rotation * x);
      j.block<2, 3>(0, 3) = -d;
    }
    if (jac[1]) {
      RowMap j(jac[1], 2, 3);
      j = -d * pose.rotation;
    }
  };
  return block;
}

ResidualBlock relative_pose_residual(int pose_a, int pose_b,
                                     const RigidTransform& measured,
                                     double weight) {
  ResidualBlock block;
  block.params = {pose_a, pose_b};
  block.dim = 6;
  block.weight = weight;
  block.eval = [measured](const std::vector<const double*>& p, double* r,
                          const std::vector<double*>& jac) {
    const RigidTransform a = pose_from_array(p[0]);
    const RigidTransform b = pose_from_array(p[1]);
    const Matrix3d q = a.rotation * b.rotation.transpose();
    const Matrix3d rbar_t = measured.rotation.transpose();
    const Vector3d rot = rodrigues_log(rbar_t * q);
    const Vector3d qtb = q * b.translation;
    const Vector3d trans = rbar_t * (a.translation - qtb - measured.translation);
    Eigen::Map<Vector3d>{r} = rot;
    Eigen::Map<Vector3d>{r + 3} = trans;
    if (!jac[0] && !jac[1]) return;
    const Matrix3d jl_inv = so3_left_jacobian_inverse(rot);
    if (jac[0]) {
      RowMap j(jac[0], 6, 6);
      j.setZero();
      j.block<3, 3>(0, 0) = jl_inv * rbar_t;
      j.block<3, 3>(3, 0) = rbar_t * so3_hat(qtb);
      j.block<3, 3>(3, 3) = rbar_t;
    }
    if (jac[1]) {
      RowMap j(jac[1], 6, 6);
      j.setZero();
      j.block<3, 3>(0, 0) = -jl_inv.transpose();
      j.block<3, 3>(3, 0) = -rbar_t * q * so3_hat(b.translation);
      j.block<3, 3>(3, 3) = -rbar_t * q;
    }
  };
  return block;
}

ResidualBlock cylinder_point_residual(int frame_id, int radius_id,
                                      const Vector3d& point, RobustLoss loss,
                                      double weight) {
  ResidualBlock block;
  block.params = {frame_id, radius_id};
  block.dim = 1;
  block.loss = loss;
  block.weight = weight;
  block.eval = [point](const std::vector<const double*>& p, double* r,
                       const std::vector<double*>& jac) {
    const Vector3d axis(p[0][0], p[0][1], p[0][2]);
    const Vector3d origin(p[0][3], p[0][4], p[0][5]);
    const double radius = p[1][0];
    const Vector3d d = point - origin;
    const double along = axis.dot(d);
    const Vector3d perp = d - along * axis;
    const double rho = std::max(perp.norm(), 1e-12);
    r[0] = rho - radius;
    if (jac[0]) {
      // Local basis shared with CylinderFrameManifold.
      Vector3d u, w;
      unit_vector_basis(axis, u, w);
      const Eigen::RowVector3d drho_daxis = -(along / rho) * d.transpose();
      const Eigen::RowVector3d drho_dorigin = -perp.transpose() / rho;
      RowMap j(jac[0], 1, 4);
      j(0, 0) = drho_daxis * u.cross(axis);
      j(0, 1) = drho_daxis * w.cross(axis);
      j(0, 2) = drho_dorigin * u;
      j(0, 3) = drho_dorigin * w;
    }
    if (jac[1]) jac[1][0] = -1.0;
  };
  return block;
}

ResidualBlock semantic_point_residual(int object_pose_id, int camera_pose_id,
                                      ObjectPoseManifold::Kind kind,
                                      double shape,
                                      const Vector3d& x_measured_cam,
                                      double lambda_s, RobustLoss loss) {
  ResidualBlock block;
  block.params = {object_pose_id, camera_pose_id};
  block.dim = 1;
  block.loss = loss;
  block.weight = 1.0;
  const double scale = std::sqrt(std::max(lambda_s, 0.0));
  block.eval = [kind, shape, x_measured_cam, scale](
                   const std::vector<const double*>& p, double* r,
                   const std::vector<double*>& jac) {
    const RigidTransform object = pose_from_array(p[0]);
    const RigidTransform camera = pose_from_array(p[1]);
    const Vector3d x_world =
        camera.rotation.transpose() * (x_measured_cam - camera.translation);
    const Vector3d x_obj = object * x_world;

    double phi = 0.0;
    Eigen::RowVector3d dphi = Eigen::RowVector3d::Zero();
    if (kind == ObjectPoseManifold::Kind::cylinder) {
      const double rho =
          std::sqrt(x_obj.y() * x_obj.y() + x_obj.z() * x_obj.z());
      phi = rho - shape;  // signed; |phi| is the paper's loss
      if (rho > 1e-12) {
        dphi = Eigen::RowVector3d(0, x_obj.y() / rho, x_obj.z() / rho);
      }
    } else {
      const double z = x_obj.z();
      if (z > shape) {
        phi = z - shape;
        dphi = Eigen::RowVector3d(0, 0, 1);
      } else if (z < -shape) {
        phi = -z - shape;
        dphi = Eigen::RowVector3d(0, 0, -1);
      }  // inside the slab: zero with the subgradient fixed at 0
    }
    r[0] = scale * phi;
    if (jac[0]) {
      // Object pose local deltas per ObjectPoseManifold.
      Eigen::Matrix<double, 1, 3> dr_domega =
          scale * dphi * (-so3_hat(object.rotation * x_world));
      Eigen::Matrix<double, 1, 3> dr_dt = scale * dphi;
      RowMap j(jac[0], 1,
               kind == ObjectPoseManifold::Kind::cylinder ? 4 : 3);
      if (kind == ObjectPoseManifold::Kind::cylinder) {
        j(0, 0) = dr_domega(1);
        j(0, 1) = dr_domega(2);
        j(0, 2) = dr_dt(1);
        j(0, 3) = dr_dt(2);
      } else {
        j(0, 0) = dr_domega(0);
        j(0, 1) = dr_domega(1);
        j(0, 2) = dr_dt(2);
      }
    }
    if (jac[1]) {
      const Eigen::RowVector3d dr_dxw = scale * dphi * object.rotation;
      RowMap j(jac[1], 1, 6);
      j.block<1, 3>(0, 0) =
          dr_dxw * camera.rotation.transpose() *
          so3_hat(x_measured_cam - camera.translation);
      j.block<1, 3>(0, 3) = -dr_dxw * camera.rotation.transpose();
    }
  };
  return block;
}

ResidualBlock direction_align_residual(int pose_id, const Vector3d& dir_back,
                                       const Vector3d& dir_front,
                                       double weight) {
  ResidualBlock block;
  block.params = {pose_id};
  block.dim = 3;
  block.weight = weight;
  block.eval = [dir_back, dir_front](const std::vector<const double*>& p,
                                     double* r,
                                     const std::vector<double*>& jac) {
    const RigidTransform t = pose_from_array(p[0]);
    const Vector3d rn = t.rotation * dir_back;
    Eigen::Map<Vector3d>{r} = rn - dir_front;
    if (jac[0]) {
      RowMap j(jac[0], 3, 6);
      j.setZero();
      j.block<3, 3>(0, 0) = -so3_hat(rn);
    }
  };
  return block;
}

ResidualBlock cylinder_origin_align_residual(int pose_id,
                                             const Vector3d& origin_back,
                                             const Vector3d& axis_front,
                                             const Vector3d& origin_front,
                                             double weight) {
  ResidualBlock block;
  block.params = {pose_id};
  block.dim = 3;
  block.weight = weight;
  block.eval = [origin_back, axis_front, origin_front](
                   const std::vector<const double*>& p, double* r,
                   const std::vector<double*>& jac) {
    const RigidTransform t = pose_from_array(p[0]);
    const Vector3d ro = t.rotation * origin_back;
    const Matrix3d nx = so3_hat(axis_front);
    Eigen::Map<Vector3d>{r} = nx * (ro + t.translation - origin_front);
    if (jac[0]) {
      RowMap j(jac[0], 3, 6);
      j.block<3, 3>(0, 0) = nx * (-so3_hat(ro));
      j.block<3, 3>(0, 3) = nx;
    }
  };
  return block;
}

ResidualBlock plane_origin_align_residual(int pose_id,
                                          const Vector3d& origin_back,
                                          const Vector3d& normal_front,
                                          const Vector3d& origin_front,
                                          double weight) {
  ResidualBlock block;
  block.params = {pose_id};
  block.dim = 1;
  block.weight = weight;
  block.eval = [origin_back, normal_front, origin_front](
                   const std::vector<const double*>& p, double* r,
                   const std::vector<double*>& jac) {
    const RigidTransform t = pose_from_array(p[0]);
    const Vector3d ro = t.rotation * origin_back;
    r[0] = normal_front.dot(ro + t.translation - origin_front);
    if (jac[0]) {
      RowMap j(jac[0], 1, 6);
      j.block<1, 3>(0, 0) =
          normal_front.transpose() * (-so3_hat(ro));
      j.block<1, 3>(0, 3) = normal_front.transpose();
    }
  };
  return block;
}

}  // namespace orchard
