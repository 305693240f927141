#pragma once

#include "orchard/geometry.hpp"
#include "orchard/least_squares.hpp"

namespace orchard {

// Residual factories shared by the adjustment stages. All Jacobians are
// analytic with respect to the local increments documented on the
// manifolds (left-multiplicative rotation updates).

// E_o of the RGB reprojection: pixel - project(K, R*X + t).
// params: [pose(12), landmark(3)]
ResidualBlock reprojection_residual(int pose_id, int landmark_id,
                                    const Intrinsics& k,
                                    const Vector2d& pixel, RobustLoss loss,
                                    double weight = 1.0);

// E_i in the literal unnormalized form: K_i*T_i applied to the measured
// camera-frame point and to the transformed landmark, subtracted as plain
// 3-vectors. params: [pose(12), landmark(3)]
ResidualBlock infrared_residual(int pose_id, int landmark_id,
                                const Matrix3d& k_i,
                                const RigidTransform& rgb_to_ir,
                                const Vector3d& x_measured_cam,
                                RobustLoss loss, double weight = 1.0);

// Dehomogenized variant of E_i (2D comparison on the infrared image
// plane), selectable by configuration.
ResidualBlock infrared_residual_normalized(int pose_id, int landmark_id,
                                           const Matrix3d& k_i,
                                           const RigidTransform& rgb_to_ir,
                                           const Vector3d& x_measured_cam,
                                           RobustLoss loss,
                                           double weight = 1.0);

// log(T_measured^-1 * T_a * T_b^-1) stacked as (rotation, translation).
// params: [pose_a(12), pose_b(12)]
ResidualBlock relative_pose_residual(int pose_a, int pose_b,
                                     const RigidTransform& measured,
                                     double weight = 1.0);

// Signed point-to-cylinder-surface distance dist(x, axis) - radius.
// params: [frame(6, CylinderFrameManifold), radius(1)]
ResidualBlock cylinder_point_residual(int frame_id, int radius_id,
                                      const Vector3d& point,
                                      RobustLoss loss = RobustLoss::None(),
                                      double weight = 1.0);

// Semantic membership term E_b: the measured camera-frame point is carried
// into the object frame through both poses and penalized by the object
// loss (cylinder surface phi_1 or plane slab phi_0). The residual is
// sqrt(lambda_s) * phi. params: [object_pose(12), camera_pose(12)]
ResidualBlock semantic_point_residual(int object_pose_id, int camera_pose_id,
                                      ObjectPoseManifold::Kind kind,
                                      double shape,
                                      const Vector3d& x_measured_cam,
                                      double lambda_s, RobustLoss loss);

// Alignment residuals of the two-side transform (axis/normal equality,
// cylinder origins on a common line, plane origins on a common plane).
// params: [transform(12)]
ResidualBlock direction_align_residual(int pose_id, const Vector3d& dir_back,
                                       const Vector3d& dir_front,
                                       double weight = 1.0);
ResidualBlock cylinder_origin_align_residual(int pose_id,
                                             const Vector3d& origin_back,
                                             const Vector3d& axis_front,
                                             const Vector3d& origin_front,
                                             double weight = 1.0);
ResidualBlock plane_origin_align_residual(int pose_id,
                                          const Vector3d& origin_back,
                                          const Vector3d& normal_front,
                                          const Vector3d& origin_front,
                                          double weight = 1.0);

}  // namespace orchard
