#pragma once

#include <vector>

#include "orchard/config.hpp"
#include "orchard/geometry.hpp"
#include "orchard/reconstruction.hpp"

namespace orchard {

// One annotated view of a trunk: the camera, the intrinsics, and the two
// boundary lines marked in that image (pixel-space coefficients).
struct AnnotatedView {
  RigidTransform pose;  // side world -> camera
  Intrinsics intrinsics;
  ImageLine line_a;
  ImageLine line_b;
  SideTag side = SideTag::front;  // which side's cylinder the view annotates
};

// One measured camera-frame point of an annotated object; `member` indexes
// the annotation's own id list (members or candidates).
struct MemberObs {
  int member = 0;
  Vector3d point_cam = Vector3d::Zero();
};

struct TrunkAnnotationFrame {
  int frame = 0;
  ImageLine line_a;
  ImageLine line_b;
  std::vector<int> members;  // indices into the side cloud
  std::vector<MemberObs> member_obs;
};

struct TrunkAnnotation {
  int id = 0;
  SideTag side = SideTag::front;
  double slice_h0 = -1.0;  // < 0 falls back to the configured default
  double slice_dh = -1.0;
  std::vector<TrunkAnnotationFrame> frames;
};

struct GroundAnnotation {
  int id = 0;
  SideTag side = SideTag::front;
  int frame = 0;  // only the frame number is recorded for planes
  std::vector<int> candidates;  // indices into the side cloud
  std::vector<MemberObs> member_obs;
};

enum class ObjectKind { cylinder, plane };

struct FittedObject {
  int id = 0;
  ObjectKind kind = ObjectKind::cylinder;
  Cylinder cylinder;
  Plane plane;
  std::vector<int> support;  // inlier indices into the fitting input
  double rms = 0.0;
};

// Total-least-squares 2D line (perpendicular distances; handles vertical
// lines). Throws degenerate_input when the points are coincident.
ImageLine fit_line_tls(const std::vector<Vector2d>& points);

// Apparent contour of a cylinder: the two image lines cut by the planes
// through the camera center tangent to the infinite cylinder. The pair is
// ordered by the signed side of the projected axis. Throws degenerate_view
// when the camera is inside the cylinder or on the axis.
std::pair<ImageLine, ImageLine> project_cylinder_silhouette(
    const Cylinder& cylinder, const RigidTransform& world_to_cam,
    const Intrinsics& k);

// Eq. (3): RANSAC over nine-point quadric hypotheses, then a joint LM over
// axis, origin and radius with the silhouette terms weighted by lambda.
Cylinder fit_trunk_cylinder(const std::vector<Vector3d>& points,
                            const std::vector<AnnotatedView>& views,
                            double lambda, std::uint64_t seed,
                            const PipelineConfig& cfg,
                            std::vector<int>* inliers = nullptr,
                            Cylinder* ransac_model = nullptr);

// Prior-guided ground plane: hypotheses must roughly align with the trunk
// axis and sit on the boundary of the cloud. Normal oriented along the
// prior.
Plane fit_ground_plane_with_prior(const std::vector<Vector3d>& points,
                                  const Vector3d& prior_axis, double t_s,
                                  std::uint64_t seed,
                                  const PipelineConfig& cfg,
                                  std::vector<int>* inliers = nullptr);

// Eq. (9): joint two-side fit with per-side axes and origins and a single
// shared radius. Returns the two cylinders and the shared diameter 2 r_d.
struct TwoSidedTrunkFit {
  Cylinder front;
  Cylinder back;
  double diameter = 0.0;
  double final_cost = 0.0;
};
TwoSidedTrunkFit fit_trunk_two_sided(const std::vector<Vector3d>& front_points,
                                     const std::vector<Vector3d>& back_points,
                                     const std::vector<AnnotatedView>& views,
                                     double lambda, std::uint64_t seed,
                                     const PipelineConfig& cfg);

// Eq. (3) objective for a given cylinder state (used by tests and by the
// optimizer's bookkeeping).
double trunk_cost(const Cylinder& cylinder,
                  const std::vector<Vector3d>& points,
                  const std::vector<AnnotatedView>& views, double lambda);

}  // namespace orchard
