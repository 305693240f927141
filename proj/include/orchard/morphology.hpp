#pragma once

#include <string>
#include <vector>

#include "orchard/config.hpp"
#include "orchard/convex_hull.hpp"
#include "orchard/delaunay.hpp"
#include "orchard/geometry.hpp"

namespace orchard {

struct AlphaShape3D {
  double alpha = 0.0;
  std::vector<int> kept;  // indices into the triangulation's tetrahedra
  std::vector<double> component_volumes;  // descending
  double volume = 0.0;
};

// Keep tetrahedra with circumradius <= alpha, drop connected components
// smaller than min_component_fraction of the largest, sum the volume.
// Throws degenerate_input for coplanar input.
std::pair<double, AlphaShape3D> alpha_shape_volume(
    const std::vector<Vector3d>& points, double alpha,
    double min_component_fraction,
    par::ExecMode exec = par::default_mode());

// Same filter against a prebuilt triangulation (used by alpha sweeps).
AlphaShape3D alpha_filter(const Delaunay3D& tri, double alpha,
                          double min_component_fraction,
                          par::ExecMode exec = par::default_mode());

// 3D line on the ground plane through the ground-projected trunk origins.
struct RowTrack {
  Vector3d point = Vector3d::Zero();
  Vector3d direction = Vector3d::UnitX();  // unit, in the ground plane
};
RowTrack fit_row_track(const std::vector<Vector3d>& trunk_origins,
                       const Plane& ground);

struct TreeRegion {
  int tree = 0;
  double cut_low = 0.0;   // stations of the cutting planes along the track
  double cut_high = 0.0;
  double station = 0.0;   // trunk station
};

struct Segmentation {
  RowTrack track;
  std::vector<TreeRegion> regions;
  std::vector<std::vector<int>> members;  // per tree, overlap permitted
};

// Cutting planes at the along-track density minimum of each trunk gap
// (middle 50%, midpoint fallback); each tree keeps the points of its slab
// plus two half-cylinders of radius sqrt(2) * d_s around the trunk
// vertical. Trunks must be ordered along the track.
Segmentation segment_trees(const std::vector<Vector3d>& points,
                           const std::vector<Cylinder>& trunks,
                           const std::vector<Plane>& grounds,
                           const RowTrack& track, const PipelineConfig& cfg);

struct PoleExclusion {
  bool enabled = false;
  double radius = 0.10;
  Vector3d trunk_point = Vector3d::Zero();  // point on the pole vertical
  Vector3d vertical = Vector3d::UnitZ();
};

// Height of the bounding box above the local ground plane, measured along
// the plane normal, after optional pole removal. Throws empty-tree when
// nothing lies above the plane.
double tree_height(const std::vector<Vector3d>& points, const Plane& ground,
                   const PoleExclusion& pole = {});

// pi R^2 H of the circumscribing cylinder: H is the max height above the
// ground, R the max radial distance from the trunk vertical.
double cylinder_model_volume(const std::vector<Vector3d>& points,
                             const Plane& ground, const Vector3d& trunk_point,
                             const Vector3d& vertical);

struct TreeRecord {
  int tree_id = 0;
  double diameter_m = 0.0;
  double height_m = 0.0;
  double vol_alpha_m3 = 0.0;
  double vol_hull_m3 = 0.0;
  double vol_cyl_m3 = 0.0;
  double alpha_m = 0.0;
  std::string error;  // empty when the tree measured cleanly
};

struct TreeObjects {
  int id = 0;
  Cylinder trunk;   // merged-frame two-sided fit
  double diameter = 0.0;
  Plane ground;
};

// Ground-slab removal plus station-ordered segmentation; memberships come
// back aligned with the input tree order.
struct CanopySegmentation {
  std::vector<Vector3d> canopy;
  std::vector<std::vector<int>> members;
};
CanopySegmentation segment_for_trees(const std::vector<Vector3d>& points,
                                     const std::vector<TreeObjects>& trees,
                                     const PipelineConfig& cfg);

// Per-tree measurement over the merged cloud: segmentation, heights, and
// the three volume models. Ground-slab points are removed before
// segmentation. Per-tree failures land in TreeRecord::error.
std::vector<TreeRecord> measure_all(const std::vector<Vector3d>& points,
                                    const std::vector<TreeObjects>& trees,
                                    const PipelineConfig& cfg,
                                    par::ExecMode exec = par::default_mode());

}  // namespace orchard
