#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "orchard/geometry.hpp"
#include "orchard/reconstruction.hpp"
#include "orchard/semantic_fitting.hpp"

namespace orchard {

struct ValueRange {
  double lo = 0.0;
  double hi = 0.0;
};

// Synthetic-orchard specification. Everything the oracle scenes vary is
// here; defaults give a clean noiseless row.
struct SceneSpec {
  std::uint64_t seed = 1;
  int tree_count = 10;
  double spacing = 1.6;  // m between trunks along the row

  ValueRange trunk_radius{0.025, 0.045};
  ValueRange trunk_height{0.60, 0.78};  // ground to canopy base
  double trunk_tilt_deg = 3.0;          // per-tree lean, uniform up to this

  ValueRange canopy_rx{0.95, 1.15};  // shell semi-axes: along row,
  ValueRange canopy_ry{0.95, 1.15};  // across row,
  ValueRange canopy_rz{0.85, 1.00};  // vertical
  double canopy_jitter = 0.05;       // shell thickness (m)
  int canopy_points = 3000;          // per tree, split between the sides
  int trunk_points = 500;            // per tree per side
  int ground_points = 350;           // per tree per side

  std::string ground_kind = "flat";  // flat | sloped
  double ground_slope_deg = 0.0;

  bool pole = false;
  double pole_radius = 0.02;
  double pole_top = 3.5;
  int pole_points = 150;

  // Trajectories
  double standoff = 2.2;
  double camera_height = 1.2;
  double frame_step = 0.10;     // m of travel between frames
  int frames_per_side = 0;      // 0 = derived from row length and step
  bool loop_per_side = false;   // out-and-back pass with loop candidates
  int loop_candidate_stride = 12;

  // Feature tracks
  int landmarks_per_tree = 120;
  double visibility_range = 1.2;  // m of travel a landmark stays tracked

  // Noise
  double pixel_sigma = 0.0;
  double depth_sigma = 0.0;
  double outlier_fraction = 0.0;
  double trunk_radial_bias = 0.0;  // outward bias of trunk depth points (m)
  double line_sigma_px = 0.0;      // silhouette annotation noise

  // Back-side drift injection (per 10 m of travel)
  double drift_lateral_per_10m = 0.0;
  double drift_yaw_deg_per_10m = 0.0;
  bool drift_front = false;  // apply to the front side instead

  // Semantic annotation density
  int annotated_frames_per_trunk = 3;

  static SceneSpec from_json_text(const std::string& text);  // bad-spec on error
  static SceneSpec from_file(const std::string& path);
  std::string to_json_text() const;
};

struct TreeTruth {
  int id = 0;
  double diameter = 0.0;
  double height = 0.0;
  double volume_sample = 0.0;  // hull volume of the true canopy samples
  Vector3d trunk_base = Vector3d::Zero();   // row frame
  Vector3d trunk_axis = Vector3d::UnitZ();  // row frame
};

// Per-point generator label. cls: 0 trunk, 1 ground, 2 canopy, 3 pole.
struct PointLabel {
  int tree = -1;
  int cls = -1;
};

struct GroundTruth {
  RigidTransform f_from_b;  // true ^F_B T
  std::vector<TreeTruth> trees;
  std::vector<RigidTransform> front_trajectory;  // cam-to-world, side frame
  std::vector<RigidTransform> back_trajectory;
  std::vector<PointLabel> front_labels;
  std::vector<PointLabel> back_labels;
};

struct SideData {
  SideTag tag = SideTag::front;
  SideInput input;  // rig, observations, pairs, loop candidates
  std::vector<Vector3d> cloud;  // dense points, side world frame
  std::vector<TrunkAnnotation> trunks;
  std::vector<GroundAnnotation> grounds;
};

struct ObjectCorrespondence {
  int front_id = 0;
  int back_id = 0;
  ObjectKind kind = ObjectKind::cylinder;
};

struct SceneData {
  SceneSpec spec;
  SideData front;
  SideData back;
  std::vector<ObjectCorrespondence> correspondences;
  GroundTruth truth;
};

// Deterministic given spec.seed; per-tree substreams keep the output
// independent of generation order. Throws bad-spec for infeasible
// geometry (camera inside the canopy envelope).
SceneData generate_scene(const SceneSpec& spec);

struct DriftSpec {
  double lateral_per_10m = 0.0;
  double yaw_deg_per_10m = 0.0;
  Vector3d lateral_dir = Vector3d::UnitY();  // world frame
  Vector3d up = Vector3d::UnitZ();
};

// Cumulative lateral/yaw perturbation over arc length; frame 0 unchanged.
// Optionally reports the per-frame world warp D_k with perturbed = D_k *
// original (used to keep generated measurements self-consistent).
std::vector<RigidTransform> inject_drift(
    const std::vector<RigidTransform>& cam_to_world, const DriftSpec& drift,
    std::vector<RigidTransform>* warps = nullptr);

// SplitMix64 substream derivation used for all per-tree generators.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace orchard
