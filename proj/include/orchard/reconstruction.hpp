#pragma once

#include <optional>
#include <unordered_map>
#include <vector>

#include "orchard/config.hpp"
#include "orchard/geometry.hpp"
#include "orchard/least_squares.hpp"

namespace orchard {

struct CameraRig {
  Intrinsics rgb;       // K_o
  Intrinsics infrared;  // K_i
  RigidTransform rgb_to_ir;  // [R_i | t_i]
};

enum class SideTag { front, back };
inline const char* side_name(SideTag t) {
  return t == SideTag::front ? "front" : "back";
}

struct CameraFrame {
  int id = 0;
  RigidTransform pose;  // world -> camera
};

struct Observation {
  int frame = 0;
  int landmark = 0;
  Vector2d pixel = Vector2d::Zero();
  Vector3d point_cam = Vector3d::Zero();  // measured 3D point, camera frame
  bool valid_depth = true;
};

struct LandmarkPoint {
  int id = 0;
  Vector3d position = Vector3d::Zero();  // side world frame
};

struct FramePair {
  int frame_a = 0;
  int frame_b = 0;
};

// Loop candidate: a frame pair plus the landmark-id matches between the
// two visits (re-observations carry fresh ids, as a front end would emit).
struct LoopCandidate {
  int frame_a = 0;
  int frame_b = 0;
  std::vector<std::pair<int, int>> matches;
};

struct LoopEdge {
  int frame_a = 0;
  int frame_b = 0;
  RigidTransform relative;  // maps frame_b camera coords into frame_a's
  int inliers = 0;
  std::vector<std::pair<int, int>> matches;  // surviving id pairs
};

struct SideInput {
  SideTag tag = SideTag::front;
  CameraRig rig;
  int frame_count = 0;
  std::vector<Observation> observations;
  std::vector<FramePair> pairs;
  std::vector<LoopCandidate> loop_candidates;
};

struct ReconstructionSide {
  SideTag tag = SideTag::front;
  CameraRig rig;
  std::vector<CameraFrame> frames;
  std::vector<LandmarkPoint> landmarks;
  std::vector<Observation> observations;
  std::vector<FramePair> consecutive_pairs;
  std::vector<LoopCandidate> loop_candidates;
  std::vector<LoopEdge> loop_edges;

  std::unordered_map<int, int> landmark_index;  // id -> index in landmarks

  int landmark_of(int id) const {
    auto it = landmark_index.find(id);
    return it == landmark_index.end() ? -1 : it->second;
  }
  void rebuild_landmark_index();
};

// RANSAC three-point pose from 3D-3D matches, least-squares refined on the
// inliers. Returns T with first ~ T * second. Throws insufficient-data for
// < 3 usable matches or all-degenerate samples.
struct PairwisePose {
  RigidTransform transform;
  std::vector<char> inlier_mask;
  int inliers = 0;
};
PairwisePose estimate_pairwise_pose(
    const std::vector<std::pair<Vector3d, Vector3d>>& matches,
    double inlier_threshold, std::uint64_t seed, int max_iters = 200);

enum class BaScope { pairwise, local, global };

// Eq. (2) bundle adjustment over the requested scope; `fixed` frames hold
// the gauge. Updates poses and landmarks in place.
SolveReport bundle_adjust(ReconstructionSide& side, BaScope scope,
                          const std::vector<int>& fixed,
                          const PipelineConfig& cfg);

// Keeps the candidates whose RANSAC pose estimate reaches min_loop_inliers
// and returns them as pose-graph edges (also appended to the side).
std::vector<LoopEdge> link_loops(ReconstructionSide& side,
                                 const std::vector<LoopCandidate>& candidates,
                                 const PipelineConfig& cfg);

struct PoseGraphEdge {
  int frame_a = 0;
  int frame_b = 0;
  RigidTransform relative;  // measured: maps frame_b camera coords to frame_a
};

// Minimizes sum |log(T_edge^-1 T_a T_b^-1)|^2 over the 6-DOF poses with
// one frame fixed. Throws disconnected-graph when the edges do not span
// all frames from the fixed one.
SolveReport pose_graph_optimize(std::vector<CameraFrame>& frames,
                                const std::vector<PoseGraphEdge>& edges,
                                int fixed_frame);

// Full single-side backend: chain pairwise poses, pairwise BA, local BA,
// loop linking, pose-graph optimization, global BA.
ReconstructionSide reconstruct_side(const SideInput& input,
                                    const PipelineConfig& cfg);

}  // namespace orchard
