#pragma once

#include <string>
#include <vector>

#include "orchard/config.hpp"
#include "orchard/geometry.hpp"
#include "orchard/reconstruction.hpp"
#include "orchard/scene_generator.hpp"
#include "orchard/semantic_fitting.hpp"

namespace orchard {

// One reconstructed side plus its dense cloud, annotations, and the
// semantic objects fitted in the side's own frame.
struct SideModel {
  ReconstructionSide recon;
  std::vector<Vector3d> cloud;
  std::vector<FittedObject> objects;
  std::vector<TrunkAnnotation> trunks;
  std::vector<GroundAnnotation> grounds;

  const FittedObject* object(int id, ObjectKind kind) const {
    for (const auto& o : objects) {
      if (o.id == id && o.kind == kind) return &o;
    }
    return nullptr;
  }
};

struct SemanticObjectState {
  int front_id = 0;  // ids of the corresponded per-side objects
  int back_id = 0;
  ObjectKind kind = ObjectKind::cylinder;
  RigidTransform pose;  // merged world -> object frame
  double shape = 0.0;   // cylinder r_s or plane t_s
  struct Member {
    SideTag side;
    int frame;
    Vector3d point_cam;
  };
  std::vector<Member> members;
};

struct StageMetrics {
  std::string stage;  // initial | refined | sba
  std::vector<double> trunk_offsets;  // lateral axis offset per trunk (m)
  double mean_offset = 0.0;
  double max_offset = 0.0;
};

struct MergedModel {
  ReconstructionSide front;
  ReconstructionSide back;  // poses and landmarks re-expressed in F
  RigidTransform f_from_b;
  std::vector<Vector3d> cloud;  // front points then transformed back points
  int front_point_count = 0;    // provenance split of `cloud`
  std::vector<SemanticObjectState> objects;
  std::vector<ObjectCorrespondence> correspondences;
  std::vector<TwoSidedTrunkFit> trunk_fits;  // per cylinder correspondence
  std::vector<StageMetrics> metrics;
};

// Closed-form alignment from object correspondences: the direction, axis
// and plane constraints stacked as A x = b over the 12 transform entries,
// rotation projected to SO(3), translation re-solved with it fixed. Needs
// two cylinders and one plane minimum; throws degenerate-configuration.
RigidTransform solve_initial_transform(
    const std::vector<ObjectCorrespondence>& corr,
    const std::vector<FittedObject>& front_objects,
    const std::vector<FittedObject>& back_objects);

// LM refinement of the same residuals from T_init.
RigidTransform refine_transform(
    const std::vector<ObjectCorrespondence>& corr,
    const std::vector<FittedObject>& front_objects,
    const std::vector<FittedObject>& back_objects,
    const RigidTransform& t_init);

// Semantic bundle adjustment over both sides: Eq. (2) terms plus the
// object membership terms; object shapes stay fixed, first front frame
// holds the gauge. Returns the solver report.
SolveReport semantic_bundle_adjust(MergedModel& merged, double lambda_s,
                                   const PipelineConfig& cfg);

// Full merge: closed-form transform, LM refinement, re-expression of the
// back side in F, two-sided trunk fits, semantic BA; per-stage trunk
// misalignment metrics are recorded along the way.
MergedModel merge_sides(const SideModel& front, const SideModel& back,
                        const std::vector<ObjectCorrespondence>& corr,
                        const PipelineConfig& cfg);

// Lateral distance between the per-side trunk axes of each cylinder
// correspondence, re-fitted from member observations mapped through the
// current poses. This is the misalignment metric of the merge stages.
StageMetrics measure_trunk_misalignment(const MergedModel& merged,
                                        const std::string& stage,
                                        const PipelineConfig& cfg);

// Points within the diameter-measurement band above the local ground.
std::vector<int> extract_trunk_slice(const std::vector<Vector3d>& points,
                                     const Plane& ground, double h0,
                                     double dh);

// Fits the per-side semantic objects (trunk cylinders from the annotated
// members, prior-guided local grounds from the candidate sets) and bundles
// everything a merge needs into a SideModel.
SideModel assemble_side_model(ReconstructionSide recon,
                              std::vector<Vector3d> cloud,
                              std::vector<TrunkAnnotation> trunks,
                              std::vector<GroundAnnotation> grounds,
                              const PipelineConfig& cfg);

}  // namespace orchard
