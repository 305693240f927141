#pragma once

#include <string>
#include <vector>

#include "orchard/merging.hpp"
#include "orchard/morphology.hpp"
#include "orchard/reconstruction.hpp"
#include "orchard/scene_generator.hpp"
#include "orchard/semantic_fitting.hpp"

namespace orchard::io {

// ASCII PLY, x y z only. Extra properties are ignored on read.
void write_ply(const std::string& path, const std::vector<Vector3d>& points);
std::vector<Vector3d> read_ply(const std::string& path);

// One line per frame: "frame_id tx ty tz qx qy qz qw", camera-to-world.
void write_trajectory(const std::string& path,
                      const std::vector<RigidTransform>& cam_to_world);
std::vector<RigidTransform> read_trajectory(const std::string& path);

void write_tracks(const std::string& path, const SideInput& input);
SideInput read_tracks(const std::string& path);

void write_annotations(const std::string& path, SideTag side,
                       const std::vector<TrunkAnnotation>& trunks,
                       const std::vector<GroundAnnotation>& grounds);
void read_annotations(const std::string& path, SideTag* side,
                      std::vector<TrunkAnnotation>* trunks,
                      std::vector<GroundAnnotation>* grounds);

void write_correspondences(const std::string& path,
                           const std::vector<ObjectCorrespondence>& corr);
std::vector<ObjectCorrespondence> read_correspondences(
    const std::string& path);

void write_ground_truth(const std::string& path, const GroundTruth& truth,
                        const SceneSpec& spec);
GroundTruth read_ground_truth(const std::string& path,
                              SceneSpec* spec = nullptr);

// Reconstruction output: optimized poses and landmark positions.
void write_reconstruction(const std::string& path,
                          const ReconstructionSide& side);
void read_reconstruction(const std::string& path, ReconstructionSide* side);

// Merged model: transform, per-side poses/landmarks, object states, trunk
// fits, and stage metrics (merged.json + transform.txt + metrics.csv +
// merged_cloud.ply under `dir`).
void write_merged(const std::string& dir, const MergedModel& merged);
MergedModel read_merged(const std::string& dir);

void write_report_json(const std::string& path,
                       const std::vector<TreeRecord>& records);
void write_report_csv(const std::string& path,
                      const std::vector<TreeRecord>& records);

// Writes the eight scene files into `dir`.
void write_scene(const std::string& dir, const SceneData& scene);

std::string slurp(const std::string& path);  // input_error on failure

}  // namespace orchard::io
