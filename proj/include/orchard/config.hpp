#pragma once

#include <cstdint>
#include <string>

namespace orchard {

// Flat tunable surface of the whole pipeline. Loadable from a JSON
// document or a key=value file; unknown keys are rejected and every value
// is range-checked at load time.
struct PipelineConfig {
  std::uint64_t seed = 0;
  int threads = 0;  // 0 keeps the runtime default

  // Robust losses
  double huber_delta_px = 1.0;   // 2D reprojection residuals
  double huber_delta_3d = 0.01;  // metric 3D residuals (m)
  double huber_delta_ei = 5.0;   // unnormalized E_i residuals (K-scaled m)

  // Eq. (3)/(9) silhouette weight and Eq. (8) semantic weight
  double lambda = 1.0;
  double lambda_s = 1.0;
  bool lambda_s_per_object = false;  // scale by 1/|members| per object
  bool ei_normalized = false;        // dehomogenized E_i variant

  // Ground-plane admissibility
  double theta_max_deg = 30.0;
  double ground_t_s = 0.05;
  double ground_boundary_eps = 0.02;

  // Robust fitting
  int ransac_max_iters = 500;
  double cylinder_inlier_threshold = 0.008;
  double pairwise_inlier_threshold = 0.02;
  double max_trunk_radius = 0.5;

  // Reconstruction
  int min_loop_inliers = 100;
  int local_ba_min_shared = 15;
  int local_ba_max_window = 10;  // largest covisible window per solve
  int local_ba_stride = 5;       // solve every k-th frame's window
  int pairwise_ba_iterations = 8;
  int local_ba_iterations = 5;
  int global_ba_iterations = 25;
  bool use_loops = true;

  // Merging
  int sba_iterations = 20;

  // Morphology
  double alpha_m = 0.8;
  double min_component_fraction = 0.01;
  double slice_h0 = 0.25;
  double slice_dh = 0.10;
  bool pole_exclusion = false;
  double pole_radius = 0.10;
  double row_margin = 1.0;
  double segment_bin = 0.05;
  int max_triangulation_points = 20000;

  // Throws Error(input_error) on unknown keys or out-of-range values.
  static PipelineConfig from_json_text(const std::string& text);
  static PipelineConfig from_key_value_text(const std::string& text);
  static PipelineConfig from_file(const std::string& path);

  std::string to_json_text() const;

  // Set one key from its string form (shared by both loaders and the CLI
  // --set overrides).
  void set(const std::string& key, const std::string& value);
};

}  // namespace orchard
