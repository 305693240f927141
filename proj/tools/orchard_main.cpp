// Batch driver for the orchard mapping pipeline:
//   synth        generate a synthetic scene directory
//   reconstruct  single-side backend (trajectory + landmarks)
//   merge        two-side alignment and semantic bundle adjustment
//   measure      per-tree morphology report
//   sweep        alpha-radius sweep of the canopy volumes
#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "orchard/io.hpp"
#include "orchard/merging.hpp"
#include "orchard/morphology.hpp"
#include "orchard/reconstruction.hpp"
#include "orchard/scene_generator.hpp"

namespace fs = std::filesystem;
using namespace orchard;

namespace {

int g_log_level = 1;  // 0 quiet, 1 info, 2 debug

void log_info(const std::string& msg) {
  if (g_log_level >= 1) std::cerr << "[orchard] " << msg << "\n";
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::input_error:
    case ErrorCode::bad_spec:
      return 2;
    case ErrorCode::degenerate_input:
    case ErrorCode::degenerate_view:
    case ErrorCode::degenerate_configuration:
    case ErrorCode::no_model_found:
    case ErrorCode::insufficient_data:
    case ErrorCode::missing_constraint:
    case ErrorCode::ordering_violation:
    case ErrorCode::empty_tree:
    case ErrorCode::invalid_rotation:
    case ErrorCode::behind_camera:
      return 3;
    default:
      return 4;
  }
}

struct GlobalArgs {
  std::string config_path;
  std::int64_t seed = -1;
  int threads = 0;
  std::string log_level = "info";
};

PipelineConfig make_config(const GlobalArgs& g) {
  PipelineConfig cfg;
  if (!g.config_path.empty()) cfg = PipelineConfig::from_file(g.config_path);
  if (g.seed >= 0) cfg.seed = static_cast<std::uint64_t>(g.seed);
  if (g.threads > 0) cfg.threads = g.threads;
  if (cfg.threads > 0) par::set_thread_count(cfg.threads);
  if (g.log_level == "quiet") g_log_level = 0;
  else if (g.log_level == "debug") g_log_level = 2;
  return cfg;
}

SideModel load_side(const std::string& dir, SideTag tag,
                    const PipelineConfig& cfg) {
  const std::string prefix = std::string(side_name(tag)) + "_";
  const SideInput input = io::read_tracks(dir + "/" + prefix + "tracks.json");
  ReconstructionSide recon;
  recon.tag = input.tag;
  recon.rig = input.rig;
  recon.observations = input.observations;
  recon.consecutive_pairs = input.pairs;
  io::read_reconstruction(dir + "/" + prefix + "reconstruction.json", &recon);
  std::vector<Vector3d> cloud =
      io::read_ply(dir + "/" + prefix + "cloud.ply");
  SideTag file_tag;
  std::vector<TrunkAnnotation> trunks;
  std::vector<GroundAnnotation> grounds;
  io::read_annotations(dir + "/" + prefix + "annotations.json", &file_tag,
                       &trunks, &grounds);
  return assemble_side_model(std::move(recon), std::move(cloud),
                             std::move(trunks), std::move(grounds), cfg);
}

std::vector<TreeObjects> trees_from_merged(const MergedModel& merged) {
  std::vector<TreeObjects> trees;
  int fit_index = 0;
  for (const auto& obj : merged.objects) {
    if (obj.kind != ObjectKind::cylinder) continue;
    TreeObjects t;
    t.id = obj.front_id;
    if (fit_index < static_cast<int>(merged.trunk_fits.size())) {
      const auto& fit = merged.trunk_fits[fit_index];
      t.trunk = fit.front;
      t.diameter = fit.diameter;
    }
    // Optimized object pose overrides the axis/origin.
    t.trunk.axis = obj.pose.rotation.row(0).transpose();
    t.trunk.origin = -(obj.pose.rotation.transpose() * obj.pose.translation);
    t.trunk.radius = obj.shape;
    ++fit_index;
    trees.push_back(t);
  }
  for (auto& t : trees) {
    const SemanticObjectState* plane_state = nullptr;
    for (const auto& obj : merged.objects) {
      if (obj.kind == ObjectKind::plane && obj.front_id == t.id) {
        plane_state = &obj;
        break;
      }
    }
    if (!plane_state) {
      for (const auto& obj : merged.objects) {
        if (obj.kind == ObjectKind::plane) {
          plane_state = &obj;
          break;
        }
      }
    }
    if (!plane_state) {
      throw Error(ErrorCode::degenerate_configuration,
                  "measure: merged model has no plane objects");
    }
    t.ground.normal = plane_state->pose.rotation.row(2).transpose();
    t.ground.origin = -(plane_state->pose.rotation.transpose() *
                        plane_state->pose.translation);
    t.ground.slab_halfwidth = plane_state->shape;
  }
  return trees;
}

struct SweepRange {
  double lo = 0.2, hi = 5.0, step = 0.2;
};

SweepRange parse_sweep(const std::string& text) {
  SweepRange r;
  if (std::sscanf(text.c_str(), "%lf:%lf:%lf", &r.lo, &r.hi, &r.step) != 3 ||
      r.lo <= 0 || r.hi < r.lo || r.step <= 0) {
    throw Error(ErrorCode::input_error,
                "sweep range must be lo:hi:step with positive values");
  }
  return r;
}

void run_sweep(const MergedModel& merged, const PipelineConfig& cfg,
               const SweepRange& range, const std::string& out_csv) {
  const auto trees = trees_from_merged(merged);
  // Segment once, then refilter one triangulation per tree across alphas.
  const CanopySegmentation seg =
      segment_for_trees(merged.cloud, trees, cfg);

  std::FILE* f = std::fopen(out_csv.c_str(), "w");
  if (!f) throw Error(ErrorCode::input_error, "cannot write " + out_csv);
  std::fprintf(f, "alpha_m,tree_id,volume_m3\n");
  for (size_t ti = 0; ti < trees.size(); ++ti) {
    std::vector<Vector3d> pts;
    for (int pi : seg.members[ti]) pts.push_back(seg.canopy[pi]);
    if (static_cast<int>(pts.size()) > cfg.max_triangulation_points) {
      std::vector<Vector3d> capped;
      const double step =
          static_cast<double>(pts.size()) / cfg.max_triangulation_points;
      for (int i = 0; i < cfg.max_triangulation_points; ++i) {
        capped.push_back(pts[static_cast<size_t>(i * step)]);
      }
      pts = std::move(capped);
    }
    Delaunay3D tri(pts);
    for (double alpha = range.lo; alpha <= range.hi + 1e-12;
         alpha += range.step) {
      const AlphaShape3D shape =
          alpha_filter(tri, alpha, cfg.min_component_fraction);
      std::fprintf(f, "%.17g,%d,%.17g\n", alpha, trees[ti].id, shape.volume);
    }
    // Converged value: the full triangulation (alpha = infinity).
    const AlphaShape3D limit = alpha_filter(
        tri, std::numeric_limits<double>::infinity(), 0.0);
    std::fprintf(f, "inf,%d,%.17g\n", trees[ti].id, limit.volume);
  }
  std::fclose(f);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semantic two-side orchard mapping and tree morphology"};
  app.require_subcommand(1);

  GlobalArgs global;
  app.add_option("--config", global.config_path, "pipeline config file");
  app.add_option("--seed", global.seed, "override the config seed");
  app.add_option("--threads", global.threads, "worker thread cap");
  app.add_option("--log-level", global.log_level, "quiet|info|debug");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic scene");
  std::string spec_path, synth_out = "scene";
  synth->add_option("spec", spec_path, "scene spec JSON")->required();
  synth->add_option("--out", synth_out, "output directory");

  // reconstruct
  auto* rec = app.add_subcommand("reconstruct", "single-side backend");
  std::string rec_dir, rec_side = "front", rec_out;
  bool no_loop = false;
  rec->add_option("dir", rec_dir, "scene directory")->required();
  rec->add_option("--side", rec_side, "front|back")->required();
  rec->add_option("--out", rec_out, "output directory (default: dir)");
  rec->add_flag("--no-loop", no_loop, "skip loop linking");

  // merge
  auto* mrg = app.add_subcommand("merge", "align and fuse the two sides");
  std::string front_dir, back_dir, corr_path, merge_out = "merged";
  mrg->add_option("front_dir", front_dir, "front side directory")->required();
  mrg->add_option("back_dir", back_dir, "back side directory")->required();
  mrg->add_option("corr", corr_path, "correspondence file")->required();
  mrg->add_option("--out", merge_out, "output directory");

  // measure
  auto* msr = app.add_subcommand("measure", "per-tree morphology report");
  std::string measure_dir, measure_out, alpha_sweep;
  double alpha = -1.0;
  msr->add_option("dir", measure_dir, "merged model directory")->required();
  msr->add_option("--alpha", alpha, "alpha radius (m)");
  msr->add_option("--alpha-sweep", alpha_sweep, "lo:hi:step sweep to CSV");
  msr->add_option("--out", measure_out, "output directory (default: dir)");

  // sweep
  auto* swp = app.add_subcommand("sweep", "alpha sweep of canopy volumes");
  std::string sweep_dir, sweep_range = "0.2:5.0:0.2", sweep_out;
  swp->add_option("dir", sweep_dir, "merged model directory")->required();
  swp->add_option("--alpha-range", sweep_range, "lo:hi:step");
  swp->add_option("--out", sweep_out, "output directory (default: dir)");

  CLI11_PARSE(app, argc, argv);

  try {
    PipelineConfig cfg = make_config(global);

    if (synth->parsed()) {
      SceneSpec spec = SceneSpec::from_file(spec_path);
      if (global.seed >= 0) spec.seed = static_cast<std::uint64_t>(global.seed);
      log_info("generating scene into " + synth_out);
      const SceneData scene = generate_scene(spec);
      io::write_scene(synth_out, scene);
      return 0;
    }

    if (rec->parsed()) {
      if (rec_side != "front" && rec_side != "back") {
        throw Error(ErrorCode::input_error, "--side must be front or back");
      }
      if (rec_out.empty()) rec_out = rec_dir;
      fs::create_directories(rec_out);
      const std::string prefix = rec_side + "_";
      SideInput input = io::read_tracks(rec_dir + "/" + prefix + "tracks.json");
      PipelineConfig rcfg = cfg;
      if (no_loop) rcfg.use_loops = false;
      log_info("reconstructing " + rec_side + " side (" +
               std::to_string(input.frame_count) + " frames, " +
               std::to_string(input.observations.size()) + " observations)");
      const ReconstructionSide side = reconstruct_side(input, rcfg);
      std::vector<RigidTransform> traj;
      for (const auto& f : side.frames) traj.push_back(f.pose.inverse());
      io::write_trajectory(rec_out + "/" + prefix + "trajectory.txt", traj);
      std::vector<Vector3d> lms;
      for (const auto& l : side.landmarks) lms.push_back(l.position);
      io::write_ply(rec_out + "/" + prefix + "landmarks.ply", lms);
      io::write_reconstruction(
          rec_out + "/" + prefix + "reconstruction.json", side);
      return 0;
    }

    if (mrg->parsed()) {
      const auto corr = io::read_correspondences(corr_path);
      log_info("loading sides and fitting semantic objects");
      const SideModel front = load_side(front_dir, SideTag::front, cfg);
      const SideModel back = load_side(back_dir, SideTag::back, cfg);
      log_info("merging");
      const MergedModel merged = merge_sides(front, back, corr, cfg);
      io::write_merged(merge_out, merged);
      for (const auto& m : merged.metrics) {
        log_info("stage " + m.stage + ": mean offset " +
                 std::to_string(m.mean_offset) + " m, max " +
                 std::to_string(m.max_offset) + " m");
      }
      return 0;
    }

    if (msr->parsed()) {
      if (measure_out.empty()) measure_out = measure_dir;
      fs::create_directories(measure_out);
      const MergedModel merged = io::read_merged(measure_dir);
      if (merged.cloud.empty()) {
        throw Error(ErrorCode::input_error, "measure: empty merged cloud");
      }
      PipelineConfig mcfg = cfg;
      if (alpha > 0) mcfg.alpha_m = alpha;
      const auto records =
          measure_all(merged.cloud, trees_from_merged(merged), mcfg);
      io::write_report_json(measure_out + "/report.json", records);
      io::write_report_csv(measure_out + "/report.csv", records);
      if (!alpha_sweep.empty()) {
        run_sweep(merged, mcfg, parse_sweep(alpha_sweep),
                  measure_out + "/sweep.csv");
      }
      return 0;
    }

    if (swp->parsed()) {
      if (sweep_out.empty()) sweep_out = sweep_dir;
      fs::create_directories(sweep_out);
      const MergedModel merged = io::read_merged(sweep_dir);
      run_sweep(merged, cfg, parse_sweep(sweep_range),
                sweep_out + "/sweep.csv");
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error (" << error_code_name(e.code()) << "): " << e.what()
              << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
