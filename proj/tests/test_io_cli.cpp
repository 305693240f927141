#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include "orchard/config.hpp"
#include "orchard/io.hpp"
#include "orchard/scene_generator.hpp"

using namespace orchard;
namespace fs = std::filesystem;

#ifndef ORCHARD_CLI_PATH
#define ORCHARD_CLI_PATH "orchard"
#endif

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("orchard_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter_++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
  static int counter_;
};
int TempDir::counter_ = 0;

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ORCHARD_CLI_PATH) + " " + args +
                          " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp_file(const std::string& path) { return io::slurp(path); }

SceneSpec tiny_spec() {
  SceneSpec spec;
  spec.seed = 5;
  spec.tree_count = 2;
  spec.spacing = 1.6;
  spec.frames_per_side = 14;
  spec.canopy_points = 500;
  spec.trunk_points = 150;
  spec.ground_points = 120;
  spec.landmarks_per_tree = 60;
  return spec;
}

}  // namespace

TEST_CASE("pipeline config") {
  SUBCASE("defaults and json round trip") {
    PipelineConfig cfg;
    cfg.lambda = 2.5;
    cfg.min_loop_inliers = 42;
    const PipelineConfig back =
        PipelineConfig::from_json_text(cfg.to_json_text());
    CHECK(back.lambda == doctest::Approx(2.5));
    CHECK(back.min_loop_inliers == 42);
    CHECK(back.huber_delta_px == doctest::Approx(1.0));
  }

  SUBCASE("key=value text") {
    const PipelineConfig cfg = PipelineConfig::from_key_value_text(
        "lambda = 3.0\n# comment\nalpha_m=1.2\n");
    CHECK(cfg.lambda == doctest::Approx(3.0));
    CHECK(cfg.alpha_m == doctest::Approx(1.2));
  }

  SUBCASE("unknown keys and bad ranges are rejected") {
    CHECK_THROWS_AS(PipelineConfig::from_json_text("{\"bogus\": 1}"), Error);
    CHECK_THROWS_AS(PipelineConfig::from_key_value_text("lambda = -2\n"),
                    Error);
    CHECK_THROWS_AS(PipelineConfig::from_key_value_text("alpha_m = 0\n"),
                    Error);
    CHECK_THROWS_AS(PipelineConfig::from_key_value_text("seed garbage\n"),
                    Error);
  }
}

TEST_CASE("ply and trajectory round trips") {
  TempDir dir;
  std::vector<Vector3d> pts = {{0.25, -1.5, 3.0},
                               {1e-9, 2e8, -0.125},
                               {M_PI, -M_E, 0.5}};
  io::write_ply(dir.str() + "/points.ply", pts);
  const auto back = io::read_ply(dir.str() + "/points.ply");
  REQUIRE(back.size() == pts.size());
  for (size_t i = 0; i < pts.size(); ++i) {
    CHECK(std::memcmp(pts[i].data(), back[i].data(), 3 * sizeof(double)) ==
          0);
  }

  std::vector<RigidTransform> traj;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss(0, 1);
  for (int i = 0; i < 5; ++i) {
    RigidTransform t;
    t.rotation = rodrigues_exp(
        Vector3d(gauss(rng), gauss(rng), gauss(rng)).normalized() * 0.8);
    t.translation = Vector3d(gauss(rng), gauss(rng), gauss(rng));
    traj.push_back(t);
  }
  io::write_trajectory(dir.str() + "/traj.txt", traj);
  const auto traj_back = io::read_trajectory(dir.str() + "/traj.txt");
  REQUIRE(traj_back.size() == traj.size());
  for (size_t i = 0; i < traj.size(); ++i) {
    CHECK((traj_back[i].rotation - traj[i].rotation).norm() < 1e-12);
    CHECK((traj_back[i].translation - traj[i].translation).norm() < 1e-15);
  }

  CHECK_THROWS_AS(io::read_ply(dir.str() + "/missing.ply"), Error);
}

TEST_CASE("scene files round trip through the io layer") {
  TempDir dir;
  const SceneData scene = generate_scene(tiny_spec());
  io::write_scene(dir.str(), scene);

  // Exactly the eight pipeline files.
  int files = 0;
  for (const auto& entry : fs::directory_iterator(dir.path)) {
    (void)entry;
    ++files;
  }
  CHECK(files == 8);

  const SideInput tracks = io::read_tracks(dir.str() + "/front_tracks.json");
  CHECK(tracks.frame_count == scene.front.input.frame_count);
  CHECK(tracks.observations.size() == scene.front.input.observations.size());
  CHECK(tracks.rig.rgb.fx == scene.front.input.rig.rgb.fx);
  for (size_t i = 0; i < 50 && i < tracks.observations.size(); ++i) {
    CHECK(tracks.observations[i].pixel ==
          scene.front.input.observations[i].pixel);
    CHECK(tracks.observations[i].point_cam ==
          scene.front.input.observations[i].point_cam);
  }

  SideTag tag;
  std::vector<TrunkAnnotation> trunks;
  std::vector<GroundAnnotation> grounds;
  io::read_annotations(dir.str() + "/back_annotations.json", &tag, &trunks,
                       &grounds);
  CHECK(tag == SideTag::back);
  REQUIRE(trunks.size() == scene.back.trunks.size());
  CHECK(trunks[0].frames.size() == scene.back.trunks[0].frames.size());
  CHECK(trunks[0].frames[0].members == scene.back.trunks[0].frames[0].members);

  const auto corr = io::read_correspondences(dir.str() +
                                             "/correspondences.json");
  CHECK(corr.size() == scene.correspondences.size());

  SceneSpec echoed;
  const GroundTruth truth =
      io::read_ground_truth(dir.str() + "/ground_truth.json", &echoed);
  CHECK(echoed.tree_count == 2);
  CHECK(truth.trees.size() == 2);
  CHECK((truth.f_from_b.translation - scene.truth.f_from_b.translation)
            .norm() < 1e-15);
  CHECK(truth.front_labels.size() == scene.front.cloud.size());
}

TEST_CASE("cli end to end on a tiny scene") {
  TempDir dir;
  const std::string scene_dir = dir.str() + "/scene";
  {
    std::ofstream spec(dir.str() + "/spec.json");
    spec << tiny_spec().to_json_text();
  }

  SUBCASE("synth writes the scene directory") {
    CHECK(run_cli("synth " + dir.str() + "/spec.json --out " + scene_dir) ==
          0);
    CHECK(fs::exists(scene_dir + "/front_tracks.json"));
    CHECK(fs::exists(scene_dir + "/ground_truth.json"));

    SUBCASE("seed override changes the bytes") {
      const std::string other = dir.str() + "/scene2";
      CHECK(run_cli("--seed 77 synth " + dir.str() + "/spec.json --out " +
                    other) == 0);
      CHECK(slurp_file(scene_dir + "/front_cloud.ply") !=
            slurp_file(other + "/front_cloud.ply"));
    }

    SUBCASE("full pipeline: reconstruct, merge, measure") {
      CHECK(run_cli("reconstruct " + scene_dir + " --side front") == 0);
      CHECK(run_cli("reconstruct " + scene_dir + " --side back") == 0);
      CHECK(fs::exists(scene_dir + "/front_trajectory.txt"));
      const std::string merged = dir.str() + "/merged";
      CHECK(run_cli("merge " + scene_dir + " " + scene_dir + " " + scene_dir +
                    "/correspondences.json --out " + merged) == 0);
      CHECK(fs::exists(merged + "/transform.txt"));
      CHECK(fs::exists(merged + "/metrics.csv"));
      CHECK(run_cli("measure " + merged) == 0);
      CHECK(fs::exists(merged + "/report.json"));
      CHECK(fs::exists(merged + "/report.csv"));
      const std::string report = slurp_file(merged + "/report.csv");
      CHECK(report.find("tree_id,diameter_m,height_m,vol_alpha_m3,"
                        "vol_hull_m3,vol_cyl_m3,alpha_m") == 0);
      CHECK(run_cli("sweep " + merged + " --alpha-range 0.5:1.5:0.5") == 0);
      CHECK(fs::exists(merged + "/sweep.csv"));

      // Round trip of the merged model.
      const MergedModel model = io::read_merged(merged);
      CHECK(!model.objects.empty());
      CHECK(model.cloud.size() > 1000);
    }
  }

  SUBCASE("malformed spec exits 2 and names the key") {
    std::ofstream bad(dir.str() + "/bad.json");
    bad << "{\"tree_countz\": 3}\n";
    bad.close();
    const std::string cmd = std::string(ORCHARD_CLI_PATH) + " synth " +
                            dir.str() + "/bad.json --out " + scene_dir +
                            " 2> " + dir.str() + "/err.txt";
    const int status = WEXITSTATUS(std::system(cmd.c_str()));
    CHECK(status == 2);
    CHECK(slurp_file(dir.str() + "/err.txt").find("tree_countz") !=
          std::string::npos);
  }

  SUBCASE("missing tracks file exits 2 with the path in the message") {
    fs::create_directories(scene_dir);
    const std::string cmd = std::string(ORCHARD_CLI_PATH) + " reconstruct " +
                            scene_dir + " --side front 2> " + dir.str() +
                            "/err.txt";
    const int status = WEXITSTATUS(std::system(cmd.c_str()));
    CHECK(status == 2);
    CHECK(slurp_file(dir.str() + "/err.txt").find("front_tracks.json") !=
          std::string::npos);
  }

  SUBCASE("merge without plane correspondences exits 3") {
    CHECK(run_cli("synth " + dir.str() + "/spec.json --out " + scene_dir) ==
          0);
    CHECK(run_cli("reconstruct " + scene_dir + " --side front") == 0);
    CHECK(run_cli("reconstruct " + scene_dir + " --side back") == 0);
    // Correspondences stripped of every plane entry.
    auto corr = io::read_correspondences(scene_dir + "/correspondences.json");
    corr.erase(std::remove_if(corr.begin(), corr.end(),
                              [](const ObjectCorrespondence& c) {
                                return c.kind == ObjectKind::plane;
                              }),
               corr.end());
    io::write_correspondences(scene_dir + "/corr_noplane.json", corr);
    CHECK(run_cli("merge " + scene_dir + " " + scene_dir + " " + scene_dir +
                  "/corr_noplane.json --out " + dir.str() + "/m2") == 3);
  }

  SUBCASE("measure on an empty directory exits 2") {
    fs::create_directories(dir.str() + "/empty");
    CHECK(run_cli("measure " + dir.str() + "/empty") == 2);
  }
}

TEST_CASE("cli determinism: identical bytes across runs") {
  TempDir dir;
  {
    std::ofstream spec(dir.str() + "/spec.json");
    spec << tiny_spec().to_json_text();
  }
  const std::string a = dir.str() + "/a", b = dir.str() + "/b";
  REQUIRE(run_cli("synth " + dir.str() + "/spec.json --out " + a) == 0);
  REQUIRE(run_cli("synth " + dir.str() + "/spec.json --out " + b) == 0);
  for (const char* name :
       {"front_cloud.ply", "back_tracks.json", "front_annotations.json",
        "correspondences.json", "ground_truth.json"}) {
    CHECK(slurp_file(a + "/" + name) == slurp_file(b + "/" + name));
  }
}
