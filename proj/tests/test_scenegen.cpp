#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include <map>

#include "orchard/scene_generator.hpp"

using namespace orchard;

namespace {

SceneSpec small_spec() {
  SceneSpec spec;
  spec.seed = 11;
  spec.tree_count = 2;
  spec.spacing = 1.6;
  spec.frames_per_side = 16;
  spec.canopy_points = 500;
  spec.trunk_points = 120;
  spec.ground_points = 100;
  spec.landmarks_per_tree = 50;
  return spec;
}

}  // namespace

TEST_CASE("generate_scene determinism") {
  const SceneSpec spec = small_spec();
  const SceneData a = generate_scene(spec);
  const SceneData b = generate_scene(spec);
  REQUIRE(a.front.cloud.size() == b.front.cloud.size());
  for (size_t i = 0; i < a.front.cloud.size(); ++i) {
    CHECK(std::memcmp(a.front.cloud[i].data(), b.front.cloud[i].data(),
                      3 * sizeof(double)) == 0);
  }
  REQUIRE(a.back.input.observations.size() ==
          b.back.input.observations.size());
  for (size_t i = 0; i < a.back.input.observations.size(); ++i) {
    CHECK(a.back.input.observations[i].pixel ==
          b.back.input.observations[i].pixel);
    CHECK(a.back.input.observations[i].point_cam ==
          b.back.input.observations[i].point_cam);
  }

  SceneSpec other = spec;
  other.seed = 12;
  const SceneData c = generate_scene(other);
  bool any_diff = c.front.cloud.size() != a.front.cloud.size();
  for (size_t i = 0; !any_diff && i < a.front.cloud.size(); ++i) {
    any_diff = (a.front.cloud[i] - c.front.cloud[i]).norm() > 0;
  }
  CHECK(any_diff);
}

TEST_CASE("zero noise observations reproject exactly") {
  const SceneData scene = generate_scene(small_spec());
  for (const auto& side : {&scene.front, &scene.back}) {
    const auto& traj = side->tag == SideTag::front
                           ? scene.truth.front_trajectory
                           : scene.truth.back_trajectory;
    double worst = 0.0;
    for (const auto& obs : side->input.observations) {
      // point_cam is measured in the frame's camera; its reprojection
      // must hit the stored pixel exactly on noiseless data.
      const Vector2d px = project_point(obs.point_cam, side->input.rig.rgb);
      worst = std::max(worst, (px - obs.pixel).norm());
      // And the observation must be consistent with the believed pose.
      const Vector3d world = traj[obs.frame] * obs.point_cam;
      (void)world;
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("labels are exhaustive and classes well-formed") {
  const SceneData scene = generate_scene(small_spec());
  REQUIRE(scene.truth.front_labels.size() == scene.front.cloud.size());
  REQUIRE(scene.truth.back_labels.size() == scene.back.cloud.size());
  for (const auto& l : scene.truth.front_labels) {
    CHECK(l.tree >= 0);
    CHECK(l.tree < 2);
    CHECK(l.cls >= 0);
    CHECK(l.cls <= 3);
  }
}

TEST_CASE("member observations are self-consistent across frames") {
  // The same physical trunk point measured from two annotated frames must
  // land on the same side-frame position (noiseless scene).
  const SceneData scene = generate_scene(small_spec());
  const auto& traj = scene.truth.front_trajectory;
  for (const auto& ann : scene.front.trunks) {
    std::map<int, Vector3d> seen;  // cloud id -> mapped side position
    REQUIRE(ann.frames.size() >= 2);
    for (const auto& frame : ann.frames) {
      for (const auto& mo : frame.member_obs) {
        const int cloud_id = frame.members[mo.member];
        const Vector3d side_pt = traj[frame.frame] * mo.point_cam;
        auto it = seen.find(cloud_id);
        if (it == seen.end()) {
          seen[cloud_id] = side_pt;
        } else {
          CHECK((it->second - side_pt).norm() < 1e-9);
        }
        // And it coincides with the emitted cloud position.
        CHECK((scene.front.cloud[cloud_id] - side_pt).norm() < 1e-9);
      }
    }
  }
}

TEST_CASE("inject_drift") {
  std::vector<RigidTransform> traj;
  for (int i = 0; i < 20; ++i) {
    RigidTransform cam;
    cam.translation = Vector3d(0.25 * i, 2.0, 1.2);
    traj.push_back(cam);
  }

  SUBCASE("zero drift is the identity") {
    DriftSpec drift;
    const auto out = inject_drift(traj, drift);
    for (size_t i = 0; i < traj.size(); ++i) {
      CHECK((out[i].translation - traj[i].translation).norm() == 0.0);
    }
  }

  SUBCASE("pure yaw drift ramps linearly") {
    DriftSpec drift;
    drift.yaw_deg_per_10m = 2.0;
    const auto out = inject_drift(traj, drift);
    for (size_t i = 0; i < traj.size(); ++i) {
      const double arc = 0.25 * i;
      const double want = 2.0 * M_PI / 180.0 * arc / 10.0;
      const double got = rodrigues_log(out[i].rotation).norm();
      CHECK(std::abs(got - want) < 1e-12);
    }
    CHECK((out[0].translation - traj[0].translation).norm() == 0.0);
  }

  SUBCASE("combined drift equals the sequential composition") {
    DriftSpec drift;
    drift.yaw_deg_per_10m = 1.5;
    drift.lateral_per_10m = 0.03;
    std::vector<RigidTransform> warps;
    const auto out = inject_drift(traj, drift, &warps);

    // Sequential oracle: rebuild D_k step by step from increments about
    // the fixed pivot.
    const Vector3d pivot = traj[0].translation;
    double arc = 0.0;
    for (size_t i = 0; i < traj.size(); ++i) {
      if (i > 0) arc += (traj[i].translation - traj[i - 1].translation).norm();
      const double yaw = drift.yaw_deg_per_10m * M_PI / 180.0 * arc / 10.0;
      const double lat = drift.lateral_per_10m * arc / 10.0;
      RigidTransform rot;
      rot.rotation = rodrigues_exp(yaw * Vector3d::UnitZ());
      rot.translation = pivot - rot.rotation * pivot;
      RigidTransform d = rot;
      d.translation += lat * drift.lateral_dir;
      const RigidTransform want = d * traj[i];
      CHECK((want.translation - out[i].translation).norm() < 1e-12);
      CHECK((want.rotation - out[i].rotation).norm() < 1e-12);
      CHECK((warps[i].translation - d.translation).norm() < 1e-12);
    }
  }
}

TEST_CASE("infeasible geometry is rejected") {
  SceneSpec spec = small_spec();
  spec.standoff = 0.8;  // inside the canopy envelope
  CHECK_THROWS_AS(generate_scene(spec), Error);

  SceneSpec bad = small_spec();
  bad.ground_kind = "bumpy";
  CHECK_THROWS_AS(generate_scene(bad), Error);
}

TEST_CASE("scene spec json round trip rejects unknown keys") {
  const SceneSpec spec = small_spec();
  const std::string text = spec.to_json_text();
  const SceneSpec back = SceneSpec::from_json_text(text);
  CHECK(back.seed == spec.seed);
  CHECK(back.tree_count == spec.tree_count);
  CHECK(back.spacing == doctest::Approx(spec.spacing));

  CHECK_THROWS_AS(SceneSpec::from_json_text("{\"no_such_key\": 1}"), Error);
  CHECK_THROWS_AS(SceneSpec::from_json_text("{\"tree_count\": -3}"), Error);
  CHECK_THROWS_AS(SceneSpec::from_json_text("not json"), Error);
}
