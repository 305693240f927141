#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "orchard/least_squares.hpp"
#include "orchard/ransac.hpp"
#include "orchard/residuals.hpp"

using namespace orchard;

TEST_CASE("huber") {
  CHECK(huber(0.0, 1.0) == 0.0);
  CHECK(huber(1.0, 1.0) == doctest::Approx(1.0));  // delta^2 at the boundary
  CHECK(huber(3.0, 1.0) == doctest::Approx(5.0));
  CHECK(huber(-3.0, 1.0) == doctest::Approx(5.0));
  // C1 at |e| = delta: slopes match across the boundary.
  const double h = 1e-7;
  const double left = (huber(1.0, 1.0) - huber(1.0 - h, 1.0)) / h;
  const double right = (huber(1.0 + h, 1.0) - huber(1.0, 1.0)) / h;
  CHECK(left == doctest::Approx(right).epsilon(1e-5));
}

namespace {

ResidualBlock scalar_residual(int id, double target) {
  ResidualBlock b;
  b.params = {id};
  b.dim = 1;
  b.eval = [target](const std::vector<const double*>& p, double* r,
                    const std::vector<double*>& jac) {
    r[0] = p[0][0] - target;
    if (jac[0]) jac[0][0] = 1.0;
  };
  return b;
}

}  // namespace

TEST_CASE("lm_solve on already-zero residuals") {
  Problem problem;
  const int x = problem.add_block({3.0});
  problem.add_residual(scalar_residual(x, 3.0));
  const SolveReport report = lm_solve(problem);
  CHECK(report.iterations == 0);
  CHECK(report.reason == Termination::converged);
  CHECK(problem.values(x)[0] == 3.0);
}

TEST_CASE("lm_solve 1-D linear problem") {
  Problem problem;
  const int x = problem.add_block({0.0});
  problem.add_residual(scalar_residual(x, 3.0));
  const SolveReport report = lm_solve(problem);
  CHECK(std::abs(problem.values(x)[0] - 3.0) < 1e-10);
  CHECK(report.final_cost <= report.initial_cost);
  CHECK(report.monotone);
}

TEST_CASE("lm_solve error paths") {
  SUBCASE("unconstrained parameter") {
    Problem problem;
    const int x = problem.add_block({0.0});
    problem.add_block({1.0});  // never referenced
    problem.add_residual(scalar_residual(x, 1.0));
    CHECK_THROWS_AS(lm_solve(problem), Error);
  }
  SUBCASE("non-finite residual at the initial point") {
    Problem problem;
    const int x = problem.add_block({0.0});
    ResidualBlock b;
    b.params = {x};
    b.dim = 1;
    b.eval = [](const std::vector<const double*>&, double* r,
                const std::vector<double*>&) {
      r[0] = std::numeric_limits<double>::quiet_NaN();
    };
    problem.add_residual(std::move(b));
    CHECK_THROWS_AS(lm_solve(problem), Error);
  }
}

namespace {

struct TinyBa {
  std::vector<RigidTransform> poses;
  std::vector<Vector3d> points;
  Intrinsics k{500, 500, 320, 240};
  struct Obs {
    int cam, pt;
    Vector2d pixel;
  };
  std::vector<Obs> obs;
};

TinyBa make_tiny_ba(double pixel_sigma, std::uint64_t seed) {
  TinyBa ba;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0, 1);
  for (int c = 0; c < 3; ++c) {
    RigidTransform pose;
    pose.translation = Vector3d(-0.4 * c, 0.05 * c, 0.0);
    pose.rotation = rodrigues_exp(Vector3d(0, 0.05 * c, 0));
    ba.poses.push_back(pose);
  }
  for (int i = 0; i < 20; ++i) {
    ba.points.emplace_back(gauss(rng), gauss(rng), 4.0 + gauss(rng));
  }
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 20; ++i) {
      const Vector3d x_cam = ba.poses[c] * ba.points[i];
      Vector2d px = project_point(x_cam, ba.k);
      px += pixel_sigma * Vector2d(gauss(rng), gauss(rng));
      ba.obs.push_back({c, i, px});
    }
  }
  return ba;
}

}  // namespace

TEST_CASE("lm_solve small bundle adjustment reaches the noise floor") {
  const TinyBa ba = make_tiny_ba(1.0, 42);

  auto build = [&](bool at_truth) {
    auto problem = std::make_unique<Problem>();
    std::vector<int> pose_ids, point_ids;
    std::mt19937_64 rng(7);
    std::normal_distribution<double> gauss(0, 1);
    for (size_t c = 0; c < ba.poses.size(); ++c) {
      RigidTransform p = ba.poses[c];
      if (!at_truth && c > 0) {
        p.rotation = rodrigues_exp(0.01 * Vector3d(gauss(rng), gauss(rng),
                                                   gauss(rng))) *
                     p.rotation;
        p.translation += 0.02 * Vector3d(gauss(rng), gauss(rng), gauss(rng));
      }
      pose_ids.push_back(problem->add_pose_block(p));
    }
    problem->set_constant(pose_ids[0]);
    for (const auto& pt : ba.points) {
      Vector3d q = pt;
      if (!at_truth) q += 0.05 * Vector3d(gauss(rng), gauss(rng), gauss(rng));
      point_ids.push_back(
          problem->add_block({q.x(), q.y(), q.z()}, nullptr, true));
    }
    for (const auto& o : ba.obs) {
      problem->add_residual(reprojection_residual(
          pose_ids[o.cam], point_ids[o.pt], ba.k, o.pixel,
          RobustLoss::Huber(1.0)));
    }
    return problem;
  };

  auto truth_problem = build(true);
  const double cost_at_truth = truth_problem->cost();

  auto problem = build(false);
  const SolveReport report = lm_solve(*problem);
  CHECK(report.monotone);
  CHECK(report.final_cost <= 1.05 * cost_at_truth);
}

TEST_CASE("jacobian_check") {
  SUBCASE("linear residual is exact") {
    ResidualBlock b = scalar_residual(0, 1.0);
    EuclideanManifold m(1);
    CHECK(jacobian_check(b, {{0.3}}, {&m}) < 1e-9);
  }

  SUBCASE("reprojection residual at random poses") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> gauss(0, 1);
    Intrinsics k{450, 460, 315, 245};
    PoseManifold pm;
    EuclideanManifold em(3);
    for (int i = 0; i < 20; ++i) {
      RigidTransform pose(oracle::random_rotation(rng),
                          0.1 * Vector3d(gauss(rng), gauss(rng), gauss(rng)));
      Vector3d x = pose.inverse() * Vector3d(0.3 * gauss(rng), 0.3 * gauss(rng),
                                             3.0 + 0.3 * gauss(rng));
      std::vector<std::vector<double>> params(2);
      params[0].resize(12);
      pose_to_array(pose, params[0].data());
      params[1] = {x.x(), x.y(), x.z()};
      ResidualBlock b = reprojection_residual(0, 1, k, Vector2d(300, 250),
                                              RobustLoss::None());
      CHECK(jacobian_check(b, params, {&pm, &em}) < 1e-5);
    }
  }

  SUBCASE("semantic cylinder residual off-axis") {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> gauss(0, 1);
    ObjectPoseManifold om(ObjectPoseManifold::Kind::cylinder);
    PoseManifold pm;
    for (int i = 0; i < 20; ++i) {
      RigidTransform object(oracle::random_rotation(rng),
                            Vector3d(gauss(rng), gauss(rng), gauss(rng)));
      RigidTransform camera(oracle::random_rotation(rng),
                            Vector3d(gauss(rng), gauss(rng), gauss(rng)));
      const Vector3d x_meas(gauss(rng), gauss(rng), 2.0 + 0.2 * gauss(rng));
      std::vector<std::vector<double>> params(2);
      params[0].resize(12);
      params[1].resize(12);
      pose_to_array(object, params[0].data());
      pose_to_array(camera, params[1].data());
      ResidualBlock b = semantic_point_residual(
          0, 1, ObjectPoseManifold::Kind::cylinder, 0.05, x_meas, 1.0,
          RobustLoss::None());
      CHECK(jacobian_check(b, params, {&om, &pm}) < 1e-5);
    }
  }
}

namespace {

struct PlaneModel {
  Vector3d normal;
  double d;
};

RansacResult<PlaneModel> run_plane_ransac(const std::vector<Vector3d>& pts,
                                          const RansacOptions& opts) {
  auto fit = [&](const std::vector<int>& sample) -> std::optional<PlaneModel> {
    const Vector3d a = pts[sample[0]], b = pts[sample[1]], c = pts[sample[2]];
    const Vector3d n = (b - a).cross(c - a);
    if (n.norm() < 1e-12) return std::nullopt;
    PlaneModel m{n.normalized(), 0};
    m.d = -m.normal.dot(a);
    return m;
  };
  auto residual = [&](const PlaneModel& m, int i) {
    return std::abs(m.normal.dot(pts[i]) + m.d);
  };
  auto accept = [](const PlaneModel&) { return true; };
  return ransac<PlaneModel>(static_cast<int>(pts.size()), 3, fit, residual,
                            accept, opts);
}

}  // namespace

TEST_CASE("ransac plane fitting") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> unit(-1, 1);

  SUBCASE("exact plane, all inliers") {
    std::vector<Vector3d> pts;
    for (int i = 0; i < 50; ++i)
      pts.emplace_back(unit(rng), unit(rng), 2.0);
    RansacOptions opts;
    opts.inlier_threshold = 1e-6;
    const auto res = run_plane_ransac(pts, opts);
    CHECK(res.inlier_count == 50);
    CHECK(std::abs(std::abs(res.model.normal.z()) - 1.0) < 1e-9);
  }

  SUBCASE("70% inliers, 30% outliers recovers the plane") {
    std::vector<Vector3d> pts;
    for (int i = 0; i < 140; ++i)
      pts.emplace_back(unit(rng), unit(rng), 0.5 * unit(rng) * 0.001);
    for (int i = 0; i < 60; ++i)
      pts.emplace_back(unit(rng), unit(rng), 1.0 + unit(rng));
    RansacOptions opts;
    opts.inlier_threshold = 0.01;
    const auto res = run_plane_ransac(pts, opts);
    const double angle = std::acos(std::min(
        1.0, std::abs(res.model.normal.dot(Vector3d::UnitZ()))));
    CHECK(angle < 0.5 * M_PI / 180.0);
    CHECK(res.inlier_count >= 140);
  }

  SUBCASE("determinism: same seed gives bit-identical output") {
    std::vector<Vector3d> pts;
    for (int i = 0; i < 100; ++i)
      pts.emplace_back(unit(rng), unit(rng), 0.02 * unit(rng));
    RansacOptions opts;
    opts.seed = 77;
    const auto a = run_plane_ransac(pts, opts);
    const auto b = run_plane_ransac(pts, opts);
    CHECK(std::memcmp(a.model.normal.data(), b.model.normal.data(),
                      3 * sizeof(double)) == 0);
    CHECK(a.model.d == b.model.d);
    CHECK(a.inlier_mask == b.inlier_mask);
  }

  SUBCASE("winning inlier count is monotone in the threshold") {
    std::vector<Vector3d> pts;
    for (int i = 0; i < 100; ++i)
      pts.emplace_back(unit(rng), unit(rng), 0.05 * unit(rng));
    int prev = 0;
    for (double thr : {0.002, 0.005, 0.01, 0.02, 0.05, 0.1}) {
      RansacOptions opts;
      opts.seed = 5;
      opts.inlier_threshold = thr;
      const auto res = run_plane_ransac(pts, opts);
      CHECK(res.inlier_count >= prev);
      prev = res.inlier_count;
    }
  }

  SUBCASE("no admissible hypothesis throws no-model-found") {
    std::vector<Vector3d> pts;
    for (int i = 0; i < 10; ++i) pts.emplace_back(unit(rng), unit(rng), 0.0);
    RansacOptions opts;
    opts.max_iters = 20;
    auto fit = [&](const std::vector<int>& sample) -> std::optional<PlaneModel> {
      (void)sample;
      return std::nullopt;  // every sample declared degenerate
    };
    auto residual = [](const PlaneModel&, int) { return 0.0; };
    auto accept = [](const PlaneModel&) { return true; };
    CHECK_THROWS_AS(
        (ransac<PlaneModel>(10, 3, fit, residual, accept, opts)), Error);
  }
}
