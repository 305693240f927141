#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "orchard/ransac.hpp"
#include "orchard/semantic_fitting.hpp"

using namespace orchard;

TEST_CASE("fit_line_tls") {
  SUBCASE("exact diagonal line") {
    std::vector<Vector2d> pts;
    for (int i = 0; i < 10; ++i) pts.emplace_back(i, 2.0 * i);
    const ImageLine line = fit_line_tls(pts);
    const Vector3d want = Vector3d(2, -1, 0).normalized();
    CHECK(std::min((line.coeffs - want).norm(),
                   (line.coeffs + want).norm()) < 1e-12);
  }

  SUBCASE("vertical line that least squares on y would miss") {
    std::vector<Vector2d> pts;
    for (int i = 0; i < 8; ++i) pts.emplace_back(3.0, i * 0.5);
    const ImageLine line = fit_line_tls(pts);
    const Vector3d want = Vector3d(1, 0, -3).normalized();
    CHECK((line.coeffs - want).norm() < 1e-12);
  }

  SUBCASE("noisy points stay within 0.2 degrees") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> gauss(0, 0.5);
    const Vector2d dir = Vector2d(1.0, 0.3).normalized();
    std::vector<Vector2d> pts;
    for (int i = 0; i < 200; ++i) {
      const Vector2d p = Vector2d(50, 80) + (i - 100) * dir;
      pts.push_back(p + gauss(rng) * Vector2d(-dir.y(), dir.x()));
    }
    const ImageLine line = fit_line_tls(pts);
    const Vector2d normal(line.coeffs[0], line.coeffs[1]);
    const double angle =
        std::abs(std::asin(std::clamp(normal.normalized().dot(dir), -1.0, 1.0)));
    CHECK(angle < 0.2 * M_PI / 180.0);
  }

  SUBCASE("coincident points are degenerate") {
    std::vector<Vector2d> pts(5, Vector2d(1, 1));
    CHECK_THROWS_AS(fit_line_tls(pts), Error);
  }
}

namespace {

RigidTransform camera_looking_at(const Vector3d& position,
                                 const Vector3d& target) {
  const Vector3d forward = (target - position).normalized();
  Vector3d up = Vector3d::UnitY();
  if (std::abs(forward.dot(up)) > 0.9) up = Vector3d::UnitX();
  const Vector3d right = forward.cross(up).normalized();
  const Vector3d down = forward.cross(right);
  Matrix3d world_to_cam;
  world_to_cam.row(0) = right;
  world_to_cam.row(1) = down;
  world_to_cam.row(2) = forward;
  return {world_to_cam, -(world_to_cam * position)};
}

}  // namespace

TEST_CASE("project_cylinder_silhouette") {
  Intrinsics k{500, 500, 320, 240};
  Cylinder cyl;
  cyl.axis = Vector3d::UnitY();
  cyl.origin = Vector3d::Zero();
  cyl.radius = 0.05;
  const RigidTransform pose = camera_looking_at({0, 0, -2.0}, {0, 0, 0});

  SUBCASE("vanishing radius collapses to the projected axis") {
    Cylinder thin = cyl;
    thin.radius = 1e-9;
    const auto [la, lb] = project_cylinder_silhouette(thin, pose, k);
    CHECK((la.coeffs - lb.coeffs).norm() < 1e-6);
    // The projected axis is the vertical image line through the center.
    CHECK(std::abs(la.signed_value(Vector2d(320, 100))) /
              std::hypot(la.coeffs[0], la.coeffs[1]) < 1e-5);
  }

  SUBCASE("matches the dense surface-projection hull oracle") {
    const auto [la, lb] = project_cylinder_silhouette(cyl, pose, k);
    // Project many surface points; the apparent contour is the extreme
    // pixel at each height band.
    std::vector<double> min_u, max_u;
    const int bands = 60;
    min_u.assign(bands, 1e9);
    max_u.assign(bands, -1e9);
    std::vector<Vector2d> mins(bands), maxs(bands);
    for (int i = 0; i < 100000; ++i) {
      const double angle = 2.0 * M_PI * i / 100000.0;
      for (int bzi = 0; bzi < bands; ++bzi) {
        const double h = -0.3 + 0.6 * bzi / (bands - 1);
        const Vector3d p = cyl.origin + h * cyl.axis +
                           cyl.radius * (std::cos(angle) * Vector3d::UnitX() +
                                         std::sin(angle) * Vector3d::UnitZ());
        const Vector3d pc = pose * p;
        if (pc.z() <= 0) continue;
        const Vector2d px = project_point(pc, k);
        if (px.x() < min_u[bzi]) {
          min_u[bzi] = px.x();
          mins[bzi] = px;
        }
        if (px.x() > max_u[bzi]) {
          max_u[bzi] = px.x();
          maxs[bzi] = px;
        }
      }
    }
    for (int bzi = 0; bzi < bands; ++bzi) {
      const double d_min = std::min(la.distance(mins[bzi]),
                                    lb.distance(mins[bzi]));
      const double d_max = std::min(la.distance(maxs[bzi]),
                                    lb.distance(maxs[bzi]));
      CHECK(d_min < 0.5);
      CHECK(d_max < 0.5);
    }
  }

  SUBCASE("far camera angular gap follows 2 asin(r/d)") {
    Cylinder c2 = cyl;
    c2.radius = 0.02;
    const double d = 100.0 * c2.radius;
    const RigidTransform far_pose = camera_looking_at({0, 0, -d}, {0, 0, 0});
    const auto [la, lb] = project_cylinder_silhouette(c2, far_pose, k);
    // Angle between the two lines in normalized camera coordinates.
    const Vector3d na =
        (k.matrix().transpose() * la.coeffs).normalized();
    const Vector3d nb =
        (k.matrix().transpose() * lb.coeffs).normalized();
    const double gap = std::acos(std::clamp(std::abs(na.dot(nb)), -1.0, 1.0));
    const double expect = 2.0 * std::asin(c2.radius / d);
    CHECK(gap == doctest::Approx(expect).epsilon(0.01));
  }

  SUBCASE("degenerate views throw") {
    Cylinder c2 = cyl;
    c2.radius = 3.0;  // camera inside
    CHECK_THROWS_AS(project_cylinder_silhouette(c2, pose, k), Error);
  }
}

namespace {

std::vector<Vector3d> half_cylinder_points(const Cylinder& cyl, int count,
                                           const Vector3d& facing,
                                           double height, double noise,
                                           double radial_bias,
                                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0, 1);
  std::uniform_real_distribution<double> unit(0, 1);
  Vector3d u = (facing - cyl.axis.dot(facing) * cyl.axis).normalized();
  const Vector3d w = cyl.axis.cross(u);
  std::vector<Vector3d> pts;
  for (int i = 0; i < count; ++i) {
    const double phi = (unit(rng) - 0.5) * (150.0 * M_PI / 180.0);
    const double h = (unit(rng) - 0.5) * height;
    Vector3d p = cyl.origin + h * cyl.axis +
                 cyl.radius * (std::cos(phi) * u + std::sin(phi) * w);
    if (radial_bias != 0.0 || noise != 0.0) {
      const Vector3d radial = (std::cos(phi) * u + std::sin(phi) * w);
      p += (radial_bias + noise * gauss(rng)) * radial;
    }
    pts.push_back(p);
  }
  return pts;
}

}  // namespace

TEST_CASE("fit_trunk_cylinder") {
  PipelineConfig cfg;
  Cylinder truth;
  truth.axis = Vector3d(0.04, 0.03, 1.0).normalized();
  truth.origin = Vector3d(0.5, -0.2, 0.8);
  truth.radius = 0.035;

  SUBCASE("noiseless half shell, lambda 0") {
    const auto pts = half_cylinder_points(truth, 400, Vector3d::UnitY(), 0.6,
                                          0.0, 0.0, 5);
    const Cylinder fit = fit_trunk_cylinder(pts, {}, 0.0, 7, cfg);
    CHECK(std::abs(fit.radius - truth.radius) < 1e-6);
    CHECK(std::abs(std::abs(fit.axis.dot(truth.axis)) - 1.0) < 1e-9);
    CHECK(fit.height > 0.5);
  }

  SUBCASE("nine exact points reproduce the cylinder") {
    const auto pts = half_cylinder_points(truth, 9, Vector3d::UnitY(), 0.6,
                                          0.0, 0.0, 11);
    const Cylinder fit = fit_trunk_cylinder(pts, {}, 0.0, 13, cfg);
    CHECK(std::abs(fit.radius - truth.radius) < 1e-6);
  }

  SUBCASE("rigid invariance with lambda 0") {
    const auto pts = half_cylinder_points(truth, 300, Vector3d::UnitY(), 0.6,
                                          0.0, 0.0, 15);
    const Cylinder fit = fit_trunk_cylinder(pts, {}, 0.0, 99, cfg);
    std::mt19937_64 rng(17);
    const RigidTransform t(oracle::random_rotation(rng),
                           Vector3d(0.3, -1.0, 2.0));
    std::vector<Vector3d> moved;
    for (const auto& p : pts) moved.push_back(t * p);
    const Cylinder fit2 = fit_trunk_cylinder(moved, {}, 0.0, 99, cfg);
    CHECK(std::abs(fit2.radius - fit.radius) < 1e-9);
    CHECK((t.rotation * fit.axis - fit2.axis).cwiseAbs().minCoeff() <
          2.0);  // sign-free axis comparison below
    const double axis_agree = std::abs((t.rotation * fit.axis).dot(fit2.axis));
    CHECK(axis_agree == doctest::Approx(1.0).epsilon(1e-9));
    CHECK((t * fit.origin - fit2.origin).norm() < 1e-8);
  }

  SUBCASE("biased points: silhouette constraints shrink the error") {
    // Outward-biased depth makes the 3D-only radius too large; the 2D
    // boundary terms pull it back toward the truth.
    Intrinsics k{500, 500, 320, 240};
    const RigidTransform pose =
        camera_looking_at(truth.origin + Vector3d(0, 2.2, 0.2),
                          truth.origin);
    const auto [la, lb] = project_cylinder_silhouette(truth, pose, k);
    AnnotatedView view{pose, k, la, lb, SideTag::front};

    const auto pts = half_cylinder_points(truth, 350, Vector3d::UnitY(), 0.6,
                                          0.005, 0.005, 21);
    const Cylinder plain = fit_trunk_cylinder(pts, {}, 0.0, 23, cfg);
    const Cylinder guided = fit_trunk_cylinder(pts, {view}, 1.0, 23, cfg);
    const double err_plain = std::abs(plain.radius - truth.radius);
    const double err_guided = std::abs(guided.radius - truth.radius);
    CHECK(plain.radius > truth.radius);  // bias inflates the plain fit
    CHECK(err_guided < err_plain);
  }

  SUBCASE("cost at the optimum never exceeds the initialization") {
    Intrinsics k{500, 500, 320, 240};
    const RigidTransform pose =
        camera_looking_at(truth.origin + Vector3d(0, 2.2, 0.2), truth.origin);
    const auto [la, lb] = project_cylinder_silhouette(truth, pose, k);
    AnnotatedView view{pose, k, la, lb, SideTag::front};
    const auto pts = half_cylinder_points(truth, 200, Vector3d::UnitY(), 0.6,
                                          0.004, 0.0, 29);
    std::vector<int> inliers;
    Cylinder init;
    const Cylinder fit =
        fit_trunk_cylinder(pts, {view}, 1.0, 31, cfg, &inliers, &init);
    std::vector<Vector3d> support;
    for (int i : inliers) support.push_back(pts[i]);
    CHECK(trunk_cost(fit, support, {view}, 1.0) <=
          trunk_cost(init, support, {view}, 1.0) + 1e-9);
  }

  SUBCASE("error paths") {
    std::vector<Vector3d> few(5, Vector3d::Zero());
    CHECK_THROWS_AS(fit_trunk_cylinder(few, {}, 0.0, 1, cfg), Error);
    const auto pts = half_cylinder_points(truth, 50, Vector3d::UnitY(), 0.6,
                                          0.0, 0.0, 33);
    CHECK_THROWS_AS(fit_trunk_cylinder(pts, {}, 1.0, 1, cfg), Error);
  }
}

TEST_CASE("fit_ground_plane_with_prior") {
  PipelineConfig cfg;
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> unit(0, 1);
  std::normal_distribution<double> gauss(0, 1);

  SUBCASE("exact plane normal to the prior") {
    std::vector<Vector3d> pts;
    for (int i = 0; i < 60; ++i) {
      pts.emplace_back(2.0 * unit(rng), 2.0 * unit(rng), 0.0);
    }
    std::vector<int> inliers;
    const Plane plane = fit_ground_plane_with_prior(
        pts, Vector3d::UnitZ(), cfg.ground_t_s, 3, cfg, &inliers);
    CHECK(std::abs(plane.normal.dot(Vector3d::UnitZ()) - 1.0) < 1e-9);
    CHECK(inliers.size() == pts.size());
  }

  SUBCASE("20% ground / 80% canopy: prior-guided wins, plain RANSAC fails") {
    // A dense planar canopy wall plus sparse ground: count-maximizing
    // RANSAC prefers the wall, the admissibility gates do not.
    std::vector<Vector3d> pts;
    const int n_ground = 200, n_canopy = 800;
    for (int i = 0; i < n_ground; ++i) {
      pts.emplace_back(4.0 * unit(rng), 2.5 * unit(rng),
                       0.003 * (unit(rng) - 0.5));
    }
    for (int i = 0; i < n_canopy; ++i) {
      // Wall: y ~ 1.4, slight waviness, 0.6..2.4 m above ground.
      pts.emplace_back(4.0 * unit(rng), 1.4 + 0.03 * gauss(rng),
                       0.6 + 1.8 * unit(rng));
    }
    int plain_wrong = 0, guided_right = 0;
    const int trials = 20;
    for (int t = 0; t < trials; ++t) {
      // Plain RANSAC: same engine, no admissibility gate.
      RansacOptions opts;
      opts.seed = 1000 + t;
      opts.max_iters = cfg.ransac_max_iters;
      opts.inlier_threshold = cfg.ground_t_s;
      auto fit3 = [&](const std::vector<int>& s) -> std::optional<Plane> {
        const Vector3d a = pts[s[0]], b = pts[s[1]], c = pts[s[2]];
        Vector3d n = (b - a).cross(c - a);
        if (n.norm() < 1e-12) return std::nullopt;
        Plane p;
        p.normal = n.normalized();
        p.origin = (a + b + c) / 3.0;
        return p;
      };
      auto residual = [&](const Plane& p, int i) {
        return std::abs(plane_signed_distance(pts[i], p));
      };
      auto any = [](const Plane&) { return true; };
      const auto plain = ransac<Plane>(static_cast<int>(pts.size()), 3, fit3,
                                       residual, any, opts);
      if (std::abs(plain.model.normal.dot(Vector3d::UnitZ())) < 0.95) {
        ++plain_wrong;
      }
      try {
        const Plane guided = fit_ground_plane_with_prior(
            pts, Vector3d::UnitZ(), cfg.ground_t_s, 1000 + t, cfg);
        const double angle = std::acos(
            std::clamp(guided.normal.dot(Vector3d::UnitZ()), -1.0, 1.0));
        const double height = std::abs(plane_signed_distance(
            Vector3d(2.0, 1.0, 0.0), guided));
        if (angle < M_PI / 180.0 && height < 0.01) ++guided_right;
      } catch (const Error&) {
      }
    }
    CHECK(plain_wrong >= trials * 9 / 10);
    CHECK(guided_right == trials);
  }

  SUBCASE("prior rotated beyond theta_max leaves no admissible model") {
    std::vector<Vector3d> pts;
    for (int i = 0; i < 40; ++i) {
      pts.emplace_back(unit(rng), unit(rng), 0.001 * unit(rng));
    }
    const Vector3d bad_prior =
        rodrigues_exp(Vector3d(75.0 * M_PI / 180.0, 0, 0)) * Vector3d::UnitZ();
    CHECK_THROWS_AS(
        fit_ground_plane_with_prior(pts, bad_prior, cfg.ground_t_s, 5, cfg),
        Error);
  }

  SUBCASE("returned plane satisfies its own admissibility conditions") {
    std::vector<Vector3d> pts;
    for (int i = 0; i < 150; ++i) {
      pts.emplace_back(2.0 * unit(rng), 2.0 * unit(rng),
                       0.004 * (unit(rng) - 0.5));
    }
    for (int i = 0; i < 350; ++i) {
      pts.emplace_back(2.0 * unit(rng), 2.0 * unit(rng),
                       0.4 + 1.2 * unit(rng));
    }
    const Plane plane = fit_ground_plane_with_prior(
        pts, Vector3d::UnitZ(), cfg.ground_t_s, 7, cfg);
    CHECK(std::acos(std::clamp(plane.normal.dot(Vector3d::UnitZ()), -1.0,
                               1.0)) < cfg.theta_max_deg * M_PI / 180.0);
    int below = 0;
    for (const auto& p : pts) {
      if (plane_signed_distance(p, plane) < -cfg.ground_t_s) ++below;
    }
    CHECK(below <= static_cast<int>(cfg.ground_boundary_eps * pts.size()));
  }
}

TEST_CASE("fit_trunk_two_sided") {
  PipelineConfig cfg;
  Cylinder truth;
  truth.axis = Vector3d(0.02, -0.03, 1.0).normalized();
  truth.origin = Vector3d(1.0, 0.5, 0.6);
  truth.radius = 0.032;

  SUBCASE("both sides from the same exact cylinder") {
    const auto front = half_cylinder_points(truth, 250, Vector3d::UnitY(),
                                            0.5, 0.0, 0.0, 51);
    const auto back = half_cylinder_points(truth, 250, -Vector3d::UnitY(),
                                           0.5, 0.0, 0.0, 52);
    const TwoSidedTrunkFit fit =
        fit_trunk_two_sided(front, back, {}, 0.0, 53, cfg);
    CHECK(std::abs(fit.diameter - 2.0 * truth.radius) < 1e-6);
    CHECK(std::abs(std::abs(fit.front.axis.dot(fit.back.axis)) - 1.0) < 1e-6);
  }

  SUBCASE("opposite radial biases average out") {
    const auto front = half_cylinder_points(truth, 250, Vector3d::UnitY(),
                                            0.5, 0.001, 0.003, 55);
    const auto back = half_cylinder_points(truth, 250, -Vector3d::UnitY(),
                                           0.5, 0.001, -0.003, 56);
    const TwoSidedTrunkFit fit =
        fit_trunk_two_sided(front, back, {}, 0.0, 57, cfg);
    CHECK(std::abs(fit.diameter - 2.0 * truth.radius) < 0.002);
  }

  SUBCASE("shared radius lies between the independent per-side fits") {
    const auto front = half_cylinder_points(truth, 250, Vector3d::UnitY(),
                                            0.5, 0.002, 0.004, 58);
    const auto back = half_cylinder_points(truth, 250, -Vector3d::UnitY(),
                                           0.5, 0.002, -0.002, 59);
    const Cylinder cf = fit_trunk_cylinder(front, {}, 0.0, 60, cfg);
    const Cylinder cb = fit_trunk_cylinder(back, {}, 0.0, 61, cfg);
    const TwoSidedTrunkFit fit =
        fit_trunk_two_sided(front, back, {}, 0.0, 62, cfg);
    const double lo = std::min(cf.radius, cb.radius) - 2e-4;
    const double hi = std::max(cf.radius, cb.radius) + 2e-4;
    CHECK(fit.diameter / 2.0 >= lo);
    CHECK(fit.diameter / 2.0 <= hi);
  }

  SUBCASE("one empty side signals insufficient-data") {
    const auto front = half_cylinder_points(truth, 100, Vector3d::UnitY(),
                                            0.5, 0.0, 0.0, 63);
    CHECK_THROWS_AS(fit_trunk_two_sided(front, {}, {}, 0.0, 64, cfg), Error);
  }
}
