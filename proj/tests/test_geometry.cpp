#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "orchard/geometry.hpp"

using namespace orchard;

TEST_CASE("rodrigues_exp basics") {
  CHECK((rodrigues_exp(Vector3d::Zero()) - Matrix3d::Identity()).norm() ==
        doctest::Approx(0.0));

  // Quarter turn about z maps x to y.
  const Matrix3d r = rodrigues_exp(Vector3d(0, 0, M_PI / 2));
  CHECK((r * Vector3d(1, 0, 0) - Vector3d(0, 1, 0)).norm() < 1e-12);
}

TEST_CASE("rodrigues_exp matches the power-series oracle") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss(0, 1);
  for (int i = 0; i < 20; ++i) {
    Vector3d v(gauss(rng), gauss(rng), gauss(rng));
    v = 0.7 * v.normalized();
    CHECK((rodrigues_exp(v) - oracle::rotation_series(v)).norm() < 1e-10);
  }
}

TEST_CASE("rodrigues_log basics and round trip") {
  CHECK(rodrigues_log(Matrix3d::Identity()).norm() < 1e-15);

  const Vector3d pi_x = rodrigues_log(rodrigues_exp(Vector3d(M_PI, 0, 0)));
  CHECK((pi_x - Vector3d(M_PI, 0, 0)).norm() < 1e-9);

  std::mt19937_64 rng(11);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const Matrix3d r = oracle::random_rotation(rng);
    const Matrix3d back = rodrigues_exp(rodrigues_log(r));
    worst = std::max(worst, (back - r).norm());
    CHECK(rodrigues_log(r).norm() <= M_PI + 1e-12);
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("rodrigues_log rejects non-rotations") {
  Matrix3d bad = Matrix3d::Identity();
  bad(0, 1) = 0.01;
  CHECK_THROWS_AS(rodrigues_log(bad), Error);
}

TEST_CASE("nearest_rotation") {
  std::mt19937_64 rng(3);
  const Matrix3d r = oracle::random_rotation(rng);
  CHECK((nearest_rotation(r) - r).norm() < 1e-12);

  // Positive scaling preserves the minimizer.
  CHECK((nearest_rotation(2.0 * r) - r).norm() < 1e-12);

  SUBCASE("noisy input matches the brute-force oracle") {
    std::normal_distribution<double> gauss(0, 1);
    for (int trial = 0; trial < 5; ++trial) {
      Matrix3d noise;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) noise(i, j) = gauss(rng);
      const Matrix3d m = oracle::random_rotation(rng) + 0.05 * noise;
      const Matrix3d ours = nearest_rotation(m);
      const Matrix3d ref = oracle::brute_force_nearest_rotation(m);
      CHECK((ours - ref).norm() < 1e-6);
      CHECK(std::abs(ours.determinant() - 1.0) < 1e-12);
    }
  }

  SUBCASE("rank-deficient input is rejected") {
    Matrix3d m = Matrix3d::Zero();
    m(0, 0) = 1;
    m(1, 1) = 1;
    CHECK_THROWS_AS(nearest_rotation(m), Error);
  }

  SUBCASE("idempotent bit for bit") {
    std::normal_distribution<double> gauss(0, 1);
    Matrix3d noise;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) noise(i, j) = gauss(rng);
    const Matrix3d once = nearest_rotation(oracle::random_rotation(rng) +
                                           0.2 * noise);
    const Matrix3d twice = nearest_rotation(once);
    CHECK(std::memcmp(once.data(), twice.data(), sizeof(double) * 9) == 0);
  }
}

TEST_CASE("rigid transform compose and invert") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss(0, 1);
  for (int i = 0; i < 50; ++i) {
    RigidTransform t(oracle::random_rotation(rng),
                     Vector3d(gauss(rng), gauss(rng), gauss(rng)));
    const RigidTransform id = t * t.inverse();
    CHECK((id.rotation - Matrix3d::Identity()).norm() < 1e-9);
    CHECK(id.translation.norm() < 1e-9);
  }
}

TEST_CASE("point_cylinder_distance") {
  Cylinder c;
  c.axis = Vector3d(0, 0, 1);
  c.origin = Vector3d(1, 2, 3);
  c.radius = 0.25;

  CHECK(point_cylinder_distance(c.origin + Vector3d(0.25, 0, 0.7), c) ==
        doctest::Approx(0.0));
  CHECK(point_cylinder_distance(c.origin + Vector3d(0, 0, -2.0), c) ==
        doctest::Approx(c.radius));

  SUBCASE("matches the dense surface-sampling oracle") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> gauss(0, 1);
    Cylinder cr;
    cr.axis = Vector3d(gauss(rng), gauss(rng), gauss(rng)).normalized();
    cr.origin = Vector3d(gauss(rng), gauss(rng), gauss(rng));
    cr.radius = 0.4;
    const Vector3d x = cr.origin + Vector3d(0.9, -0.3, 0.5);
    CHECK(std::abs(point_cylinder_distance(x, cr) -
                   oracle::sampled_cylinder_distance(x, cr)) < 1e-6);
  }

  SUBCASE("invariant under rigid transforms") {
    std::mt19937_64 rng(23);
    std::normal_distribution<double> gauss(0, 1);
    for (int i = 0; i < 20; ++i) {
      RigidTransform t(oracle::random_rotation(rng),
                       Vector3d(gauss(rng), gauss(rng), gauss(rng)));
      const Vector3d x(gauss(rng), gauss(rng), gauss(rng));
      Cylinder moved;
      moved.axis = t.rotation * c.axis;
      moved.origin = t * c.origin;
      moved.radius = c.radius;
      CHECK(std::abs(point_cylinder_distance(x, c) -
                     point_cylinder_distance(t * x, moved)) < 1e-9);
    }
  }
}

TEST_CASE("object-frame losses") {
  const double ts = 0.2;
  CHECK(plane_slab_loss(Vector3d(5, -3, 0.5 * ts), ts) == 0.0);
  CHECK(plane_slab_loss(Vector3d(0, 0, ts + 0.1), ts) ==
        doctest::Approx(0.1));
  CHECK(plane_slab_loss(Vector3d(0, 0, -ts - 0.25), ts) ==
        doctest::Approx(0.25));

  const double rs = 0.3;
  CHECK(cylinder_surface_loss(Vector3d(5, rs, 0), rs) == doctest::Approx(0.0));
  CHECK(cylinder_surface_loss(Vector3d(0, 0, 2 * rs), rs) ==
        doctest::Approx(rs));
  CHECK(cylinder_surface_loss(Vector3d(0, 0, 0), rs) == doctest::Approx(rs));

  SUBCASE("non-negative everywhere") {
    std::mt19937_64 rng(29);
    std::normal_distribution<double> gauss(0, 1);
    for (int i = 0; i < 200; ++i) {
      const Vector3d x(gauss(rng), gauss(rng), gauss(rng));
      CHECK(plane_slab_loss(x, 0.1) >= 0.0);
      CHECK(cylinder_surface_loss(x, 0.1) >= 0.0);
    }
  }
}

TEST_CASE("project_point") {
  Intrinsics k{500, 500, 320, 240};
  const Vector2d p = project_point(Vector3d(0, 0, 1), k);
  CHECK(p.x() == doctest::Approx(320));
  CHECK(p.y() == doctest::Approx(240));

  const Vector2d q = project_point(Vector3d(0.1, 0, 1), k);
  CHECK(q.x() == doctest::Approx(370));

  CHECK_THROWS_AS(project_point(Vector3d(0, 0, -1), k), Error);

  SUBCASE("matches the homogeneous-matrix oracle") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> unit(-1, 1);
    for (int i = 0; i < 100; ++i) {
      const Vector3d x(unit(rng), unit(rng), 1.5 + unit(rng) * 0.5);
      const Vector2d a = project_point(x, k);
      const Vector2d b = oracle::homogeneous_projection(x, k);
      CHECK((a - b).norm() < 1e-10);
    }
  }
}

TEST_CASE("image line canonicalization") {
  const ImageLine l = ImageLine::from_coefficients(Vector3d(-2, 1, 4));
  CHECK(l.coeffs.norm() == doctest::Approx(1.0));
  CHECK(l.coeffs[0] > 0.0);  // sign flipped so first nonzero of (a,b) > 0

  const ImageLine h = ImageLine::from_coefficients(Vector3d(0, -3, 6));
  CHECK(h.coeffs[1] > 0.0);

  const ImageLine t = ImageLine::through_points({0, 3}, {3, 3});
  CHECK(t.distance({1, 5}) == doctest::Approx(2.0));
}

TEST_CASE("cylinder origin gauge fix") {
  Cylinder c;
  c.axis = Vector3d(0, 0, 1);
  c.origin = Vector3d(0, 0, -5);
  c.radius = 0.1;
  std::vector<Vector3d> support = {{0.1, 0, 1.0}, {-0.1, 0, 2.0}};
  const Cylinder g = gauge_fix_cylinder(c, support);
  CHECK(g.origin.z() == doctest::Approx(1.5));
  CHECK(g.origin.head<2>().norm() == doctest::Approx(0.0));
}
