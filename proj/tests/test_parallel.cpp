// The OpenMP kernels must be bitwise identical to their serial reference,
// independent of thread count.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "orchard/delaunay.hpp"
#include "orchard/least_squares.hpp"
#include "orchard/morphology.hpp"
#include "orchard/parallel.hpp"
#include "orchard/ransac.hpp"
#include "orchard/residuals.hpp"

using namespace orchard;

namespace {

Problem make_problem(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0, 1);
  Intrinsics k{500, 500, 320, 240};
  Problem problem;
  std::vector<int> poses;
  for (int c = 0; c < 8; ++c) {
    RigidTransform pose;
    pose.translation = Vector3d(-0.2 * c, 0.01 * c, 0);
    poses.push_back(problem.add_pose_block(pose));
  }
  problem.set_constant(poses[0]);
  for (int i = 0; i < 300; ++i) {
    const Vector3d x(gauss(rng), gauss(rng), 4.0 + gauss(rng));
    const int lm = problem.add_block({x.x(), x.y(), x.z()}, nullptr, true);
    for (int c = 0; c < 8; ++c) {
      const Vector3d x_cam = problem.pose(poses[c]) * x;
      if (x_cam.z() < 0.5) continue;
      const Vector2d px =
          project_point(x_cam, k) + Vector2d(gauss(rng), gauss(rng));
      problem.add_residual(
          reprojection_residual(poses[c], lm, k, px, RobustLoss::Huber(1.0)));
    }
  }
  return problem;
}

}  // namespace

TEST_CASE("cost evaluation is bitwise stable across modes and threads") {
  Problem problem = make_problem(3);
  const double serial = problem.cost(par::ExecMode::serial);

  par::set_thread_count(1);
  const double omp1 = problem.cost(par::ExecMode::openmp);
  par::set_thread_count(2);
  const double omp2 = problem.cost(par::ExecMode::openmp);
  par::set_thread_count(0);

  CHECK(serial == omp1);
  CHECK(serial == omp2);
}

TEST_CASE("lm_solve results are bitwise stable across modes") {
  Problem a = make_problem(7);
  Problem b = make_problem(7);
  LmOptions sopts;
  sopts.exec = par::ExecMode::serial;
  sopts.max_iterations = 8;
  LmOptions popts = sopts;
  popts.exec = par::ExecMode::openmp;
  const SolveReport ra = lm_solve(a, sopts);
  const SolveReport rb = lm_solve(b, popts);
  CHECK(ra.final_cost == rb.final_cost);
  for (int id = 0; id < a.block_count(); ++id) {
    const auto& va = a.values(id);
    const auto& vb = b.values(id);
    CHECK(std::memcmp(va.data(), vb.data(), va.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("ransac scoring is bitwise stable across modes") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unit(-1, 1);
  std::vector<Vector3d> pts;
  for (int i = 0; i < 20000; ++i) {
    pts.emplace_back(unit(rng), unit(rng),
                     i % 3 == 0 ? unit(rng) : 0.002 * unit(rng));
  }
  struct PlaneModel {
    Vector3d n;
    double d;
  };
  auto fit = [&](const std::vector<int>& s) -> std::optional<PlaneModel> {
    const Vector3d n = (pts[s[1]] - pts[s[0]]).cross(pts[s[2]] - pts[s[0]]);
    if (n.norm() < 1e-12) return std::nullopt;
    PlaneModel m{n.normalized(), 0};
    m.d = -m.n.dot(pts[s[0]]);
    return m;
  };
  auto residual = [&](const PlaneModel& m, int i) {
    return std::abs(m.n.dot(pts[i]) + m.d);
  };
  auto accept = [](const PlaneModel&) { return true; };
  RansacOptions opts;
  opts.seed = 9;
  opts.max_iters = 200;
  opts.inlier_threshold = 0.01;
  opts.exec = par::ExecMode::serial;
  const auto ra = ransac<PlaneModel>(20000, 3, fit, residual, accept, opts);
  opts.exec = par::ExecMode::openmp;
  const auto rb = ransac<PlaneModel>(20000, 3, fit, residual, accept, opts);
  CHECK(ra.inlier_count == rb.inlier_count);
  CHECK(ra.hypothesis == rb.hypothesis);
  CHECK(std::memcmp(ra.model.n.data(), rb.model.n.data(),
                    3 * sizeof(double)) == 0);
  CHECK(ra.inlier_mask == rb.inlier_mask);
}

TEST_CASE("alpha filter is bitwise stable across modes") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> gauss(0, 1);
  std::uniform_real_distribution<double> unit(0, 1);
  std::vector<Vector3d> pts;
  for (int i = 0; i < 4000; ++i) {
    Vector3d dir(gauss(rng), gauss(rng), gauss(rng));
    dir.normalize();
    pts.push_back(Vector3d(1.0, 0.9, 0.8).cwiseProduct(dir) *
                  (1.0 + 0.05 * unit(rng)));
  }
  Delaunay3D tri(pts);
  const AlphaShape3D sa = alpha_filter(tri, 0.7, 0.01, par::ExecMode::serial);
  const AlphaShape3D sb = alpha_filter(tri, 0.7, 0.01, par::ExecMode::openmp);
  CHECK(sa.volume == sb.volume);
  CHECK(sa.kept == sb.kept);
  CHECK(sa.component_volumes == sb.component_volumes);
}
