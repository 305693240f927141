// Times the parallel kernels against their serial reference and checks
// that both produce bitwise identical results.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <random>
#include <vector>

#include "orchard/delaunay.hpp"
#include "orchard/least_squares.hpp"
#include "orchard/morphology.hpp"
#include "orchard/parallel.hpp"
#include "orchard/ransac.hpp"
#include "orchard/residuals.hpp"

using namespace orchard;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start)
      .count();
}

struct Row {
  const char* name;
  double serial_ms;
  double openmp_ms;
  bool identical;
};

void print(const Row& row) {
  std::printf("%-28s %10.1f ms %10.1f ms   x%.2f   %s\n", row.name,
              row.serial_ms, row.openmp_ms, row.serial_ms / row.openmp_ms,
              row.identical ? "bitwise-equal" : "MISMATCH");
}

Problem build_ba_problem(int cameras, int points_per_cam) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> gauss(0, 1);
  Intrinsics k{500, 500, 320, 240};
  Problem problem;
  std::vector<int> poses;
  for (int c = 0; c < cameras; ++c) {
    RigidTransform pose;
    pose.translation = Vector3d(-0.1 * c, 0, 0);
    poses.push_back(problem.add_pose_block(pose));
  }
  problem.set_constant(poses[0]);
  for (int c = 0; c < cameras; ++c) {
    for (int i = 0; i < points_per_cam; ++i) {
      const Vector3d x(gauss(rng), gauss(rng), 4.0 + gauss(rng));
      const int lm = problem.add_block({x.x(), x.y(), x.z()}, nullptr, true);
      for (int dc = 0; dc < 3; ++dc) {
        const int cam = (c + dc) % cameras;
        const Vector3d x_cam = problem.pose(poses[cam]) * x;
        if (x_cam.z() < 0.5) continue;
        const Vector2d px = project_point(x_cam, k) +
                            Vector2d(gauss(rng), gauss(rng));
        problem.add_residual(reprojection_residual(poses[cam], lm, k, px,
                                                   RobustLoss::Huber(1.0)));
      }
    }
  }
  return problem;
}

Row bench_cost_evaluation() {
  Problem problem = build_ba_problem(60, 400);
  const double ref = problem.cost(par::ExecMode::serial);
  const int reps = 20;
  auto t0 = Clock::now();
  double serial_sum = 0.0;
  for (int i = 0; i < reps; ++i) {
    serial_sum += problem.cost(par::ExecMode::serial);
  }
  const double serial_ms = ms_since(t0) / reps;
  t0 = Clock::now();
  double omp_sum = 0.0;
  for (int i = 0; i < reps; ++i) {
    omp_sum += problem.cost(par::ExecMode::openmp);
  }
  const double omp_ms = ms_since(t0) / reps;
  return {"residual evaluation", serial_ms, omp_ms,
          serial_sum == omp_sum &&
              problem.cost(par::ExecMode::openmp) == ref};
}

Row bench_ransac() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> unit(-1, 1);
  std::vector<Vector3d> pts;
  for (int i = 0; i < 200000; ++i) {
    const bool inlier = i % 10 < 7;
    pts.emplace_back(unit(rng), unit(rng),
                     inlier ? 0.005 * unit(rng) : 2.0 * unit(rng));
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
  opts.max_iters = 400;
  opts.inlier_threshold = 0.01;
  opts.exec = par::ExecMode::serial;
  auto t0 = Clock::now();
  const auto a = ransac<PlaneModel>(200000, 3, fit, residual, accept, opts);
  const double serial_ms = ms_since(t0);
  opts.exec = par::ExecMode::openmp;
  t0 = Clock::now();
  const auto b = ransac<PlaneModel>(200000, 3, fit, residual, accept, opts);
  const double omp_ms = ms_since(t0);
  const bool same = a.inlier_count == b.inlier_count &&
                    std::memcmp(a.model.n.data(), b.model.n.data(),
                                3 * sizeof(double)) == 0 &&
                    a.inlier_mask == b.inlier_mask;
  return {"ransac hypothesis scoring", serial_ms, omp_ms, same};
}

Row bench_alpha_filter() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss(0, 1);
  std::uniform_real_distribution<double> unit(0, 1);
  std::vector<Vector3d> pts;
  for (int i = 0; i < 15000; ++i) {
    Vector3d dir(gauss(rng), gauss(rng), gauss(rng));
    dir.normalize();
    pts.push_back(Vector3d(1.1, 1.0, 0.9).cwiseProduct(dir) *
                  (1.0 + 0.04 * unit(rng)));
  }
  Delaunay3D tri(pts);
  const int reps = 10;
  auto t0 = Clock::now();
  AlphaShape3D sa;
  for (int i = 0; i < reps; ++i) {
    sa = alpha_filter(tri, 0.8, 0.01, par::ExecMode::serial);
  }
  const double serial_ms = ms_since(t0) / reps;
  t0 = Clock::now();
  AlphaShape3D sb;
  for (int i = 0; i < reps; ++i) {
    sb = alpha_filter(tri, 0.8, 0.01, par::ExecMode::openmp);
  }
  const double omp_ms = ms_since(t0) / reps;
  return {"alpha-shape filter", serial_ms, omp_ms,
          sa.volume == sb.volume && sa.kept == sb.kept};
}

}  // namespace

int main() {
  std::printf("threads available: %d\n\n", par::thread_count());
  std::printf("%-28s %13s %13s\n", "kernel", "serial", "openmp");
  print(bench_cost_evaluation());
  print(bench_ransac());
  print(bench_alpha_filter());
  return 0;
}
