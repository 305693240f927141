#include "orchard/semantic_fitting.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "orchard/ransac.hpp"
#include "orchard/residuals.hpp"

namespace orchard {

ImageLine fit_line_tls(const std::vector<Vector2d>& points) {
  if (points.size() < 2) {
    throw Error(ErrorCode::degenerate_input, "fit_line_tls: need 2+ points");
  }
  Vector2d mean = Vector2d::Zero();
  for (const auto& p : points) mean += p;
  mean /= static_cast<double>(points.size());
  Eigen::Matrix2d scatter = Eigen::Matrix2d::Zero();
  for (const auto& p : points) {
    scatter += (p - mean) * (p - mean).transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(scatter);
  if (eig.eigenvalues()(1) < 1e-20) {
    throw Error(ErrorCode::degenerate_input, "fit_line_tls: coincident points");
  }
  const Vector2d normal = eig.eigenvectors().col(0);  // smallest spread
  return ImageLine::from_coefficients(
      Vector3d(normal.x(), normal.y(), -normal.dot(mean)));
}

std::pair<ImageLine, ImageLine> project_cylinder_silhouette(
    const Cylinder& cylinder, const RigidTransform& world_to_cam,
    const Intrinsics& k) {
  const Vector3d center = world_to_cam.inverse().translation;
  const Vector3d n = cylinder.axis.normalized();
  Vector3d d = cylinder.origin - center;
  const Vector3d d_perp = d - n.dot(d) * n;
  const double rho = d_perp.norm();
  if (rho < 1e-12) {
    throw Error(ErrorCode::degenerate_view,
                "silhouette: cylinder axis passes through the camera center");
  }
  if (rho <= cylinder.radius) {
    throw Error(ErrorCode::degenerate_view,
                "silhouette: camera center inside the cylinder");
  }
  const Vector3d u = d_perp / rho;
  const Vector3d v = n.cross(u);
  // Tangent planes through the camera center: normal m with m.n = 0 and
  // m.d = r. With m = cos(psi) u + sin(psi) v, cos(psi) = r / rho.
  const double cos_psi = cylinder.radius / rho;
  const double sin_psi = std::sqrt(std::max(0.0, 1.0 - cos_psi * cos_psi));
  const Vector3d m1 = cos_psi * u + sin_psi * v;
  const Vector3d m2 = cos_psi * u - sin_psi * v;

  const Matrix3d k_inv_t = k.matrix().inverse().transpose();
  const ImageLine l1 = ImageLine::from_coefficients(
      k_inv_t * (world_to_cam.rotation * m1));
  const ImageLine l2 = ImageLine::from_coefficients(
      k_inv_t * (world_to_cam.rotation * m2));

  // Order by the signed side of the projected axis (the foot of the
  // camera-to-axis perpendicular is always in front of the camera here).
  const Vector3d foot = cylinder.origin - n.dot(d) * n;
  const Vector3d foot_cam = world_to_cam * foot;
  if (foot_cam.z() <= 0.0) {
    throw Error(ErrorCode::degenerate_view,
                "silhouette: cylinder behind the camera");
  }
  const Vector2d axis_px = project_point(foot_cam, k);
  const double s1 =
      l1.signed_value(axis_px) / std::hypot(l1.coeffs[0], l1.coeffs[1]);
  if (s1 >= 0.0) return {l1, l2};
  return {l2, l1};
}

namespace {

// Unit tangent-plane normal in camera coordinates for a pixel-space line:
// l_cam = K^T l_px, re-canonicalized. These are the normalized line
// vectors the silhouette terms compare.
Vector3d line_normal_cam(const ImageLine& pixel_line, const Intrinsics& k) {
  return ImageLine::from_coefficients(k.matrix().transpose() *
                                      pixel_line.coeffs)
      .coeffs;
}

// The silhouette pair of a cylinder as camera-frame normals, ordered like
// project_cylinder_silhouette.
std::pair<Vector3d, Vector3d> silhouette_normals(
    const Cylinder& cyl, const RigidTransform& pose, const Intrinsics& k) {
  const auto lines = project_cylinder_silhouette(cyl, pose, k);
  return {line_normal_cam(lines.first, k), line_normal_cam(lines.second, k)};
}

double view_cost(const Cylinder& cyl, const AnnotatedView& view) {
  std::pair<Vector3d, Vector3d> sil;
  try {
    sil = silhouette_normals(cyl, view.pose, view.intrinsics);
  } catch (const Error&) {
    return 1e6;  // out-of-view trial state; LM will reject the step
  }
  const Vector3d na = line_normal_cam(view.line_a, view.intrinsics);
  const Vector3d nb = line_normal_cam(view.line_b, view.intrinsics);
  return (sil.first - na).squaredNorm() + (sil.second - nb).squaredNorm();
}

// 6-dim residual (stacked normal differences) of one annotated view,
// differentiated numerically through the manifolds.
ResidualBlock silhouette_residual(int frame_id, int radius_id,
                                  const AnnotatedView& view, double weight) {
  ResidualBlock block;
  block.params = {frame_id, radius_id};
  block.dim = 6;
  block.weight = weight;
  block.analytic = false;
  const Vector3d na = line_normal_cam(view.line_a, view.intrinsics);
  const Vector3d nb = line_normal_cam(view.line_b, view.intrinsics);
  const RigidTransform pose = view.pose;
  const Intrinsics k = view.intrinsics;
  block.eval = [na, nb, pose, k](const std::vector<const double*>& p,
                                 double* r, const std::vector<double*>&) {
    Cylinder cyl;
    cyl.axis = Vector3d(p[0][0], p[0][1], p[0][2]).normalized();
    cyl.origin = Vector3d(p[0][3], p[0][4], p[0][5]);
    cyl.radius = p[1][0];
    std::pair<Vector3d, Vector3d> sil;
    try {
      sil = silhouette_normals(cyl, pose, k);
    } catch (const Error&) {
      for (int i = 0; i < 6; ++i) r[i] = 1e3;
      return;
    }
    Eigen::Map<Vector3d>{r} = sil.first - na;
    Eigen::Map<Vector3d>{r + 3} = sil.second - nb;
  };
  return block;
}

std::optional<Cylinder> nine_point_cylinder(const std::vector<Vector3d>& pts,
                                            const std::vector<int>& sample,
                                            double max_radius) {
  // General quadric through the sample; the cylinder axis is the
  // smallest-variance direction of the quadratic form.
  Eigen::Matrix<double, Eigen::Dynamic, 10> a(sample.size(), 10);
  for (size_t i = 0; i < sample.size(); ++i) {
    const Vector3d& p = pts[sample[i]];
    a.row(i) << p.x() * p.x(), p.y() * p.y(), p.z() * p.z(), p.x() * p.y(),
        p.x() * p.z(), p.y() * p.z(), p.x(), p.y(), p.z(), 1.0;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd q = svd.matrixV().col(9);
  Matrix3d quad;
  quad << q(0), q(3) / 2, q(4) / 2, q(3) / 2, q(1), q(5) / 2, q(4) / 2,
      q(5) / 2, q(2);
  Eigen::SelfAdjointEigenSolver<Matrix3d> eig(quad);
  // Axis: eigenvalue of smallest magnitude.
  int axis_k = 0;
  double best = std::abs(eig.eigenvalues()(0));
  for (int i = 1; i < 3; ++i) {
    if (std::abs(eig.eigenvalues()(i)) < best) {
      best = std::abs(eig.eigenvalues()(i));
      axis_k = i;
    }
  }
  const Vector3d axis = eig.eigenvectors().col(axis_k);

  // Circle fit in the plane perpendicular to the axis (Kasa).
  Vector3d u, w;
  unit_vector_basis(axis, u, w);
  Vector3d centroid = Vector3d::Zero();
  for (int i : sample) centroid += pts[i];
  centroid /= static_cast<double>(sample.size());
  Eigen::MatrixXd m(sample.size(), 3);
  Eigen::VectorXd rhs(sample.size());
  for (size_t i = 0; i < sample.size(); ++i) {
    const Vector3d d = pts[sample[i]] - centroid;
    const double x = u.dot(d), y = w.dot(d);
    m.row(i) << 2.0 * x, 2.0 * y, 1.0;
    rhs(i) = x * x + y * y;
  }
  const Eigen::Vector3d sol =
      m.colPivHouseholderQr().solve(rhs);
  const double r2 = sol(2) + sol(0) * sol(0) + sol(1) * sol(1);
  if (!(r2 > 0.0) || !std::isfinite(r2)) return std::nullopt;
  Cylinder cyl;
  cyl.axis = axis;
  cyl.origin = centroid + sol(0) * u + sol(1) * w;
  cyl.radius = std::sqrt(r2);
  if (cyl.radius <= 1e-4 || cyl.radius > max_radius) return std::nullopt;
  return cyl;
}

struct CylinderLmResult {
  Cylinder cylinder;
  double cost = 0.0;
};

// Joint LM of Eq. (3) / Eq. (9) style costs. Radius may be shared between
// two frames (two-sided fit); pass the same radius id.
CylinderLmResult refine_cylinder(
    Problem& problem, int frame_id, int radius_id,
    const std::vector<Vector3d>& points, const std::vector<int>& use,
    const std::vector<AnnotatedView>& views, SideTag side, double lambda) {
  for (int i : use) {
    problem.add_residual(cylinder_point_residual(frame_id, radius_id,
                                                 points[i]));
  }
  if (lambda > 0.0) {
    for (const auto& view : views) {
      if (view.side != side) continue;
      problem.add_residual(
          silhouette_residual(frame_id, radius_id, view, lambda));
    }
  }
  return {};
}

Cylinder cylinder_from_blocks(const Problem& problem, int frame_id,
                              int radius_id) {
  const auto& f = problem.values(frame_id);
  Cylinder cyl;
  cyl.axis = Vector3d(f[0], f[1], f[2]).normalized();
  cyl.origin = Vector3d(f[3], f[4], f[5]);
  cyl.radius = problem.values(radius_id)[0];
  return cyl;
}

void finish_cylinder(Cylinder& cyl, const std::vector<Vector3d>& points,
                     const std::vector<int>& support) {
  std::vector<Vector3d> sup;
  for (int i : support) sup.push_back(points[i]);
  cyl = gauge_fix_cylinder(cyl, sup);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& p : sup) {
    const double t = cyl.axis.dot(p - cyl.origin);
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
  cyl.height = sup.empty() ? 0.0 : hi - lo;
}

RansacResult<Cylinder> ransac_cylinder(const std::vector<Vector3d>& points,
                                       std::uint64_t seed,
                                       const PipelineConfig& cfg) {
  RansacOptions opts;
  opts.seed = seed;
  opts.max_iters = cfg.ransac_max_iters;
  opts.inlier_threshold = cfg.cylinder_inlier_threshold;
  auto fit = [&](const std::vector<int>& sample) {
    return nine_point_cylinder(points, sample, cfg.max_trunk_radius);
  };
  auto residual = [&](const Cylinder& c, int i) {
    return point_cylinder_distance(points[i], c);
  };
  auto accept = [](const Cylinder& c) {
    return c.axis.allFinite() && c.origin.allFinite();
  };
  return ransac<Cylinder>(static_cast<int>(points.size()), 9, fit, residual,
                          accept, opts);
}

}  // namespace

double trunk_cost(const Cylinder& cylinder,
                  const std::vector<Vector3d>& points,
                  const std::vector<AnnotatedView>& views, double lambda) {
  double cost = 0.0;
  for (const auto& p : points) {
    const double e = point_cylinder_distance(p, cylinder);
    cost += e * e;
  }
  if (lambda > 0.0) {
    for (const auto& view : views) cost += lambda * view_cost(cylinder, view);
  }
  return cost;
}

Cylinder fit_trunk_cylinder(const std::vector<Vector3d>& points,
                            const std::vector<AnnotatedView>& views,
                            double lambda, std::uint64_t seed,
                            const PipelineConfig& cfg,
                            std::vector<int>* inliers,
                            Cylinder* ransac_model) {
  if (points.size() < 9) {
    throw Error(ErrorCode::insufficient_data,
                "fit_trunk_cylinder: need at least 9 points");
  }
  if (lambda > 0.0 && views.empty()) {
    throw Error(ErrorCode::missing_constraint,
                "fit_trunk_cylinder: lambda > 0 but no boundary lines");
  }
  const auto best = ransac_cylinder(points, seed, cfg);

  std::vector<int> support;
  for (size_t i = 0; i < points.size(); ++i) {
    if (best.inlier_mask[i]) support.push_back(static_cast<int>(i));
  }

  if (ransac_model) *ransac_model = best.model;

  Problem problem;
  const Cylinder init = best.model;
  const int frame_id = problem.add_block(
      {init.axis.x(), init.axis.y(), init.axis.z(), init.origin.x(),
       init.origin.y(), init.origin.z()},
      std::make_shared<CylinderFrameManifold>());
  const int radius_id = problem.add_block({init.radius});
  // Views here all annotate the same side as the points.
  const SideTag side = views.empty() ? SideTag::front : views.front().side;
  refine_cylinder(problem, frame_id, radius_id, points, support, views, side,
                  lambda);
  lm_solve(problem);

  Cylinder cyl = cylinder_from_blocks(problem, frame_id, radius_id);
  finish_cylinder(cyl, points, support);
  if (inliers) *inliers = support;
  return cyl;
}

Plane fit_ground_plane_with_prior(const std::vector<Vector3d>& points,
                                  const Vector3d& prior_axis, double t_s,
                                  std::uint64_t seed,
                                  const PipelineConfig& cfg,
                                  std::vector<int>* inliers) {
  if (points.size() < 3) {
    throw Error(ErrorCode::insufficient_data,
                "fit_ground_plane_with_prior: need at least 3 points");
  }
  if (t_s < 0.0) {
    throw Error(ErrorCode::bad_spec, "fit_ground_plane_with_prior: t_s < 0");
  }
  const Vector3d prior = prior_axis.normalized();
  const double cos_max = std::cos(cfg.theta_max_deg * M_PI / 180.0);
  const int n = static_cast<int>(points.size());
  const int max_below =
      static_cast<int>(std::floor(cfg.ground_boundary_eps * n));

  auto admissible = [&](const Plane& plane) {
    if (plane.normal.dot(prior) < cos_max) return false;
    int below = 0;
    for (const auto& p : points) {
      if (plane_signed_distance(p, plane) < -t_s) {
        if (++below > max_below) return false;
      }
    }
    return true;
  };

  RansacOptions opts;
  opts.seed = seed;
  opts.max_iters = 2 * cfg.ransac_max_iters;
  opts.inlier_threshold = t_s;
  // Admissible planes sit at the low boundary of the cloud along the
  // prior, so minimal samples come from the lowest-height third of the
  // candidates (scoring and the admissibility gates still see everything).
  {
    std::vector<double> height(points.size());
    for (size_t i = 0; i < points.size(); ++i) height[i] = prior.dot(points[i]);
    std::vector<double> sorted = height;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() * 35 / 100,
                     sorted.end());
    const double cutoff = sorted[sorted.size() * 35 / 100];
    for (size_t i = 0; i < points.size(); ++i) {
      if (height[i] <= cutoff) {
        opts.sampling_pool.push_back(static_cast<int>(i));
      }
    }
    if (opts.sampling_pool.size() < 3) opts.sampling_pool.clear();
  }
  auto fit = [&](const std::vector<int>& sample) -> std::optional<Plane> {
    const Vector3d a = points[sample[0]], b = points[sample[1]],
                   c = points[sample[2]];
    Vector3d normal = (b - a).cross(c - a);
    if (normal.norm() < 1e-12) return std::nullopt;
    normal.normalize();
    if (normal.dot(prior) < 0) normal = -normal;
    Plane plane;
    plane.normal = normal;
    plane.origin = (a + b + c) / 3.0;
    plane.slab_halfwidth = t_s;
    return plane;
  };
  auto residual = [&](const Plane& plane, int i) {
    return std::abs(plane_signed_distance(points[i], plane));
  };

  const auto best = ransac<Plane>(n, 3, fit, residual, admissible, opts);

  // TLS refit on the inliers, kept only if it stays admissible.
  Vector3d mean = Vector3d::Zero();
  int count = 0;
  for (int i = 0; i < n; ++i) {
    if (best.inlier_mask[i]) {
      mean += points[i];
      ++count;
    }
  }
  Plane plane = best.model;
  if (count >= 3) {
    mean /= count;
    Matrix3d cov = Matrix3d::Zero();
    for (int i = 0; i < n; ++i) {
      if (!best.inlier_mask[i]) continue;
      cov += (points[i] - mean) * (points[i] - mean).transpose();
    }
    Eigen::SelfAdjointEigenSolver<Matrix3d> eig(cov);
    Plane refined;
    refined.normal = eig.eigenvectors().col(0);
    if (refined.normal.dot(prior) < 0) refined.normal = -refined.normal;
    refined.origin = mean;
    refined.slab_halfwidth = t_s;
    if (admissible(refined)) plane = refined;
  }

  if (inliers) {
    inliers->clear();
    for (int i = 0; i < n; ++i) {
      if (std::abs(plane_signed_distance(points[i], plane)) <= t_s) {
        inliers->push_back(i);
      }
    }
  }
  return plane;
}

TwoSidedTrunkFit fit_trunk_two_sided(const std::vector<Vector3d>& front_points,
                                     const std::vector<Vector3d>& back_points,
                                     const std::vector<AnnotatedView>& views,
                                     double lambda, std::uint64_t seed,
                                     const PipelineConfig& cfg) {
  if (front_points.empty() || back_points.empty()) {
    throw Error(ErrorCode::insufficient_data,
                "fit_trunk_two_sided: both sides must be non-empty");
  }
  if (front_points.size() < 9 || back_points.size() < 9) {
    throw Error(ErrorCode::insufficient_data,
                "fit_trunk_two_sided: need 9+ points per side");
  }

  const auto ransac_f = ransac_cylinder(front_points, seed, cfg);
  const auto ransac_b = ransac_cylinder(back_points, seed + 1, cfg);

  std::vector<int> support_f, support_b;
  for (size_t i = 0; i < front_points.size(); ++i) {
    if (ransac_f.inlier_mask[i]) support_f.push_back(static_cast<int>(i));
  }
  for (size_t i = 0; i < back_points.size(); ++i) {
    if (ransac_b.inlier_mask[i]) support_b.push_back(static_cast<int>(i));
  }

  // Consistent axis orientation between the sides.
  Cylinder init_f = ransac_f.model;
  Cylinder init_b = ransac_b.model;
  if (init_f.axis.dot(init_b.axis) < 0) init_b.axis = -init_b.axis;

  Problem problem;
  const int frame_f = problem.add_block(
      {init_f.axis.x(), init_f.axis.y(), init_f.axis.z(), init_f.origin.x(),
       init_f.origin.y(), init_f.origin.z()},
      std::make_shared<CylinderFrameManifold>());
  const int frame_b = problem.add_block(
      {init_b.axis.x(), init_b.axis.y(), init_b.axis.z(), init_b.origin.x(),
       init_b.origin.y(), init_b.origin.z()},
      std::make_shared<CylinderFrameManifold>());
  const int radius_id =
      problem.add_block({0.5 * (init_f.radius + init_b.radius)});

  refine_cylinder(problem, frame_f, radius_id, front_points, support_f, views,
                  SideTag::front, lambda);
  refine_cylinder(problem, frame_b, radius_id, back_points, support_b, views,
                  SideTag::back, lambda);
  const SolveReport report = lm_solve(problem);

  TwoSidedTrunkFit fit;
  fit.front = cylinder_from_blocks(problem, frame_f, radius_id);
  fit.back = cylinder_from_blocks(problem, frame_b, radius_id);
  finish_cylinder(fit.front, front_points, support_f);
  finish_cylinder(fit.back, back_points, support_b);
  fit.diameter = 2.0 * problem.values(radius_id)[0];
  fit.final_cost = report.final_cost;
  return fit;
}

}  // namespace orchard
