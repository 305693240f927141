#include "orchard/morphology.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <unordered_map>

#include "orchard/error.hpp"

namespace orchard {

AlphaShape3D alpha_filter(const Delaunay3D& tri, double alpha,
                          double min_component_fraction, par::ExecMode exec) {
  const auto& tets = tri.tetrahedra();
  AlphaShape3D shape;
  shape.alpha = alpha;

  // Circumradius test per tetrahedron (slots written independently).
  std::vector<char> keep(tets.size(), 0);
  par::for_index(exec, static_cast<std::int64_t>(tets.size()),
                 [&](std::int64_t i) {
                   keep[i] = tets[i].circumradius <= alpha ? 1 : 0;
                 });

  // Union-find over face-adjacent kept tets.
  std::vector<int> parent(tets.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int v) {
    while (parent[v] != v) {
      parent[v] = parent[parent[v]];
      v = parent[v];
    }
    return v;
  };
  for (size_t i = 0; i < tets.size(); ++i) {
    if (!keep[i]) continue;
    for (int nb : tets[i].neighbor) {
      if (nb >= 0 && keep[nb]) {
        const int a = find(static_cast<int>(i)), b = find(nb);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
      }
    }
  }
  std::unordered_map<int, double> comp_volume;
  for (size_t i = 0; i < tets.size(); ++i) {
    if (keep[i]) comp_volume[find(static_cast<int>(i))] += tets[i].volume;
  }
  double largest = 0.0;
  for (const auto& [root, vol] : comp_volume) largest = std::max(largest, vol);

  shape.volume = 0.0;
  for (size_t i = 0; i < tets.size(); ++i) {
    if (!keep[i]) continue;
    if (comp_volume[find(static_cast<int>(i))] <
        min_component_fraction * largest) {
      continue;
    }
    shape.kept.push_back(static_cast<int>(i));
    shape.volume += tets[i].volume;
  }
  for (const auto& [root, vol] : comp_volume) {
    if (vol >= min_component_fraction * largest) {
      shape.component_volumes.push_back(vol);
    }
  }
  std::sort(shape.component_volumes.rbegin(), shape.component_volumes.rend());
  return shape;
}

std::pair<double, AlphaShape3D> alpha_shape_volume(
    const std::vector<Vector3d>& points, double alpha,
    double min_component_fraction, par::ExecMode exec) {
  if (alpha <= 0.0) {
    throw Error(ErrorCode::degenerate_input, "alpha_shape_volume: alpha <= 0");
  }
  Delaunay3D tri(points);
  AlphaShape3D shape = alpha_filter(tri, alpha, min_component_fraction, exec);
  return {shape.volume, shape};
}

RowTrack fit_row_track(const std::vector<Vector3d>& trunk_origins,
                       const Plane& ground) {
  if (trunk_origins.size() < 2) {
    throw Error(ErrorCode::insufficient_data,
                "fit_row_track: need at least 2 trunks");
  }
  // Project origins to the ground plane, then TLS in-plane.
  std::vector<Vector3d> proj;
  for (const auto& o : trunk_origins) {
    proj.push_back(o - plane_signed_distance(o, ground) * ground.normal);
  }
  Vector3d mean = Vector3d::Zero();
  for (const auto& p : proj) mean += p;
  mean /= static_cast<double>(proj.size());
  Matrix3d cov = Matrix3d::Zero();
  for (const auto& p : proj) cov += (p - mean) * (p - mean).transpose();
  Eigen::SelfAdjointEigenSolver<Matrix3d> eig(cov);
  RowTrack track;
  track.point = mean;
  Vector3d dir = eig.eigenvectors().col(2);  // largest spread
  dir -= ground.normal.dot(dir) * ground.normal;
  if (dir.norm() < 1e-12) {
    throw Error(ErrorCode::degenerate_input,
                "fit_row_track: trunks project to a point");
  }
  dir.normalize();
  // Canonical orientation: positive along the dominant world axis.
  int k = 0;
  dir.cwiseAbs().maxCoeff(&k);
  if (dir[k] < 0) dir = -dir;
  track.direction = dir;
  return track;
}

Segmentation segment_trees(const std::vector<Vector3d>& points,
                           const std::vector<Cylinder>& trunks,
                           const std::vector<Plane>& grounds,
                           const RowTrack& track, const PipelineConfig& cfg) {
  if (trunks.empty() || trunks.size() != grounds.size()) {
    throw Error(ErrorCode::insufficient_data,
                "segment_trees: trunks/grounds mismatch");
  }
  const int n = static_cast<int>(trunks.size());
  auto station = [&](const Vector3d& p) {
    return track.direction.dot(p - track.point);
  };

  std::vector<double> s_trunk(n);
  for (int i = 0; i < n; ++i) s_trunk[i] = station(trunks[i].origin);
  for (int i = 1; i < n; ++i) {
    if (s_trunk[i] <= s_trunk[i - 1]) {
      throw Error(ErrorCode::ordering_violation,
                  "segment_trees: trunks not ordered along the track");
    }
  }

  std::vector<double> s_points(points.size());
  for (size_t i = 0; i < points.size(); ++i) s_points[i] = station(points[i]);

  // Cutting plane per gap: along-track density minimum within the middle
  // 50%, midpoint fallback when the histogram is flat or empty.
  std::vector<double> cuts(n + 1);
  cuts[0] = s_trunk.front() - cfg.row_margin;
  cuts[n] = s_trunk.back() + cfg.row_margin;
  for (int g = 1; g < n; ++g) {
    const double lo = s_trunk[g - 1], hi = s_trunk[g];
    const double mid_lo = lo + 0.25 * (hi - lo);
    const double mid_hi = lo + 0.75 * (hi - lo);
    const int bins = std::max(1, static_cast<int>((mid_hi - mid_lo) /
                                                  cfg.segment_bin));
    std::vector<int> hist(bins, 0);
    for (double s : s_points) {
      if (s >= mid_lo && s < mid_hi) {
        const int b = std::min(
            bins - 1, static_cast<int>((s - mid_lo) / (mid_hi - mid_lo) * bins));
        ++hist[b];
      }
    }
    int best_bin = -1;
    for (int b = 0; b < bins; ++b) {
      if (best_bin < 0 || hist[b] < hist[best_bin]) best_bin = b;
    }
    const bool flat =
        best_bin < 0 ||
        hist[best_bin] == *std::max_element(hist.begin(), hist.end());
    cuts[g] = flat ? 0.5 * (lo + hi)
                   : mid_lo + (best_bin + 0.5) * (mid_hi - mid_lo) / bins;
  }

  Segmentation seg;
  seg.track = track;
  seg.members.assign(n, {});
  for (int i = 0; i < n; ++i) {
    TreeRegion region;
    region.tree = i;
    region.cut_low = cuts[i];
    region.cut_high = cuts[i + 1];
    region.station = s_trunk[i];
    seg.regions.push_back(region);
  }

  // Membership: slab between the cutting planes, plus the two
  // half-cylinders (radius sqrt(2) d_s about the trunk vertical) that
  // reach across the planes for overlapping canopies.
  for (size_t pi = 0; pi < points.size(); ++pi) {
    const double s = s_points[pi];
    for (int i = 0; i < n; ++i) {
      const auto& region = seg.regions[i];
      bool inside = s >= region.cut_low && s <= region.cut_high;
      if (!inside) {
        const Vector3d vertical = grounds[i].normal;
        Vector3d d = points[pi] - trunks[i].origin;
        d -= vertical.dot(d) * vertical;
        const double radial = d.norm();
        if (s < region.cut_low) {
          const double ds = region.station - region.cut_low;
          inside = radial <= std::sqrt(2.0) * ds;
        } else {
          const double ds = region.cut_high - region.station;
          inside = radial <= std::sqrt(2.0) * ds;
        }
      }
      if (inside) seg.members[i].push_back(static_cast<int>(pi));
    }
  }
  return seg;
}

double tree_height(const std::vector<Vector3d>& points, const Plane& ground,
                   const PoleExclusion& pole) {
  std::vector<double> heights;
  heights.reserve(points.size());
  for (const auto& p : points) {
    heights.push_back(plane_signed_distance(p, ground));
  }

  std::vector<char> keep(points.size(), 1);
  if (pole.enabled && !points.empty()) {
    std::vector<double> sorted = heights;
    std::sort(sorted.begin(), sorted.end());
    const double h95 = sorted[static_cast<size_t>(0.95 * (sorted.size() - 1))];
    for (size_t i = 0; i < points.size(); ++i) {
      Vector3d d = points[i] - pole.trunk_point;
      d -= pole.vertical.dot(d) * pole.vertical;
      if (d.norm() <= pole.radius && heights[i] > h95) keep[i] = 0;
    }
  }

  double top = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < points.size(); ++i) {
    if (keep[i]) top = std::max(top, heights[i]);
  }
  if (!(top > 0.0)) {
    throw Error(ErrorCode::empty_tree, "tree_height: no points above ground");
  }
  return top;
}

double cylinder_model_volume(const std::vector<Vector3d>& points,
                             const Plane& ground, const Vector3d& trunk_point,
                             const Vector3d& vertical) {
  double h = 0.0, r = 0.0;
  for (const auto& p : points) {
    h = std::max(h, plane_signed_distance(p, ground));
    Vector3d d = p - trunk_point;
    d -= vertical.dot(d) * vertical;
    r = std::max(r, d.norm());
  }
  return M_PI * r * r * h;
}

namespace {

// Deterministic stride subsample down to the triangulation cap.
std::vector<Vector3d> cap_points(const std::vector<Vector3d>& pts, int cap) {
  if (static_cast<int>(pts.size()) <= cap) return pts;
  std::vector<Vector3d> out;
  const double step = static_cast<double>(pts.size()) / cap;
  out.reserve(cap);
  for (int i = 0; i < cap; ++i) {
    out.push_back(pts[static_cast<size_t>(i * step)]);
  }
  return out;
}

}  // namespace

CanopySegmentation segment_for_trees(const std::vector<Vector3d>& points,
                                     const std::vector<TreeObjects>& trees,
                                     const PipelineConfig& cfg) {
  if (trees.empty()) {
    throw Error(ErrorCode::insufficient_data, "segmentation: no trees");
  }
  CanopySegmentation out;
  // Remove local-ground slabs before segmentation.
  out.canopy.reserve(points.size());
  for (const auto& p : points) {
    bool on_ground = false;
    for (const auto& t : trees) {
      const double d = plane_signed_distance(p, t.ground);
      const double ts = t.ground.slab_halfwidth > 0 ? t.ground.slab_halfwidth
                                                    : cfg.ground_t_s;
      if (d <= ts) {
        on_ground = true;
        break;
      }
    }
    if (!on_ground) out.canopy.push_back(p);
  }

  std::vector<Vector3d> origins;
  for (const auto& t : trees) origins.push_back(t.trunk.origin);
  const RowTrack track = fit_row_track(origins, trees.front().ground);

  // Cutting planes need the trunks in station order along the track.
  std::vector<int> by_station(trees.size());
  std::iota(by_station.begin(), by_station.end(), 0);
  std::sort(by_station.begin(), by_station.end(), [&](int a, int b) {
    return track.direction.dot(trees[a].trunk.origin - track.point) <
           track.direction.dot(trees[b].trunk.origin - track.point);
  });
  std::vector<Cylinder> trunks;
  std::vector<Plane> grounds;
  for (int i : by_station) {
    trunks.push_back(trees[i].trunk);
    grounds.push_back(trees[i].ground);
  }
  const Segmentation seg =
      segment_trees(out.canopy, trunks, grounds, track, cfg);
  out.members.resize(trees.size());
  for (size_t r = 0; r < by_station.size(); ++r) {
    out.members[by_station[r]] = seg.members[r];
  }
  return out;
}

std::vector<TreeRecord> measure_all(const std::vector<Vector3d>& points,
                                    const std::vector<TreeObjects>& trees,
                                    const PipelineConfig& cfg,
                                    par::ExecMode exec) {
  std::vector<TreeObjects> ordered = trees;
  std::sort(ordered.begin(), ordered.end(),
            [](const TreeObjects& a, const TreeObjects& b) {
              return a.id < b.id;
            });

  const CanopySegmentation seg = segment_for_trees(points, ordered, cfg);
  const std::vector<Vector3d>& canopy = seg.canopy;

  std::vector<TreeRecord> records(ordered.size());
  par::for_index(exec, static_cast<std::int64_t>(ordered.size()),
                 [&](std::int64_t i) {
    TreeRecord& rec = records[i];
    rec.tree_id = ordered[i].id;
    rec.alpha_m = cfg.alpha_m;
    rec.diameter_m = ordered[i].diameter;
    try {
      const auto& member_ids = seg.members[i];
      std::vector<Vector3d> mine;
      mine.reserve(member_ids.size());
      for (int pi : member_ids) mine.push_back(canopy[pi]);

      PoleExclusion pole;
      pole.enabled = cfg.pole_exclusion;
      pole.radius = cfg.pole_radius;
      pole.trunk_point = ordered[i].trunk.origin;
      pole.vertical = ordered[i].ground.normal;
      rec.height_m = tree_height(mine, ordered[i].ground, pole);

      const std::vector<Vector3d> capped =
          cap_points(mine, cfg.max_triangulation_points);
      rec.vol_alpha_m3 =
          alpha_shape_volume(capped, cfg.alpha_m, cfg.min_component_fraction,
                             par::ExecMode::serial)
              .first;
      rec.vol_hull_m3 = convex_hull_volume(capped);
      rec.vol_cyl_m3 =
          cylinder_model_volume(mine, ordered[i].ground,
                                ordered[i].trunk.origin,
                                ordered[i].ground.normal);
    } catch (const Error& e) {
      rec.error = e.what();
    }
  });
  return records;
}

}  // namespace orchard
