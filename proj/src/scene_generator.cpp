#include "orchard/scene_generator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <random>
#include <sstream>

#include "orchard/morphology.hpp"

namespace orchard {

namespace {

using Json = nlohmann::json;

constexpr int kImageWidth = 640;
constexpr int kImageHeight = 480;
constexpr int kLoopIdSplit = 1000000;
constexpr double kGroundRoughness = 0.003;

std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double sample_range(std::mt19937_64& rng, const ValueRange& r) {
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

struct Lobe {
  Vector3d center;
  Vector3d semi;
};

struct TreeGeometry {
  int id = 0;
  Vector3d base;  // on the ground plane
  Vector3d axis;  // unit, leaning
  double radius = 0.0;
  double trunk_h = 0.0;
  Lobe lobes[2];
  double canopy_jitter = 0.0;
};

struct Ground {
  Plane plane;  // normal up, through the origin
  double height_at(double x, double y) const {
    (void)x;
    // n . (x, y, z) = 0 with n = (0, -sin, cos)
    return plane.normal.y() != 0.0 || plane.normal.x() != 0.0
               ? -(plane.normal.x() * x + plane.normal.y() * y) /
                     plane.normal.z()
               : 0.0;
  }
};

TreeGeometry make_tree(const SceneSpec& spec, const Ground& ground, int i) {
  std::uint64_t s = derive_seed(spec.seed, 11 + i);
  std::mt19937_64 rng(s);
  std::normal_distribution<double> gauss(0, 1);
  std::uniform_real_distribution<double> unit(0, 1);

  TreeGeometry t;
  t.id = i;
  const double x = i * spec.spacing;
  const double y = 0.04 * (unit(rng) - 0.5);
  t.base = Vector3d(x, y, ground.height_at(x, y));
  t.radius = sample_range(rng, spec.trunk_radius);
  t.trunk_h = sample_range(rng, spec.trunk_height);

  // Lean: rotate the ground normal by a random small tilt.
  const double tilt = spec.trunk_tilt_deg * M_PI / 180.0 * unit(rng);
  const double dir = 2.0 * M_PI * unit(rng);
  Vector3d u, w;
  unit_vector_basis(ground.plane.normal, u, w);
  t.axis = rodrigues_exp(tilt * (std::cos(dir) * u + std::sin(dir) * w)) *
           ground.plane.normal;

  const Vector3d rx = {sample_range(rng, spec.canopy_rx),
                       sample_range(rng, spec.canopy_ry),
                       sample_range(rng, spec.canopy_rz)};
  const Vector3d canopy_center =
      t.base + t.axis * (t.trunk_h + 1.0 * rx.z());
  for (int l = 0; l < 2; ++l) {
    const double f = 0.82 + 0.18 * unit(rng);
    t.lobes[l].semi = f * rx;
    const double odir = 2.0 * M_PI * unit(rng);
    const double off = 0.22 * rx.x() * unit(rng);
    t.lobes[l].center =
        canopy_center + Vector3d(std::cos(odir) * off, std::sin(odir) * off,
                                 0.12 * rx.z() * (l == 0 ? 1.0 : -1.0));
  }
  t.canopy_jitter = spec.canopy_jitter;
  return t;
}

struct RawPoint {
  Vector3d p;  // true position, row frame
  PointLabel label;
};

// Points of one tree as seen from one side (camera on +y for the front).
std::vector<RawPoint> tree_points(const SceneSpec& spec,
                                  const TreeGeometry& t, const Ground& ground,
                                  SideTag side) {
  std::uint64_t s = derive_seed(spec.seed, 101 + 2 * t.id +
                                               (side == SideTag::back));
  std::mt19937_64 rng(s);
  std::normal_distribution<double> gauss(0, 1);
  std::uniform_real_distribution<double> unit(0, 1);
  const double side_sign = side == SideTag::front ? 1.0 : -1.0;

  std::vector<RawPoint> out;
  out.reserve(spec.trunk_points + spec.ground_points + spec.canopy_points / 2);

  // Trunk: camera-facing half shell.
  Vector3d uy = Vector3d(0, side_sign, 0);
  uy = (uy - t.axis.dot(uy) * t.axis).normalized();
  const Vector3d ux = t.axis.cross(uy);
  for (int i = 0; i < spec.trunk_points; ++i) {
    const double phi = (unit(rng) - 0.5) * (150.0 * M_PI / 180.0);
    const double h = 0.02 + (t.trunk_h - 0.04) * unit(rng);
    const Vector3d p = t.base + h * t.axis +
                       t.radius * (std::cos(phi) * uy + std::sin(phi) * ux);
    out.push_back({p, {t.id, 0}});
  }

  // Ground patch, biased to the camera side of the row. Wide enough that
  // tilted planes grazing the canopy underside dip below real ground
  // samples and fail the boundary test.
  for (int i = 0; i < spec.ground_points; ++i) {
    const double dx = (unit(rng) - 0.5) * 1.6 * spec.spacing;
    const double dy = side_sign * (unit(rng) * 2.2 - 0.4);
    const double x = t.base.x() + dx;
    const double z = ground.height_at(x, dy) +
                     kGroundRoughness * (unit(rng) - 0.5) * 2.0;
    out.push_back({Vector3d(x, dy, z), {t.id, 1}});
  }

  // Canopy shell halves split by the outward normal.
  const int canopy_half = spec.canopy_points / 2;
  for (int i = 0; i < canopy_half; ++i) {
    const int l = i % 2;
    Vector3d dir(gauss(rng), gauss(rng), gauss(rng));
    dir.normalize();
    if (dir.y() * side_sign < 0.0) dir.y() = -dir.y();
    const double scale =
        1.0 + (unit(rng) - 0.5) * t.canopy_jitter / t.lobes[l].semi.mean();
    const Vector3d p =
        t.lobes[l].center + scale * t.lobes[l].semi.cwiseProduct(dir);
    out.push_back({p, {t.id, 2}});
  }

  if (spec.pole) {
    for (int i = 0; i < spec.pole_points; ++i) {
      const double phi = (unit(rng) - 0.5) * M_PI;
      const double h = unit(rng) * spec.pole_top;
      const Vector3d p = t.base + Vector3d(0.05, 0, 0) +
                         h * Vector3d::UnitZ() +
                         spec.pole_radius * (std::cos(phi) * Vector3d(0, side_sign, 0) +
                                             std::sin(phi) * Vector3d(1, 0, 0));
      out.push_back({p, {t.id, 3}});
    }
  }
  return out;
}

RigidTransform look_along_row(double s, double standoff, double height,
                              double side_sign) {
  // Camera-to-world: right/down/forward rows of the world-to-camera
  // rotation follow the usual x-right, y-down, z-forward convention.
  const Vector3d position(s, side_sign * standoff, height);
  const Vector3d forward(0, -side_sign, 0);
  const Vector3d right = forward.cross(Vector3d::UnitZ()).normalized();
  const Vector3d down = forward.cross(right);
  Matrix3d world_to_cam;
  world_to_cam.row(0) = right;
  world_to_cam.row(1) = down;
  world_to_cam.row(2) = forward;
  RigidTransform cam_to_world;
  cam_to_world.rotation = world_to_cam.transpose();
  cam_to_world.translation = position;
  return cam_to_world;
}

struct Trajectory {
  std::vector<RigidTransform> cam_to_world;  // believed (possibly drifted)
  std::vector<RigidTransform> warp;          // D_k, identity when no drift
  std::vector<double> arc;                   // station along the row
  int pass_frames = 0;                       // frames in the first pass
};

Trajectory make_trajectory(const SceneSpec& spec, SideTag side) {
  const double row_len = (spec.tree_count - 1) * spec.spacing;
  const double margin = 0.8;
  const double start = -margin, stop = row_len + margin;
  int n = spec.frames_per_side;
  if (n <= 0) {
    n = std::max(2, static_cast<int>(std::round((stop - start) /
                                                spec.frame_step)) + 1);
  }
  const double side_sign = side == SideTag::front ? 1.0 : -1.0;

  Trajectory traj;
  traj.pass_frames = n;
  for (int i = 0; i < n; ++i) {
    // The back side walks the row in the opposite direction.
    const double f = static_cast<double>(i) / (n - 1);
    const double s = side == SideTag::front ? start + f * (stop - start)
                                            : stop - f * (stop - start);
    traj.cam_to_world.push_back(
        look_along_row(s, spec.standoff, spec.camera_height, side_sign));
    traj.arc.push_back(s);
  }
  if (spec.loop_per_side) {
    for (int i = 0; i < n; ++i) {
      const double f = static_cast<double>(i) / (n - 1);
      const double s = side == SideTag::front ? stop - f * (stop - start)
                                              : start + f * (stop - start);
      traj.cam_to_world.push_back(look_along_row(
          s, spec.standoff + 0.15, spec.camera_height, side_sign));
      traj.arc.push_back(s);
    }
  }

  const bool drifted = side == (spec.drift_front ? SideTag::front
                                                 : SideTag::back);
  if (drifted && (spec.drift_lateral_per_10m != 0.0 ||
                  spec.drift_yaw_deg_per_10m != 0.0)) {
    DriftSpec drift;
    drift.lateral_per_10m = spec.drift_lateral_per_10m;
    drift.yaw_deg_per_10m = spec.drift_yaw_deg_per_10m;
    drift.lateral_dir = Vector3d(0, side_sign, 0);
    traj.cam_to_world = inject_drift(traj.cam_to_world, drift, &traj.warp);
  } else {
    traj.warp.assign(traj.cam_to_world.size(), RigidTransform());
  }
  return traj;
}

struct Visibility {
  bool ok = false;
  Vector2d pixel;
  Vector3d cam_point;
};

Visibility visible(const RigidTransform& world_to_cam, const Vector3d& p,
                   const Intrinsics& k) {
  Visibility v;
  v.cam_point = world_to_cam * p;
  if (v.cam_point.z() < 0.4 || v.cam_point.z() > 8.0) return v;
  v.pixel = project_point(v.cam_point, k);
  v.ok = v.pixel.x() >= 2 && v.pixel.x() <= kImageWidth - 2 &&
         v.pixel.y() >= 2 && v.pixel.y() <= kImageHeight - 2;
  return v;
}

ImageLine jitter_line(const ImageLine& line, double sigma_px,
                      std::mt19937_64& rng) {
  if (sigma_px <= 0.0) return line;
  std::normal_distribution<double> gauss(0, sigma_px);
  // Move two well-separated points on the line perpendicular to it.
  const Vector3d c = line.coeffs;
  const Vector2d n = Vector2d(c.x(), c.y()).normalized();
  const Vector2d d(-n.y(), n.x());
  const double ab = std::hypot(c.x(), c.y());
  const Vector2d foot = -c.z() / ab * n;
  const Vector2d p1 = foot + 200.0 * d + gauss(rng) * n;
  const Vector2d p2 = foot - 200.0 * d + gauss(rng) * n;
  return ImageLine::through_points(p1, p2);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t state = seed ^ (0x707fu + stream * 0x9e3779b97f4a7c15ULL);
  std::uint64_t z = splitmix64(state);
  return z ^ splitmix64(state);
}

std::vector<RigidTransform> inject_drift(
    const std::vector<RigidTransform>& cam_to_world, const DriftSpec& drift,
    std::vector<RigidTransform>* warps) {
  if (cam_to_world.size() < 2) {
    throw Error(ErrorCode::insufficient_data,
                "inject_drift: need at least two frames");
  }
  std::vector<RigidTransform> out;
  out.reserve(cam_to_world.size());
  if (warps) warps->clear();

  const Vector3d pivot = cam_to_world.front().translation;
  double arc = 0.0;
  for (size_t i = 0; i < cam_to_world.size(); ++i) {
    if (i > 0) {
      arc += (cam_to_world[i].translation - cam_to_world[i - 1].translation)
                 .norm();
    }
    const double yaw = drift.yaw_deg_per_10m * M_PI / 180.0 * arc / 10.0;
    const double lat = drift.lateral_per_10m * arc / 10.0;
    // D = Rot(pivot, yaw about up) then lateral shift; frame 0 gets the
    // identity because arc = 0 there.
    RigidTransform rot;
    rot.rotation = rodrigues_exp(yaw * drift.up.normalized());
    rot.translation = pivot - rot.rotation * pivot;
    RigidTransform d = rot;
    d.translation += lat * drift.lateral_dir.normalized();
    out.push_back(d * cam_to_world[i]);
    if (warps) warps->push_back(d);
  }
  return out;
}

namespace {

struct SideBuild {
  SideData data;
  std::vector<PointLabel> labels;
  std::vector<RigidTransform> traj_side;  // cam-to-world in the side frame
  std::vector<Vector3d> cloud_true_row;   // true positions, row frame
};

CameraRig default_rig() {
  CameraRig rig;
  rig.rgb = {500.0, 500.0, 320.0, 240.0};
  rig.infrared = {460.0, 460.0, 320.0, 240.0};
  rig.rgb_to_ir.rotation = rodrigues_exp(Vector3d(0.0, 0.003, 0.0));
  rig.rgb_to_ir.translation = Vector3d(-0.05, 0.0, 0.0);
  return rig;
}

SideBuild build_side(const SceneSpec& spec, SideTag side,
                     const std::vector<TreeGeometry>& trees,
                     const Ground& ground) {
  const Trajectory traj = make_trajectory(spec, side);
  const RigidTransform side_from_row = traj.cam_to_world.front().inverse();

  SideBuild b;
  b.data.tag = side;
  b.data.input.tag = side;
  b.data.input.rig = default_rig();
  b.data.input.frame_count = static_cast<int>(traj.cam_to_world.size());
  const Intrinsics k = b.data.input.rig.rgb;

  for (size_t f = 0; f < traj.cam_to_world.size(); ++f) {
    b.traj_side.push_back(side_from_row * traj.cam_to_world[f]);
    if (f + 1 < traj.cam_to_world.size()) {
      b.data.input.pairs.push_back(
          {static_cast<int>(f), static_cast<int>(f + 1)});
    }
  }

  auto nearest_frame_in = [&](const Vector3d& p, int lo, int hi) {
    int best = lo;
    double best_d = std::numeric_limits<double>::infinity();
    for (int f = lo; f < hi; ++f) {
      const double d = (traj.cam_to_world[f].translation - p).norm();
      if (d < best_d) {
        best_d = d;
        best = f;
      }
    }
    return best;
  };
  // Cloud points and first-pass tracks anchor their drift warp at the
  // nearest first-pass frame.
  auto nearest_frame = [&](const Vector3d& p) {
    return nearest_frame_in(p, 0, traj.pass_frames);
  };

  // Per-tree points, generated from independent substreams (safe to run
  // per-tree in parallel; assembled in tree order).
  std::vector<std::vector<RawPoint>> per_tree(trees.size());
  par::for_index(static_cast<std::int64_t>(trees.size()), [&](std::int64_t i) {
    per_tree[i] = tree_points(spec, trees[i], ground, side);
  });

  // Warp + measurement noise; each point is measured once from its anchor
  // frame and stored in the side frame.
  std::uint64_t mseed = derive_seed(spec.seed, side == SideTag::back ? 3 : 2);
  std::mt19937_64 mrng(mseed);
  std::normal_distribution<double> gauss(0, 1);
  std::uniform_real_distribution<double> unit(0, 1);

  std::vector<std::vector<int>> tree_trunk_cloud_ids(trees.size());
  std::vector<std::vector<int>> tree_cloud_ids(trees.size());
  std::vector<Vector3d> warped;  // measurement targets, row frame

  for (size_t ti = 0; ti < per_tree.size(); ++ti) {
    for (const auto& rp : per_tree[ti]) {
      const int anchor = nearest_frame(rp.p);
      Vector3d target = traj.warp[anchor] * rp.p;
      if (rp.label.cls == 0 && spec.trunk_radial_bias != 0.0) {
        // Warped trunk axis for the radial direction.
        const TreeGeometry& t = trees[ti];
        const Vector3d axis_w = traj.warp[anchor].rotation * t.axis;
        const Vector3d base_w = traj.warp[anchor] * t.base;
        Vector3d radial = target - base_w;
        radial -= axis_w.dot(radial) * axis_w;
        if (radial.norm() > 1e-9) {
          target += spec.trunk_radial_bias * radial.normalized();
        }
      }
      Vector3d cam = traj.cam_to_world[anchor].inverse() * target;
      if (spec.depth_sigma > 0.0) {
        cam += spec.depth_sigma * gauss(mrng) * cam.normalized();
      }
      const Vector3d side_pt =
          b.traj_side[anchor] * cam;  // side frame position
      const int cloud_id = static_cast<int>(b.data.cloud.size());
      b.data.cloud.push_back(side_pt);
      b.labels.push_back(rp.label);
      b.cloud_true_row.push_back(rp.p);
      warped.push_back(target);
      tree_cloud_ids[ti].push_back(cloud_id);
      if (rp.label.cls == 0) tree_trunk_cloud_ids[ti].push_back(cloud_id);
    }
  }

  // Feature landmarks: a deterministic stride over the cloud.
  const int budget = spec.landmarks_per_tree * spec.tree_count;
  const int stride =
      std::max<int>(1, static_cast<int>(b.data.cloud.size()) / budget);
  std::vector<int> landmark_cloud;
  for (size_t i = 0; i < b.data.cloud.size(); i += stride) {
    landmark_cloud.push_back(static_cast<int>(i));
  }

  const bool looped = spec.loop_per_side;
  // Tracks continue through the turn-around: landmarks still visible at
  // the junction keep their identity into the second pass, the rest come
  // back with fresh ids (like a real front end would re-detect them).
  const double junction_station =
      looped ? traj.arc[traj.pass_frames - 1] : 0.0;
  std::vector<std::vector<int>> seen_in_frame(traj.cam_to_world.size());
  for (size_t li = 0; li < landmark_cloud.size(); ++li) {
    const Vector3d& target = warped[landmark_cloud[li]];
    const bool tracked_through_turn =
        looped &&
        std::abs(target.x() - junction_station) < spec.visibility_range;
    // Re-detections in the second pass carry the warp accumulated by then,
    // which is exactly the inconsistency loop closure gets to repair.
    Vector3d revisit_target = target;
    if (looped && !tracked_through_turn) {
      const int anchor2 = nearest_frame_in(
          b.cloud_true_row[landmark_cloud[li]],
          traj.pass_frames, static_cast<int>(traj.cam_to_world.size()));
      revisit_target =
          traj.warp[anchor2] * b.cloud_true_row[landmark_cloud[li]];
    }
    std::mt19937_64 orng(derive_seed(spec.seed, 5000017 + li * 7 +
                                                    (side == SideTag::back)));
    std::normal_distribution<double> og(0, 1);
    std::uniform_real_distribution<double> ou(0, 1);
    for (size_t f = 0; f < traj.cam_to_world.size(); ++f) {
      const double along =
          std::abs(traj.cam_to_world[f].translation.x() - target.x());
      if (along > spec.visibility_range) continue;
      Observation obs;
      obs.frame = static_cast<int>(f);
      const bool second_pass =
          looped && f >= static_cast<size_t>(traj.pass_frames) &&
          !tracked_through_turn;
      obs.landmark = static_cast<int>(li) + (second_pass ? kLoopIdSplit : 0);
      const Vector3d& obs_target = second_pass ? revisit_target : target;
      const Visibility v =
          visible(traj.cam_to_world[f].inverse(), obs_target, k);
      if (!v.ok) continue;
      Vector2d pixel = v.pixel;
      if (spec.pixel_sigma > 0.0) {
        pixel += spec.pixel_sigma * Vector2d(og(orng), og(orng));
        pixel.x() = std::clamp(pixel.x(), 0.0, double(kImageWidth));
        pixel.y() = std::clamp(pixel.y(), 0.0, double(kImageHeight));
      }
      // Depth is sampled at the (noisy) pixel so the projection invariant
      // holds exactly on oracle data.
      double depth = v.cam_point.z();
      if (spec.depth_sigma > 0.0) depth += spec.depth_sigma * og(orng);
      if (spec.outlier_fraction > 0.0 && ou(orng) < spec.outlier_fraction) {
        depth *= 0.7 + 0.6 * ou(orng);
      }
      const Vector3d ray((pixel.x() - k.cx) / k.fx, (pixel.y() - k.cy) / k.fy,
                         1.0);
      obs.pixel = pixel;
      obs.point_cam = ray * depth;
      obs.valid_depth = true;
      b.data.input.observations.push_back(obs);
      seen_in_frame[f].push_back(static_cast<int>(li));
    }
  }

  // Loop candidates: matched stations of the two passes.
  if (looped) {
    const int n = traj.pass_frames;
    for (int i = 0; i < n; i += spec.loop_candidate_stride) {
      const int fa = i;
      const int fb = 2 * n - 1 - i;
      LoopCandidate cand;
      cand.frame_a = fa;
      cand.frame_b = fb;
      std::vector<int> in_a = seen_in_frame[fa];
      std::sort(in_a.begin(), in_a.end());
      for (int li : seen_in_frame[fb]) {
        if (std::binary_search(in_a.begin(), in_a.end(), li)) {
          cand.matches.emplace_back(li, li + kLoopIdSplit);
        }
      }
      if (cand.matches.size() >= 3) {
        b.data.input.loop_candidates.push_back(cand);
      }
    }
  }

  // Trunk annotations with silhouette boundary lines.
  for (size_t ti = 0; ti < trees.size(); ++ti) {
    const TreeGeometry& t = trees[ti];
    TrunkAnnotation ann;
    ann.id = static_cast<int>(ti);
    ann.side = side;

    const int f0 = nearest_frame(t.base + 0.3 * t.axis);
    const RigidTransform& warp = traj.warp[f0];
    Cylinder warped_cyl;
    warped_cyl.axis = warp.rotation * t.axis;
    warped_cyl.origin = side_from_row * (warp * (t.base + 0.5 * t.trunk_h * t.axis));
    warped_cyl.axis = (side_from_row.rotation * warped_cyl.axis).normalized();
    warped_cyl.radius = t.radius;
    warped_cyl.height = t.trunk_h;

    std::mt19937_64 arng(derive_seed(spec.seed, 900001 + ti * 13 +
                                                     (side == SideTag::back)));
    std::normal_distribution<double> ag(0, 1);
    const int spread = std::max(1, spec.annotated_frames_per_trunk / 2);
    for (int j = 0; j < spec.annotated_frames_per_trunk; ++j) {
      const int offset = (j - spread) * 2;
      const int f = std::clamp(f0 + offset, 0, b.data.input.frame_count - 1);
      const RigidTransform pose_side = b.traj_side[f].inverse();
      std::pair<ImageLine, ImageLine> lines;
      try {
        lines = project_cylinder_silhouette(warped_cyl, pose_side, k);
      } catch (const Error&) {
        continue;
      }
      TrunkAnnotationFrame af;
      af.frame = f;
      af.line_a = jitter_line(lines.first, spec.line_sigma_px, arng);
      af.line_b = jitter_line(lines.second, spec.line_sigma_px, arng);
      af.members = tree_trunk_cloud_ids[ti];
      for (size_t mi = 0; mi < af.members.size(); ++mi) {
        const Vector3d& target = warped[af.members[mi]];
        const Visibility v =
            visible(traj.cam_to_world[f].inverse(), target, k);
        if (!v.ok) continue;
        Vector3d cam = v.cam_point;
        if (spec.depth_sigma > 0.0) {
          cam += spec.depth_sigma * ag(arng) * cam.normalized();
        }
        af.member_obs.push_back({static_cast<int>(mi), cam});
      }
      if (!af.member_obs.empty()) ann.frames.push_back(af);
    }
    if (!ann.frames.empty()) b.data.trunks.push_back(ann);

    // Ground annotation: all cloud points near the trunk are candidates,
    // so plane fitting faces the realistic ground/canopy mix.
    GroundAnnotation ga;
    ga.id = static_cast<int>(ti);
    ga.side = side;
    ga.frame = f0;
    for (int ci : tree_cloud_ids[ti]) {
      const Vector3d& p = b.cloud_true_row[ci];
      const double horiz = std::hypot(p.x() - t.base.x(), p.y() - t.base.y());
      if (horiz <= 1.1 * spec.spacing) ga.candidates.push_back(ci);
    }
    for (size_t mi = 0; mi < ga.candidates.size(); ++mi) {
      if (b.labels[ga.candidates[mi]].cls != 1) continue;
      const Vector3d& target = warped[ga.candidates[mi]];
      const Visibility v =
          visible(traj.cam_to_world[ga.frame].inverse(), target, k);
      if (!v.ok) continue;
      Vector3d cam = v.cam_point;
      if (spec.depth_sigma > 0.0) {
        cam += spec.depth_sigma * ag(arng) * cam.normalized();
      }
      ga.member_obs.push_back({static_cast<int>(mi), cam});
    }
    if (ga.candidates.size() >= 3) b.data.grounds.push_back(ga);
  }

  return b;
}

}  // namespace

SceneData generate_scene(const SceneSpec& spec) {
  if (spec.tree_count < 1 || spec.spacing <= 0.0) {
    throw Error(ErrorCode::bad_spec, "generate_scene: tree_count/spacing");
  }
  if (spec.standoff < spec.canopy_ry.hi + 0.3) {
    throw Error(ErrorCode::bad_spec,
                "generate_scene: camera standoff is inside the canopy "
                "envelope");
  }
  if (spec.trunk_radius.lo <= 0 || spec.trunk_radius.hi < spec.trunk_radius.lo) {
    throw Error(ErrorCode::bad_spec, "generate_scene: trunk_radius range");
  }

  Ground ground;
  if (spec.ground_kind == "sloped") {
    const double a = spec.ground_slope_deg * M_PI / 180.0;
    ground.plane.normal = Vector3d(0, -std::sin(a), std::cos(a));
  } else if (spec.ground_kind == "flat") {
    ground.plane.normal = Vector3d::UnitZ();
  } else {
    throw Error(ErrorCode::bad_spec,
                "generate_scene: ground_kind must be flat or sloped");
  }
  ground.plane.origin = Vector3d::Zero();

  std::vector<TreeGeometry> trees;
  for (int i = 0; i < spec.tree_count; ++i) {
    trees.push_back(make_tree(spec, ground, i));
  }

  SceneData scene;
  scene.spec = spec;

  SideBuild front = build_side(spec, SideTag::front, trees, ground);
  SideBuild back = build_side(spec, SideTag::back, trees, ground);

  // True transform between the two side frames (frame 0 of each side).
  const RigidTransform w_f0 =
      make_trajectory(spec, SideTag::front).cam_to_world.front();
  const RigidTransform w_b0 =
      make_trajectory(spec, SideTag::back).cam_to_world.front();
  scene.truth.f_from_b = w_f0.inverse() * w_b0;

  for (int i = 0; i < spec.tree_count; ++i) {
    scene.correspondences.push_back({i, i, ObjectKind::cylinder});
  }
  for (int i = 0; i < spec.tree_count; ++i) {
    scene.correspondences.push_back({i, i, ObjectKind::plane});
  }

  // Per-tree truth from the true (unwarped) geometry and samples.
  for (const auto& t : trees) {
    TreeTruth truth;
    truth.id = t.id;
    truth.diameter = 2.0 * t.radius;
    truth.trunk_base = t.base;
    truth.trunk_axis = t.axis;
    double top = 0.0;
    std::vector<Vector3d> canopy_true;
    auto scan = [&](const SideBuild& sb) {
      for (size_t i = 0; i < sb.cloud_true_row.size(); ++i) {
        if (sb.labels[i].tree != t.id) continue;
        if (sb.labels[i].cls == 3) continue;  // poles excluded from height
        const double h = ground.plane.normal.dot(sb.cloud_true_row[i] -
                                                 ground.plane.origin) -
                         ground.plane.normal.dot(t.base - ground.plane.origin);
        top = std::max(top, h);
        if (sb.labels[i].cls == 2) canopy_true.push_back(sb.cloud_true_row[i]);
      }
    };
    scan(front);
    scan(back);
    truth.height = top;
    truth.volume_sample =
        canopy_true.size() >= 4 ? convex_hull_volume(canopy_true) : 0.0;
    scene.truth.trees.push_back(truth);
  }

  scene.front = std::move(front.data);
  scene.back = std::move(back.data);
  scene.truth.front_labels = std::move(front.labels);
  scene.truth.back_labels = std::move(back.labels);
  scene.truth.front_trajectory = std::move(front.traj_side);
  scene.truth.back_trajectory = std::move(back.traj_side);
  return scene;
}

SceneSpec SceneSpec::from_json_text(const std::string& text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::bad_spec,
                std::string("scene spec: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) {
    throw Error(ErrorCode::bad_spec, "scene spec: expected a JSON object");
  }
  SceneSpec spec;
  auto range = [&](const Json& v, const char* key) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() ||
        !v[1].is_number()) {
      throw Error(ErrorCode::bad_spec, std::string("scene spec: '") + key +
                                           "' must be [lo, hi]");
    }
    return ValueRange{v[0].get<double>(), v[1].get<double>()};
  };
  for (const auto& [key, value] : doc.items()) {
    try {
      if (key == "schema") continue;
      else if (key == "seed") spec.seed = value.get<std::uint64_t>();
      else if (key == "tree_count") spec.tree_count = value.get<int>();
      else if (key == "spacing") spec.spacing = value.get<double>();
      else if (key == "trunk_radius") spec.trunk_radius = range(value, key.c_str());
      else if (key == "trunk_height") spec.trunk_height = range(value, key.c_str());
      else if (key == "trunk_tilt_deg") spec.trunk_tilt_deg = value.get<double>();
      else if (key == "canopy_rx") spec.canopy_rx = range(value, key.c_str());
      else if (key == "canopy_ry") spec.canopy_ry = range(value, key.c_str());
      else if (key == "canopy_rz") spec.canopy_rz = range(value, key.c_str());
      else if (key == "canopy_jitter") spec.canopy_jitter = value.get<double>();
      else if (key == "canopy_points") spec.canopy_points = value.get<int>();
      else if (key == "trunk_points") spec.trunk_points = value.get<int>();
      else if (key == "ground_points") spec.ground_points = value.get<int>();
      else if (key == "ground_kind") spec.ground_kind = value.get<std::string>();
      else if (key == "ground_slope_deg") spec.ground_slope_deg = value.get<double>();
      else if (key == "pole") spec.pole = value.get<bool>();
      else if (key == "pole_radius") spec.pole_radius = value.get<double>();
      else if (key == "pole_top") spec.pole_top = value.get<double>();
      else if (key == "pole_points") spec.pole_points = value.get<int>();
      else if (key == "standoff") spec.standoff = value.get<double>();
      else if (key == "camera_height") spec.camera_height = value.get<double>();
      else if (key == "frame_step") spec.frame_step = value.get<double>();
      else if (key == "frames_per_side") spec.frames_per_side = value.get<int>();
      else if (key == "loop_per_side") spec.loop_per_side = value.get<bool>();
      else if (key == "loop_candidate_stride") spec.loop_candidate_stride = value.get<int>();
      else if (key == "landmarks_per_tree") spec.landmarks_per_tree = value.get<int>();
      else if (key == "visibility_range") spec.visibility_range = value.get<double>();
      else if (key == "pixel_sigma") spec.pixel_sigma = value.get<double>();
      else if (key == "depth_sigma") spec.depth_sigma = value.get<double>();
      else if (key == "outlier_fraction") spec.outlier_fraction = value.get<double>();
      else if (key == "trunk_radial_bias") spec.trunk_radial_bias = value.get<double>();
      else if (key == "line_sigma_px") spec.line_sigma_px = value.get<double>();
      else if (key == "drift_lateral_per_10m") spec.drift_lateral_per_10m = value.get<double>();
      else if (key == "drift_yaw_deg_per_10m") spec.drift_yaw_deg_per_10m = value.get<double>();
      else if (key == "drift_front") spec.drift_front = value.get<bool>();
      else if (key == "annotated_frames_per_trunk") spec.annotated_frames_per_trunk = value.get<int>();
      else {
        throw Error(ErrorCode::bad_spec,
                    "scene spec: unknown key '" + key + "'");
      }
    } catch (const Json::exception&) {
      throw Error(ErrorCode::bad_spec,
                  "scene spec: bad value for key '" + key + "'");
    }
  }
  if (spec.tree_count < 1 || spec.tree_count > 500) {
    throw Error(ErrorCode::bad_spec, "scene spec: tree_count out of range");
  }
  if (spec.frame_step <= 0 && spec.frames_per_side <= 0) {
    throw Error(ErrorCode::bad_spec, "scene spec: frame_step");
  }
  if (spec.pixel_sigma < 0 || spec.depth_sigma < 0 ||
      spec.outlier_fraction < 0 || spec.outlier_fraction > 1) {
    throw Error(ErrorCode::bad_spec, "scene spec: noise block out of range");
  }
  return spec;
}

SceneSpec SceneSpec::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::input_error, "scene spec: cannot open " + path);
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_json_text(buffer.str());
}

std::string SceneSpec::to_json_text() const {
  Json doc;
  doc["schema"] = "orchard/scene@1";
  doc["seed"] = seed;
  doc["tree_count"] = tree_count;
  doc["spacing"] = spacing;
  doc["trunk_radius"] = {trunk_radius.lo, trunk_radius.hi};
  doc["trunk_height"] = {trunk_height.lo, trunk_height.hi};
  doc["trunk_tilt_deg"] = trunk_tilt_deg;
  doc["canopy_rx"] = {canopy_rx.lo, canopy_rx.hi};
  doc["canopy_ry"] = {canopy_ry.lo, canopy_ry.hi};
  doc["canopy_rz"] = {canopy_rz.lo, canopy_rz.hi};
  doc["canopy_jitter"] = canopy_jitter;
  doc["canopy_points"] = canopy_points;
  doc["trunk_points"] = trunk_points;
  doc["ground_points"] = ground_points;
  doc["ground_kind"] = ground_kind;
  doc["ground_slope_deg"] = ground_slope_deg;
  doc["pole"] = pole;
  doc["pole_radius"] = pole_radius;
  doc["pole_top"] = pole_top;
  doc["pole_points"] = pole_points;
  doc["standoff"] = standoff;
  doc["camera_height"] = camera_height;
  doc["frame_step"] = frame_step;
  doc["frames_per_side"] = frames_per_side;
  doc["loop_per_side"] = loop_per_side;
  doc["loop_candidate_stride"] = loop_candidate_stride;
  doc["landmarks_per_tree"] = landmarks_per_tree;
  doc["visibility_range"] = visibility_range;
  doc["pixel_sigma"] = pixel_sigma;
  doc["depth_sigma"] = depth_sigma;
  doc["outlier_fraction"] = outlier_fraction;
  doc["trunk_radial_bias"] = trunk_radial_bias;
  doc["line_sigma_px"] = line_sigma_px;
  doc["drift_lateral_per_10m"] = drift_lateral_per_10m;
  doc["drift_yaw_deg_per_10m"] = drift_yaw_deg_per_10m;
  doc["drift_front"] = drift_front;
  doc["annotated_frames_per_trunk"] = annotated_frames_per_trunk;
  return doc.dump(2) + "\n";
}

}  // namespace orchard
