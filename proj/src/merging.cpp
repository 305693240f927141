#include "orchard/merging.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <set>

#include "orchard/residuals.hpp"

namespace orchard {

namespace {

struct CorrRefs {
  std::vector<std::pair<const FittedObject*, const FittedObject*>> cylinders;
  std::vector<std::pair<const FittedObject*, const FittedObject*>> planes;
};

CorrRefs gather(const std::vector<ObjectCorrespondence>& corr,
                const std::vector<FittedObject>& front_objects,
                const std::vector<FittedObject>& back_objects) {
  auto find = [](const std::vector<FittedObject>& objs, int id,
                 ObjectKind kind) -> const FittedObject* {
    for (const auto& o : objs) {
      if (o.id == id && o.kind == kind) return &o;
    }
    return nullptr;
  };
  CorrRefs refs;
  for (const auto& c : corr) {
    const FittedObject* f = find(front_objects, c.front_id, c.kind);
    const FittedObject* b = find(back_objects, c.back_id, c.kind);
    if (!f || !b) {
      throw Error(ErrorCode::degenerate_configuration,
                  "merge: correspondence references a missing fitted object");
    }
    if (c.kind == ObjectKind::cylinder) refs.cylinders.emplace_back(f, b);
    else refs.planes.emplace_back(f, b);
  }
  if (refs.cylinders.size() < 2 || refs.planes.empty()) {
    throw Error(ErrorCode::degenerate_configuration,
                "merge: need at least two trunk and one ground "
                "correspondence");
  }
  return refs;
}

// Direction pairs with the back side flipped onto the front side's
// hemisphere after a rough normal-based alignment.
struct AlignedPairs {
  std::vector<std::pair<Vector3d, Vector3d>> directions;  // (back, front)
  std::vector<std::pair<Vector3d, Vector3d>> cyl_origins;
  std::vector<Vector3d> cyl_axes_front;
  std::vector<std::pair<Vector3d, Vector3d>> plane_origins;
  std::vector<Vector3d> plane_normals_front;
};

AlignedPairs align_pairs(const CorrRefs& refs) {
  Vector3d front_n = Vector3d::Zero(), back_n = Vector3d::Zero();
  for (const auto& [f, b] : refs.planes) {
    front_n += f->plane.normal;
    back_n += b->plane.normal;
  }
  const Matrix3d rough = Eigen::Quaterniond::FromTwoVectors(
                             back_n.normalized(), front_n.normalized())
                             .toRotationMatrix();

  AlignedPairs out;
  for (const auto& [f, b] : refs.cylinders) {
    Vector3d nb = b->cylinder.axis;
    if ((rough * nb).dot(f->cylinder.axis) < 0) nb = -nb;
    out.directions.emplace_back(nb, f->cylinder.axis);
    out.cyl_origins.emplace_back(b->cylinder.origin, f->cylinder.origin);
    out.cyl_axes_front.push_back(f->cylinder.axis);
  }
  for (const auto& [f, b] : refs.planes) {
    Vector3d nb = b->plane.normal;
    if ((rough * nb).dot(f->plane.normal) < 0) nb = -nb;
    out.directions.emplace_back(nb, f->plane.normal);
    out.plane_origins.emplace_back(b->plane.origin, f->plane.origin);
    out.plane_normals_front.push_back(f->plane.normal);
  }
  return out;
}

}  // namespace

RigidTransform solve_initial_transform(
    const std::vector<ObjectCorrespondence>& corr,
    const std::vector<FittedObject>& front_objects,
    const std::vector<FittedObject>& back_objects) {
  const CorrRefs refs = gather(corr, front_objects, back_objects);
  const AlignedPairs pairs = align_pairs(refs);

  const int rows = 3 * static_cast<int>(pairs.directions.size()) +
                   3 * static_cast<int>(pairs.cyl_origins.size()) +
                   static_cast<int>(pairs.plane_origins.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(rows, 12);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(rows);
  int row = 0;

  // x stacks the three columns of R, then t. (R n)_k = sum_j n_j r_jk.
  for (const auto& [nb, nf] : pairs.directions) {
    for (int k = 0; k < 3; ++k) {
      for (int j = 0; j < 3; ++j) a(row + k, 3 * j + k) = nb[j];
      b(row + k) = nf[k];
    }
    row += 3;
  }
  // [n_f]x (R o_b + t) = [n_f]x o_f, three rows of rank two per cylinder.
  for (size_t i = 0; i < pairs.cyl_origins.size(); ++i) {
    const auto& [ob, of] = pairs.cyl_origins[i];
    const Matrix3d nx = so3_hat(pairs.cyl_axes_front[i]);
    for (int k = 0; k < 3; ++k) {
      for (int m = 0; m < 3; ++m) {
        for (int j = 0; j < 3; ++j) a(row + k, 3 * j + m) += nx(k, m) * ob[j];
        a(row + k, 9 + m) = nx(k, m);
      }
      b(row + k) = (nx * of)[k];
    }
    row += 3;
  }
  // n_f . (R o_b + t) = n_f . o_f, one row per plane.
  for (size_t i = 0; i < pairs.plane_origins.size(); ++i) {
    const auto& [ob, of] = pairs.plane_origins[i];
    const Vector3d& nf = pairs.plane_normals_front[i];
    for (int m = 0; m < 3; ++m) {
      for (int j = 0; j < 3; ++j) a(row, 3 * j + m) += nf[m] * ob[j];
      a(row, 9 + m) = nf[m];
    }
    b(row) = nf.dot(of);
    row += 1;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (sv(sv.size() - 1) <= 1e-9 * sv(0)) {
    throw Error(ErrorCode::degenerate_configuration,
                "solve_initial_transform: under-constrained system (are the "
                "axes and the plane normal independent?)");
  }
  const Eigen::VectorXd x = svd.solve(b);

  Matrix3d raw;
  for (int j = 0; j < 3; ++j) {
    raw.col(j) = Vector3d(x(3 * j), x(3 * j + 1), x(3 * j + 2));
  }
  const Matrix3d rot = nearest_rotation(raw);

  // Translation re-solved with the projected rotation held fixed, using
  // only the origin constraints.
  const int t_rows = 3 * static_cast<int>(pairs.cyl_origins.size()) +
                     static_cast<int>(pairs.plane_origins.size());
  Eigen::MatrixXd at = Eigen::MatrixXd::Zero(t_rows, 3);
  Eigen::VectorXd bt = Eigen::VectorXd::Zero(t_rows);
  row = 0;
  for (size_t i = 0; i < pairs.cyl_origins.size(); ++i) {
    const auto& [ob, of] = pairs.cyl_origins[i];
    const Matrix3d nx = so3_hat(pairs.cyl_axes_front[i]);
    at.block<3, 3>(row, 0) = nx;
    bt.segment<3>(row) = nx * (of - rot * ob);
    row += 3;
  }
  for (size_t i = 0; i < pairs.plane_origins.size(); ++i) {
    const auto& [ob, of] = pairs.plane_origins[i];
    const Vector3d& nf = pairs.plane_normals_front[i];
    at.row(row) = nf.transpose();
    bt(row) = nf.dot(of - rot * ob);
    row += 1;
  }
  const Vector3d t =
      at.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(bt);
  return {rot, t};
}

RigidTransform refine_transform(
    const std::vector<ObjectCorrespondence>& corr,
    const std::vector<FittedObject>& front_objects,
    const std::vector<FittedObject>& back_objects,
    const RigidTransform& t_init) {
  const CorrRefs refs = gather(corr, front_objects, back_objects);
  const AlignedPairs pairs = align_pairs(refs);

  Problem problem;
  const int pose = problem.add_pose_block(t_init);
  for (const auto& [nb, nf] : pairs.directions) {
    problem.add_residual(direction_align_residual(pose, nb, nf));
  }
  for (size_t i = 0; i < pairs.cyl_origins.size(); ++i) {
    problem.add_residual(cylinder_origin_align_residual(
        pose, pairs.cyl_origins[i].first, pairs.cyl_axes_front[i],
        pairs.cyl_origins[i].second));
  }
  for (size_t i = 0; i < pairs.plane_origins.size(); ++i) {
    problem.add_residual(plane_origin_align_residual(
        pose, pairs.plane_origins[i].first, pairs.plane_normals_front[i],
        pairs.plane_origins[i].second));
  }
  LmOptions opts;
  opts.use_schur = false;
  lm_solve(problem, opts);
  return problem.pose(pose);
}

namespace {

RigidTransform object_pose_from_axis(const Vector3d& primary,
                                     const Vector3d& origin, bool axis_is_x) {
  Vector3d u, w;
  unit_vector_basis(primary, u, w);
  Matrix3d r;
  if (axis_is_x) {
    r.row(0) = primary.transpose();
    r.row(1) = u.transpose();
    r.row(2) = w.transpose();
  } else {
    r.row(0) = u.transpose();
    r.row(1) = w.transpose();
    r.row(2) = primary.transpose();
  }
  return {r, -(r * origin)};
}

void apply_transform_to_back(MergedModel& merged,
                             const ReconstructionSide& back_original,
                             const RigidTransform& t) {
  merged.back = back_original;
  const RigidTransform t_inv = t.inverse();
  for (auto& frame : merged.back.frames) {
    frame.pose = frame.pose * t_inv;
  }
  for (auto& lm : merged.back.landmarks) {
    lm.position = t * lm.position;
  }
}

}  // namespace

StageMetrics measure_trunk_misalignment(const MergedModel& merged,
                                        const std::string& stage,
                                        const PipelineConfig& cfg) {
  StageMetrics metrics;
  metrics.stage = stage;
  PipelineConfig fit_cfg = cfg;
  fit_cfg.ransac_max_iters = std::min(cfg.ransac_max_iters, 150);

  int ci = 0;
  for (const auto& obj : merged.objects) {
    if (obj.kind != ObjectKind::cylinder) continue;
    std::vector<Vector3d> front_pts, back_pts;
    for (const auto& m : obj.members) {
      const auto& side = m.side == SideTag::front ? merged.front : merged.back;
      const Vector3d world = side.frames[m.frame].pose.inverse() * m.point_cam;
      (m.side == SideTag::front ? front_pts : back_pts).push_back(world);
    }
    if (front_pts.size() < 9 || back_pts.size() < 9) {
      ++ci;
      continue;
    }
    const Cylinder cf =
        fit_trunk_cylinder(front_pts, {}, 0.0, 1234 + ci, fit_cfg);
    const Cylinder cb =
        fit_trunk_cylinder(back_pts, {}, 0.0, 4321 + ci, fit_cfg);
    Vector3d nb = cb.axis;
    if (nb.dot(cf.axis) < 0) nb = -nb;
    const Vector3d mean_axis = (cf.axis + nb).normalized();
    Vector3d delta = cb.origin - cf.origin;
    delta -= mean_axis.dot(delta) * mean_axis;
    metrics.trunk_offsets.push_back(delta.norm());
    ++ci;
  }
  if (!metrics.trunk_offsets.empty()) {
    metrics.mean_offset =
        std::accumulate(metrics.trunk_offsets.begin(),
                        metrics.trunk_offsets.end(), 0.0) /
        metrics.trunk_offsets.size();
    metrics.max_offset = *std::max_element(metrics.trunk_offsets.begin(),
                                           metrics.trunk_offsets.end());
  }
  return metrics;
}

SolveReport semantic_bundle_adjust(MergedModel& merged, double lambda_s,
                                   const PipelineConfig& cfg) {
  Problem problem;

  std::vector<int> front_pose(merged.front.frames.size());
  std::vector<int> back_pose(merged.back.frames.size());
  for (size_t f = 0; f < merged.front.frames.size(); ++f) {
    front_pose[f] = problem.add_pose_block(merged.front.frames[f].pose);
  }
  problem.set_constant(front_pose[0]);
  for (size_t f = 0; f < merged.back.frames.size(); ++f) {
    back_pose[f] = problem.add_pose_block(merged.back.frames[f].pose);
  }

  auto add_side = [&](ReconstructionSide& side,
                      const std::vector<int>& pose_ids) {
    std::vector<int> lm_ids(side.landmarks.size(), -1);
    std::vector<int> obs_count(side.landmarks.size(), 0);
    const Matrix3d k_i = side.rig.infrared.matrix();
    for (const auto& obs : side.observations) {
      const int li = side.landmark_of(obs.landmark);
      if (li >= 0) ++obs_count[li];
    }
    for (size_t l = 0; l < side.landmarks.size(); ++l) {
      if (obs_count[l] == 0) continue;  // unobserved: leave it untouched
      const Vector3d& p = side.landmarks[l].position;
      lm_ids[l] = problem.add_block({p.x(), p.y(), p.z()}, nullptr, true);
    }
    for (const auto& obs : side.observations) {
      const int li = side.landmark_of(obs.landmark);
      if (li < 0 || lm_ids[li] < 0) continue;
      problem.add_residual(reprojection_residual(
          pose_ids[obs.frame], lm_ids[li], side.rig.rgb, obs.pixel,
          RobustLoss::Huber(cfg.huber_delta_px)));
      if (obs.valid_depth) {
        if (cfg.ei_normalized) {
          problem.add_residual(infrared_residual_normalized(
              pose_ids[obs.frame], lm_ids[li], k_i, side.rig.rgb_to_ir,
              obs.point_cam, RobustLoss::Huber(cfg.huber_delta_px)));
        } else {
          problem.add_residual(infrared_residual(
              pose_ids[obs.frame], lm_ids[li], k_i, side.rig.rgb_to_ir,
              obs.point_cam, RobustLoss::Huber(cfg.huber_delta_ei)));
        }
      }
    }
    return lm_ids;
  };
  const std::vector<int> front_lm = add_side(merged.front, front_pose);
  const std::vector<int> back_lm = add_side(merged.back, back_pose);

  std::vector<int> object_block(merged.objects.size(), -1);
  if (lambda_s > 0.0) {
    for (size_t oi = 0; oi < merged.objects.size(); ++oi) {
      auto& obj = merged.objects[oi];
      if (obj.members.size() < 10) {
        std::cerr << "semantic_bundle_adjust: object " << obj.front_id
                  << " has fewer than 10 member observations\n";
      }
      bool has_front = false, has_back = false;
      for (const auto& m : obj.members) {
        (m.side == SideTag::front ? has_front : has_back) = true;
      }
      if (!has_front || !has_back) {
        std::cerr << "semantic_bundle_adjust: one-sided object "
                  << obj.front_id << " (" // still optimized
                  << (obj.kind == ObjectKind::cylinder ? "cylinder" : "plane")
                  << ")\n";
      }
      const auto kind = obj.kind == ObjectKind::cylinder
                            ? ObjectPoseManifold::Kind::cylinder
                            : ObjectPoseManifold::Kind::plane;
      std::vector<double> x(12);
      pose_to_array(obj.pose, x.data());
      object_block[oi] =
          problem.add_block(std::move(x), std::make_shared<ObjectPoseManifold>(kind));
      const double weight =
          cfg.lambda_s_per_object && !obj.members.empty()
              ? lambda_s / static_cast<double>(obj.members.size())
              : lambda_s;
      for (const auto& m : obj.members) {
        const int cam = m.side == SideTag::front ? front_pose[m.frame]
                                                 : back_pose[m.frame];
        problem.add_residual(semantic_point_residual(
            object_block[oi], cam, kind, obj.shape, m.point_cam, weight,
            RobustLoss::Huber(cfg.huber_delta_3d)));
      }
    }
  }

  LmOptions opts;
  opts.max_iterations = cfg.sba_iterations;
  const SolveReport report = lm_solve(problem, opts);

  for (size_t f = 0; f < merged.front.frames.size(); ++f) {
    merged.front.frames[f].pose = problem.pose(front_pose[f]);
  }
  for (size_t f = 0; f < merged.back.frames.size(); ++f) {
    merged.back.frames[f].pose = problem.pose(back_pose[f]);
  }
  for (size_t l = 0; l < merged.front.landmarks.size(); ++l) {
    if (front_lm[l] < 0) continue;
    const auto& v = problem.values(front_lm[l]);
    merged.front.landmarks[l].position = Vector3d(v[0], v[1], v[2]);
  }
  for (size_t l = 0; l < merged.back.landmarks.size(); ++l) {
    if (back_lm[l] < 0) continue;
    const auto& v = problem.values(back_lm[l]);
    merged.back.landmarks[l].position = Vector3d(v[0], v[1], v[2]);
  }
  for (size_t oi = 0; oi < merged.objects.size(); ++oi) {
    if (object_block[oi] >= 0) {
      merged.objects[oi].pose = problem.pose(object_block[oi]);
    }
  }
  return report;
}

namespace {

// Member observations of one object on one side, filtered to the points
// that actually lie on the fitted geometry in the side frame.
void collect_trunk_members(const SideModel& side, const TrunkAnnotation& ann,
                           const FittedObject& fitted, SideTag tag,
                           double keep_band,
                           std::vector<SemanticObjectState::Member>* out) {
  for (const auto& frame : ann.frames) {
    for (const auto& mo : frame.member_obs) {
      const int cloud_id = frame.members[mo.member];
      if (point_cylinder_distance(side.cloud[cloud_id], fitted.cylinder) >
          keep_band) {
        continue;
      }
      out->push_back({tag, frame.frame, mo.point_cam});
    }
  }
}

void collect_ground_members(const SideModel& side, const GroundAnnotation& ann,
                            const FittedObject& fitted, SideTag tag,
                            std::vector<SemanticObjectState::Member>* out) {
  for (const auto& mo : ann.member_obs) {
    const int cloud_id = ann.candidates[mo.member];
    if (std::abs(plane_signed_distance(side.cloud[cloud_id], fitted.plane)) >
        fitted.plane.slab_halfwidth) {
      continue;
    }
    out->push_back({tag, ann.frame, mo.point_cam});
  }
}

const TrunkAnnotation* find_trunk_annotation(const SideModel& side, int id) {
  for (const auto& a : side.trunks) {
    if (a.id == id) return &a;
  }
  return nullptr;
}

const GroundAnnotation* find_ground_annotation(const SideModel& side, int id) {
  for (const auto& a : side.grounds) {
    if (a.id == id) return &a;
  }
  return nullptr;
}

const Plane* ground_for_tree(const std::vector<FittedObject>& objects,
                             int id) {
  for (const auto& o : objects) {
    if (o.kind == ObjectKind::plane && o.id == id) return &o.plane;
  }
  for (const auto& o : objects) {
    if (o.kind == ObjectKind::plane) return &o.plane;
  }
  return nullptr;
}

}  // namespace

std::vector<int> extract_trunk_slice(const std::vector<Vector3d>& points,
                                     const Plane& ground, double h0,
                                     double dh) {
  std::vector<int> out;
  for (size_t i = 0; i < points.size(); ++i) {
    const double h = plane_signed_distance(points[i], ground);
    if (h >= h0 && h <= h0 + dh) out.push_back(static_cast<int>(i));
  }
  return out;
}

SideModel assemble_side_model(ReconstructionSide recon,
                              std::vector<Vector3d> cloud,
                              std::vector<TrunkAnnotation> trunks,
                              std::vector<GroundAnnotation> grounds,
                              const PipelineConfig& cfg) {
  SideModel side;
  side.recon = std::move(recon);
  side.cloud = std::move(cloud);
  side.trunks = std::move(trunks);
  side.grounds = std::move(grounds);
  const SideTag tag = side.recon.tag;

  for (const auto& ann : side.trunks) {
    std::vector<Vector3d> points;
    std::vector<int> cloud_ids;
    std::set<int> seen;
    for (const auto& frame : ann.frames) {
      for (int id : frame.members) {
        if (!seen.insert(id).second) continue;
        points.push_back(side.cloud[id]);
        cloud_ids.push_back(id);
      }
    }
    std::vector<AnnotatedView> views;
    for (const auto& frame : ann.frames) {
      AnnotatedView v;
      v.pose = side.recon.frames[frame.frame].pose;
      v.intrinsics = side.recon.rig.rgb;
      v.line_a = frame.line_a;
      v.line_b = frame.line_b;
      v.side = tag;
      views.push_back(v);
    }
    std::vector<int> inliers;
    FittedObject obj;
    obj.id = ann.id;
    obj.kind = ObjectKind::cylinder;
    obj.cylinder = fit_trunk_cylinder(points, views, cfg.lambda,
                                      cfg.seed + 17 * ann.id, cfg, &inliers);
    double rms = 0.0;
    for (int i : inliers) {
      const double e = point_cylinder_distance(points[i], obj.cylinder);
      rms += e * e;
    }
    obj.rms = inliers.empty() ? 0.0 : std::sqrt(rms / inliers.size());
    for (int i : inliers) obj.support.push_back(cloud_ids[i]);
    side.objects.push_back(std::move(obj));
  }

  for (const auto& ann : side.grounds) {
    std::vector<Vector3d> points;
    for (int id : ann.candidates) points.push_back(side.cloud[id]);
    // Prior: the fitted trunk axis of the same tree (nearest otherwise).
    // The quadric axis carries no sign, so orient it with the camera-up
    // of the annotated frame (the rig is held upright).
    const Vector3d up_hint =
        side.recon.frames[ann.frame].pose.rotation.transpose() *
        Vector3d(0, -1, 0);
    Vector3d prior = up_hint;
    const FittedObject* trunk = side.object(ann.id, ObjectKind::cylinder);
    if (!trunk) {
      for (const auto& o : side.objects) {
        if (o.kind == ObjectKind::cylinder) {
          trunk = &o;
          break;
        }
      }
    }
    if (trunk) {
      prior = trunk->cylinder.axis;
      if (prior.dot(up_hint) < 0) prior = -prior;
    }
    std::vector<int> inliers;
    FittedObject obj;
    obj.id = ann.id;
    obj.kind = ObjectKind::plane;
    obj.plane = fit_ground_plane_with_prior(points, prior, cfg.ground_t_s,
                                            cfg.seed + 23 * ann.id, cfg,
                                            &inliers);
    double rms = 0.0;
    for (int i : inliers) {
      const double e = plane_signed_distance(points[i], obj.plane);
      rms += e * e;
    }
    obj.rms = inliers.empty() ? 0.0 : std::sqrt(rms / inliers.size());
    for (int i : inliers) obj.support.push_back(ann.candidates[i]);
    side.objects.push_back(std::move(obj));
  }
  return side;
}

MergedModel merge_sides(const SideModel& front, const SideModel& back,
                        const std::vector<ObjectCorrespondence>& corr,
                        const PipelineConfig& cfg) {
  const RigidTransform t0 =
      solve_initial_transform(corr, front.objects, back.objects);
  const RigidTransform t1 =
      refine_transform(corr, front.objects, back.objects, t0);

  MergedModel merged;
  merged.front = front.recon;
  merged.correspondences = corr;

  // Object states and member observations; shapes come from the two-sided
  // trunk fits below (cylinders) and the slab threshold (planes).
  auto build_objects = [&](const RigidTransform& t) {
    merged.objects.clear();
    merged.trunk_fits.clear();
    for (const auto& c : corr) {
      const FittedObject* fo = front.object(c.front_id, c.kind);
      const FittedObject* bo = back.object(c.back_id, c.kind);
      SemanticObjectState obj;
      obj.front_id = c.front_id;
      obj.back_id = c.back_id;
      obj.kind = c.kind;
      if (c.kind == ObjectKind::cylinder) {
        const TrunkAnnotation* fa = find_trunk_annotation(front, c.front_id);
        const TrunkAnnotation* ba = find_trunk_annotation(back, c.back_id);
        if (fa) {
          collect_trunk_members(front, *fa, *fo, SideTag::front,
                                4.0 * cfg.cylinder_inlier_threshold,
                                &obj.members);
        }
        if (ba) {
          collect_trunk_members(back, *ba, *bo, SideTag::back,
                                4.0 * cfg.cylinder_inlier_threshold,
                                &obj.members);
        }

        // Shared-radius fit on the slice points of both sides, expressed
        // in the merged frame.
        const Plane* fg = ground_for_tree(front.objects, c.front_id);
        const Plane* bg = ground_for_tree(back.objects, c.back_id);
        std::vector<Vector3d> fpts, bpts;
        const double h0 = fa && fa->slice_h0 >= 0 ? fa->slice_h0 : cfg.slice_h0;
        const double dh = fa && fa->slice_dh > 0 ? fa->slice_dh : cfg.slice_dh;
        for (int i : fo->support) {
          const Vector3d& p = front.cloud[i];
          const double h = fg ? plane_signed_distance(p, *fg) : h0;
          if (h >= h0 && h <= h0 + dh) fpts.push_back(p);
        }
        for (int i : bo->support) {
          const Vector3d& p = back.cloud[i];
          const double h = bg ? plane_signed_distance(p, *bg) : h0;
          if (h >= h0 && h <= h0 + dh) bpts.push_back(t * p);
        }
        std::vector<AnnotatedView> views;
        auto add_views = [&](const TrunkAnnotation* ann,
                             const ReconstructionSide& recon, SideTag tag,
                             bool transform) {
          if (!ann) return;
          for (const auto& frame : ann->frames) {
            AnnotatedView view;
            view.pose = transform
                            ? recon.frames[frame.frame].pose * t.inverse()
                            : recon.frames[frame.frame].pose;
            view.intrinsics = recon.rig.rgb;
            view.line_a = frame.line_a;
            view.line_b = frame.line_b;
            view.side = tag;
            views.push_back(view);
          }
        };
        add_views(fa, front.recon, SideTag::front, false);
        add_views(ba, back.recon, SideTag::back, true);

        TwoSidedTrunkFit fit;
        if (fpts.size() >= 9 && bpts.size() >= 9) {
          fit = fit_trunk_two_sided(fpts, bpts, views, cfg.lambda,
                                    cfg.seed + 31 * c.front_id, cfg);
        } else {
          // Not enough slice points: fall back to the per-side fits.
          fit.front = fo->cylinder;
          fit.back = bo->cylinder;
          fit.back.origin = t * fit.back.origin;
          fit.back.axis = t.rotation * fit.back.axis;
          fit.diameter = fo->cylinder.radius + bo->cylinder.radius;
        }
        merged.trunk_fits.push_back(fit);

        Vector3d axis_sum = fit.front.axis;
        axis_sum += fit.front.axis.dot(fit.back.axis) >= 0 ? fit.back.axis
                                                           : -fit.back.axis;
        const Vector3d axis = axis_sum.normalized();
        const Vector3d origin = 0.5 * (fit.front.origin + fit.back.origin);
        obj.pose = object_pose_from_axis(axis, origin, true);
        obj.shape = 0.5 * fit.diameter;
      } else {
        const GroundAnnotation* fa = find_ground_annotation(front, c.front_id);
        const GroundAnnotation* ba = find_ground_annotation(back, c.back_id);
        if (fa) collect_ground_members(front, *fa, *fo, SideTag::front,
                                       &obj.members);
        if (ba) collect_ground_members(back, *ba, *bo, SideTag::back,
                                       &obj.members);
        Plane bp = bo->plane;
        bp.normal = t.rotation * bp.normal;
        bp.origin = t * bp.origin;
        Vector3d normal = fo->plane.normal;
        if (normal.dot(bp.normal) < 0) normal = -normal;
        normal = (normal + bp.normal).normalized();
        const Vector3d origin = 0.5 * (fo->plane.origin + bp.origin);
        obj.pose = object_pose_from_axis(normal, origin, false);
        obj.shape = std::max(fo->plane.slab_halfwidth, bp.slab_halfwidth);
      }
      merged.objects.push_back(std::move(obj));
    }
  };

  // Stage 1: closed-form alignment.
  apply_transform_to_back(merged, back.recon, t0);
  merged.f_from_b = t0;
  build_objects(t0);
  merged.metrics.push_back(measure_trunk_misalignment(merged, "initial", cfg));

  // Stage 2: LM-refined transform.
  apply_transform_to_back(merged, back.recon, t1);
  merged.f_from_b = t1;
  build_objects(t1);
  merged.metrics.push_back(measure_trunk_misalignment(merged, "refined", cfg));

  // Stage 3: semantic bundle adjustment.
  semantic_bundle_adjust(merged, cfg.lambda_s, cfg);
  merged.metrics.push_back(measure_trunk_misalignment(merged, "sba", cfg));

  merged.cloud = front.cloud;
  merged.front_point_count = static_cast<int>(front.cloud.size());
  for (const auto& p : back.cloud) merged.cloud.push_back(t1 * p);
  return merged;
}

}  // namespace orchard
