#include "orchard/reconstruction.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <map>
#include <numeric>

#include "orchard/ransac.hpp"
#include "orchard/residuals.hpp"

namespace orchard {

void ReconstructionSide::rebuild_landmark_index() {
  landmark_index.clear();
  for (size_t i = 0; i < landmarks.size(); ++i) {
    landmark_index[landmarks[i].id] = static_cast<int>(i);
  }
}

namespace {

// Rigid fit a ~ R*b + t over the indexed matches. Collinear supports give
// a rank-1 cross-covariance and are reported as degenerate.
std::optional<RigidTransform> kabsch(
    const std::vector<std::pair<Vector3d, Vector3d>>& matches,
    const std::vector<int>& idx) {
  Vector3d ca = Vector3d::Zero(), cb = Vector3d::Zero();
  for (int i : idx) {
    ca += matches[i].first;
    cb += matches[i].second;
  }
  ca /= idx.size();
  cb /= idx.size();
  Matrix3d h = Matrix3d::Zero();
  for (int i : idx) {
    h += (matches[i].second - cb) * (matches[i].first - ca).transpose();
  }
  Eigen::JacobiSVD<Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  if (s(1) <= 1e-9 * std::max(s(0), 1e-300)) return std::nullopt;
  Matrix3d d = Matrix3d::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() > 0
                ? 1.0
                : -1.0;
  RigidTransform t;
  t.rotation = svd.matrixV() * d * svd.matrixU().transpose();
  t.translation = ca - t.rotation * cb;
  return t;
}

}  // namespace

PairwisePose estimate_pairwise_pose(
    const std::vector<std::pair<Vector3d, Vector3d>>& matches,
    double inlier_threshold, std::uint64_t seed, int max_iters) {
  if (matches.size() < 3) {
    throw Error(ErrorCode::insufficient_data,
                "estimate_pairwise_pose: need at least 3 matches");
  }
  RansacOptions opts;
  opts.seed = seed;
  opts.max_iters = max_iters;
  opts.inlier_threshold = inlier_threshold;

  auto fit = [&](const std::vector<int>& sample) {
    return kabsch(matches, sample);
  };
  auto residual = [&](const RigidTransform& t, int i) {
    return (matches[i].first - t * matches[i].second).norm();
  };
  auto accept = [](const RigidTransform&) { return true; };

  RansacResult<RigidTransform> res;
  try {
    res = ransac<RigidTransform>(static_cast<int>(matches.size()), 3, fit,
                                 residual, accept, opts);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::no_model_found) {
      throw Error(ErrorCode::insufficient_data,
                  "estimate_pairwise_pose: all minimal samples degenerate");
    }
    throw;
  }

  // Least-squares refinement on the inlier set, then a final re-count.
  std::vector<int> inlier_idx;
  for (size_t i = 0; i < matches.size(); ++i) {
    if (res.inlier_mask[i]) inlier_idx.push_back(static_cast<int>(i));
  }
  PairwisePose out;
  out.transform = res.model;
  if (inlier_idx.size() >= 3) {
    if (auto refined = kabsch(matches, inlier_idx)) out.transform = *refined;
  }
  out.inlier_mask.assign(matches.size(), 0);
  out.inliers = 0;
  for (size_t i = 0; i < matches.size(); ++i) {
    if (residual(out.transform, static_cast<int>(i)) <= inlier_threshold) {
      out.inlier_mask[i] = 1;
      ++out.inliers;
    }
  }
  return out;
}

namespace {

struct BaScopeSet {
  std::vector<int> optimize_frames;       // poses free (minus fixed)
  std::vector<int> fixed_frames;          // gauge
};

SolveReport run_ba(ReconstructionSide& side, const BaScopeSet& scope,
                   const PipelineConfig& cfg, int max_iterations) {
  // Landmarks in scope: observed from at least one optimized frame.
  std::vector<char> frame_in_scope(side.frames.size(), 0);
  for (int f : scope.optimize_frames) frame_in_scope[f] = 1;
  for (int f : scope.fixed_frames) frame_in_scope[f] = 1;

  std::vector<char> landmark_in_scope(side.landmarks.size(), 0);
  for (const auto& obs : side.observations) {
    if (!frame_in_scope[obs.frame]) continue;
    const int li = side.landmark_of(obs.landmark);
    if (li >= 0) landmark_in_scope[li] = 1;
  }

  // Anchor frames: outside the scope but observing an in-scope landmark;
  // added as constant poses so their measurements still constrain.
  std::vector<char> frame_involved = frame_in_scope;
  for (const auto& obs : side.observations) {
    const int li = side.landmark_of(obs.landmark);
    if (li >= 0 && landmark_in_scope[li]) frame_involved[obs.frame] = 1;
  }

  Problem problem;
  std::vector<int> pose_block(side.frames.size(), -1);
  std::vector<int> lm_block(side.landmarks.size(), -1);
  std::vector<char> frame_free(side.frames.size(), 0);
  for (int f : scope.optimize_frames) frame_free[f] = 1;
  for (int f : scope.fixed_frames) frame_free[f] = 0;

  for (size_t f = 0; f < side.frames.size(); ++f) {
    if (!frame_involved[f]) continue;
    pose_block[f] = problem.add_pose_block(side.frames[f].pose);
    if (!frame_free[f]) problem.set_constant(pose_block[f]);
  }
  for (size_t l = 0; l < side.landmarks.size(); ++l) {
    if (!landmark_in_scope[l]) continue;
    const Vector3d& p = side.landmarks[l].position;
    lm_block[l] = problem.add_block({p.x(), p.y(), p.z()}, nullptr, true);
  }

  const Matrix3d k_i = side.rig.infrared.matrix();
  for (const auto& obs : side.observations) {
    const int li = side.landmark_of(obs.landmark);
    if (li < 0 || !landmark_in_scope[li]) continue;
    if (pose_block[obs.frame] < 0) continue;
    problem.add_residual(reprojection_residual(
        pose_block[obs.frame], lm_block[li], side.rig.rgb, obs.pixel,
        RobustLoss::Huber(cfg.huber_delta_px)));
    if (obs.valid_depth) {
      if (cfg.ei_normalized) {
        problem.add_residual(infrared_residual_normalized(
            pose_block[obs.frame], lm_block[li], k_i, side.rig.rgb_to_ir,
            obs.point_cam, RobustLoss::Huber(cfg.huber_delta_px)));
      } else {
        problem.add_residual(infrared_residual(
            pose_block[obs.frame], lm_block[li], k_i, side.rig.rgb_to_ir,
            obs.point_cam, RobustLoss::Huber(cfg.huber_delta_ei)));
      }
    }
  }

  LmOptions opts;
  opts.max_iterations = max_iterations;
  SolveReport report = lm_solve(problem, opts);

  for (size_t f = 0; f < side.frames.size(); ++f) {
    if (pose_block[f] >= 0 && frame_free[f]) {
      side.frames[f].pose = problem.pose(pose_block[f]);
    }
  }
  for (size_t l = 0; l < side.landmarks.size(); ++l) {
    if (lm_block[l] >= 0) {
      const auto& v = problem.values(lm_block[l]);
      side.landmarks[l].position = Vector3d(v[0], v[1], v[2]);
    }
  }
  return report;
}

SolveReport merge_reports(const std::vector<SolveReport>& reports) {
  SolveReport out;
  if (reports.empty()) return out;
  out = reports.front();
  for (size_t i = 1; i < reports.size(); ++i) {
    out.final_cost = reports[i].final_cost;
    out.iterations += reports[i].iterations;
    out.monotone = out.monotone && reports[i].monotone;
    out.reason = reports[i].reason;
  }
  return out;
}

// Frames sharing at least `min_shared` landmarks with `center`, capped to
// the `max_window` strongest covisibilities.
std::vector<int> covisible_frames(const ReconstructionSide& side, int center,
                                  int min_shared, int max_window) {
  std::vector<std::vector<int>> frame_landmarks(side.frames.size());
  for (const auto& obs : side.observations) {
    const int li = side.landmark_of(obs.landmark);
    if (li >= 0) frame_landmarks[obs.frame].push_back(li);
  }
  for (auto& v : frame_landmarks) std::sort(v.begin(), v.end());
  std::vector<std::pair<int, int>> scored;  // (shared, frame)
  for (size_t f = 0; f < side.frames.size(); ++f) {
    if (static_cast<int>(f) == center) continue;
    size_t i = 0, j = 0;
    int shared = 0;
    const auto& a = frame_landmarks[center];
    const auto& b = frame_landmarks[f];
    while (i < a.size() && j < b.size()) {
      if (a[i] < b[j]) ++i;
      else if (a[i] > b[j]) ++j;
      else { ++shared; ++i; ++j; }
    }
    if (shared >= min_shared) scored.emplace_back(shared, static_cast<int>(f));
  }
  std::sort(scored.rbegin(), scored.rend());
  std::vector<int> window = {center};
  for (const auto& [shared, f] : scored) {
    if (static_cast<int>(window.size()) >= max_window) break;
    window.push_back(f);
  }
  std::sort(window.begin(), window.end());
  return window;
}

}  // namespace

SolveReport bundle_adjust(ReconstructionSide& side, BaScope scope,
                          const std::vector<int>& fixed,
                          const PipelineConfig& cfg) {
  std::vector<int> gauge = fixed;
  if (gauge.empty() && !side.frames.empty()) gauge.push_back(side.frames[0].id);

  std::vector<SolveReport> reports;
  switch (scope) {
    case BaScope::global: {
      BaScopeSet s;
      for (const auto& f : side.frames) {
        if (std::find(gauge.begin(), gauge.end(), f.id) == gauge.end()) {
          s.optimize_frames.push_back(f.id);
        }
      }
      s.fixed_frames = gauge;
      reports.push_back(run_ba(side, s, cfg, cfg.global_ba_iterations));
      break;
    }
    case BaScope::pairwise: {
      for (const auto& pair : side.consecutive_pairs) {
        BaScopeSet s;
        s.optimize_frames = {pair.frame_b};
        s.fixed_frames = {pair.frame_a};
        reports.push_back(run_ba(side, s, cfg, cfg.pairwise_ba_iterations));
      }
      break;
    }
    case BaScope::local: {
      for (size_t fi = 0; fi < side.frames.size();
           fi += std::max(1, cfg.local_ba_stride)) {
        const auto& frame = side.frames[fi];
        const auto window =
            covisible_frames(side, frame.id, cfg.local_ba_min_shared,
                             cfg.local_ba_max_window);
        if (window.size() < 2) continue;
        BaScopeSet s;
        // The earliest window frame (or a requested gauge frame inside the
        // window) anchors the sub-problem.
        for (int f : window) {
          const bool is_gauge =
              f == window.front() ||
              std::find(gauge.begin(), gauge.end(), f) != gauge.end();
          if (is_gauge) s.fixed_frames.push_back(f);
          else s.optimize_frames.push_back(f);
        }
        reports.push_back(run_ba(side, s, cfg, cfg.local_ba_iterations));
      }
      break;
    }
  }
  return merge_reports(reports);
}

namespace {

std::vector<std::pair<Vector3d, Vector3d>> loop_matches_3d(
    const ReconstructionSide& side, const LoopCandidate& cand,
    std::vector<std::pair<int, int>>* kept_ids) {
  // Observation lookup for the two frames involved.
  std::map<int, const Observation*> in_a, in_b;
  for (const auto& obs : side.observations) {
    if (!obs.valid_depth) continue;
    if (obs.frame == cand.frame_a) in_a[obs.landmark] = &obs;
    if (obs.frame == cand.frame_b) in_b[obs.landmark] = &obs;
  }
  std::vector<std::pair<Vector3d, Vector3d>> matches;
  for (const auto& [ida, idb] : cand.matches) {
    auto a = in_a.find(ida);
    auto b = in_b.find(idb);
    if (a == in_a.end() || b == in_b.end()) continue;
    matches.emplace_back(a->second->point_cam, b->second->point_cam);
    if (kept_ids) kept_ids->emplace_back(ida, idb);
  }
  return matches;
}

}  // namespace

std::vector<LoopEdge> link_loops(ReconstructionSide& side,
                                 const std::vector<LoopCandidate>& candidates,
                                 const PipelineConfig& cfg) {
  std::vector<LoopEdge> accepted;
  for (size_t c = 0; c < candidates.size(); ++c) {
    const auto& cand = candidates[c];
    std::vector<std::pair<int, int>> ids;
    const auto matches = loop_matches_3d(side, cand, &ids);
    if (matches.size() < 3) continue;
    PairwisePose pose;
    try {
      pose = estimate_pairwise_pose(matches, cfg.pairwise_inlier_threshold,
                                    cfg.seed + 77 * (c + 1));
    } catch (const Error&) {
      continue;
    }
    if (pose.inliers < cfg.min_loop_inliers) continue;
    LoopEdge edge;
    edge.frame_a = cand.frame_a;
    edge.frame_b = cand.frame_b;
    edge.relative = pose.transform;
    edge.inliers = pose.inliers;
    for (size_t i = 0; i < ids.size(); ++i) {
      if (pose.inlier_mask[i]) edge.matches.push_back(ids[i]);
    }
    accepted.push_back(edge);
  }
  side.loop_edges.insert(side.loop_edges.end(), accepted.begin(),
                         accepted.end());
  return accepted;
}

SolveReport pose_graph_optimize(std::vector<CameraFrame>& frames,
                                const std::vector<PoseGraphEdge>& edges,
                                int fixed_frame) {
  // Connectivity check from the fixed frame.
  std::vector<std::vector<int>> adj(frames.size());
  for (const auto& e : edges) {
    adj[e.frame_a].push_back(e.frame_b);
    adj[e.frame_b].push_back(e.frame_a);
  }
  std::vector<char> seen(frames.size(), 0);
  std::vector<int> stack = {fixed_frame};
  seen[fixed_frame] = 1;
  while (!stack.empty()) {
    const int f = stack.back();
    stack.pop_back();
    for (int n : adj[f]) {
      if (!seen[n]) {
        seen[n] = 1;
        stack.push_back(n);
      }
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw Error(ErrorCode::disconnected_graph,
                "pose_graph_optimize: graph does not span all frames");
  }

  Problem problem;
  std::vector<int> blocks(frames.size());
  for (size_t f = 0; f < frames.size(); ++f) {
    blocks[f] = problem.add_pose_block(frames[f].pose);
  }
  problem.set_constant(blocks[fixed_frame]);
  for (const auto& e : edges) {
    problem.add_residual(
        relative_pose_residual(blocks[e.frame_a], blocks[e.frame_b],
                               e.relative));
  }
  LmOptions opts;
  opts.use_schur = false;
  SolveReport report = lm_solve(problem, opts);
  for (size_t f = 0; f < frames.size(); ++f) {
    frames[f].pose = problem.pose(blocks[f]);
  }
  return report;
}

namespace {

void init_landmarks_from_depth(ReconstructionSide& side) {
  std::map<int, std::pair<Vector3d, int>> sums;
  for (const auto& obs : side.observations) {
    if (!obs.valid_depth) continue;
    const Vector3d w = side.frames[obs.frame].pose.inverse() * obs.point_cam;
    auto& entry = sums[obs.landmark];
    entry.first += w;
    entry.second += 1;
  }
  side.landmarks.clear();
  for (const auto& [id, sum] : sums) {
    LandmarkPoint lp;
    lp.id = id;
    lp.position = sum.first / sum.second;
    side.landmarks.push_back(lp);
  }
  side.rebuild_landmark_index();
}

// Union-find merge of landmark identities along accepted loop matches.
void merge_loop_landmarks(ReconstructionSide& side) {
  std::unordered_map<int, int> parent;
  std::function<int(int)> find = [&](int v) {
    auto it = parent.find(v);
    if (it == parent.end() || it->second == v) return v;
    return parent[v] = find(it->second);
  };
  for (const auto& edge : side.loop_edges) {
    for (const auto& [ida, idb] : edge.matches) {
      const int ra = find(ida), rb = find(idb);
      if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
    }
  }
  if (parent.empty()) return;
  for (auto& obs : side.observations) obs.landmark = find(obs.landmark);
}

}  // namespace

ReconstructionSide reconstruct_side(const SideInput& input,
                                    const PipelineConfig& cfg) {
  if (input.frame_count < 2) {
    throw Error(ErrorCode::insufficient_data,
                "reconstruct_side: need at least two frames");
  }
  // The consecutive pairs must chain every frame.
  std::vector<char> chained(input.frame_count, 0);
  if (!input.pairs.empty()) chained[input.pairs.front().frame_a] = 1;
  for (const auto& p : input.pairs) {
    if (p.frame_a < 0 || p.frame_b < 0 || p.frame_a >= input.frame_count ||
        p.frame_b >= input.frame_count) {
      throw Error(ErrorCode::input_error,
                  "reconstruct_side: pair references a missing frame");
    }
    if (chained[p.frame_a]) chained[p.frame_b] = 1;
  }
  if (std::count(chained.begin(), chained.end(), 1) != input.frame_count) {
    throw Error(ErrorCode::input_error,
                "reconstruct_side: consecutive pairs do not chain all frames");
  }

  ReconstructionSide side;
  side.tag = input.tag;
  side.rig = input.rig;
  side.observations = input.observations;
  side.consecutive_pairs = input.pairs;
  side.loop_candidates = input.loop_candidates;
  side.frames.resize(input.frame_count);
  for (int f = 0; f < input.frame_count; ++f) side.frames[f].id = f;

  // Per-pair 3D matches from shared landmarks with valid depth.
  std::vector<std::vector<const Observation*>> by_frame(input.frame_count);
  for (const auto& obs : side.observations) {
    by_frame[obs.frame].push_back(&obs);
  }
  for (size_t pi = 0; pi < side.consecutive_pairs.size(); ++pi) {
    const auto& pair = side.consecutive_pairs[pi];
    std::map<int, const Observation*> in_a;
    for (const auto* o : by_frame[pair.frame_a]) {
      if (o->valid_depth) in_a[o->landmark] = o;
    }
    std::vector<std::pair<Vector3d, Vector3d>> matches;
    for (const auto* o : by_frame[pair.frame_b]) {
      if (!o->valid_depth) continue;
      auto it = in_a.find(o->landmark);
      if (it != in_a.end()) {
        matches.emplace_back(it->second->point_cam, o->point_cam);
      }
    }
    const PairwisePose rel = estimate_pairwise_pose(
        matches, cfg.pairwise_inlier_threshold, cfg.seed + pi);
    side.frames[pair.frame_b].pose =
        rel.transform.inverse() * side.frames[pair.frame_a].pose;
  }

  init_landmarks_from_depth(side);

  bundle_adjust(side, BaScope::pairwise, {0}, cfg);
  bundle_adjust(side, BaScope::local, {0}, cfg);

  if (cfg.use_loops && !side.loop_candidates.empty()) {
    const auto edges = link_loops(side, side.loop_candidates, cfg);
    if (!edges.empty()) {
      std::vector<PoseGraphEdge> graph;
      for (const auto& pair : side.consecutive_pairs) {
        graph.push_back({pair.frame_a, pair.frame_b,
                         side.frames[pair.frame_a].pose *
                             side.frames[pair.frame_b].pose.inverse()});
      }
      for (const auto& e : side.loop_edges) {
        graph.push_back({e.frame_a, e.frame_b, e.relative});
      }
      pose_graph_optimize(side.frames, graph, 0);
      merge_loop_landmarks(side);
      init_landmarks_from_depth(side);
    }
  }

  bundle_adjust(side, BaScope::global, {0}, cfg);
  return side;
}

}  // namespace orchard
