#include "orchard/least_squares.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace orchard {

double huber(double e, double delta) {
  const double a = std::abs(e);
  if (a <= delta) return e * e;
  return 2.0 * delta * a - delta * delta;
}

void unit_vector_basis(const Vector3d& v, Vector3d& u, Vector3d& w) {
  // Pick the coordinate axis least aligned with v to seed the basis.
  int k = 0;
  v.cwiseAbs().minCoeff(&k);
  u = v.cross(Vector3d::Unit(k)).normalized();
  w = v.cross(u);
}

void pose_to_array(const RigidTransform& pose, double* x) {
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) x[3 * r + c] = pose.rotation(r, c);
  for (int i = 0; i < 3; ++i) x[9 + i] = pose.translation[i];
}

RigidTransform pose_from_array(const double* x) {
  RigidTransform pose;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) pose.rotation(r, c) = x[3 * r + c];
  for (int i = 0; i < 3; ++i) pose.translation[i] = x[9 + i];
  return pose;
}

void PoseManifold::plus(const double* x, const double* delta,
                        double* x_out) const {
  RigidTransform pose = pose_from_array(x);
  const Vector3d omega(delta[0], delta[1], delta[2]);
  pose.rotation = rodrigues_exp(omega) * pose.rotation;
  pose.translation += Vector3d(delta[3], delta[4], delta[5]);
  pose_to_array(pose, x_out);
}

void UnitVectorManifold::plus(const double* x, const double* delta,
                              double* x_out) const {
  const Vector3d v(x[0], x[1], x[2]);
  Vector3d u, w;
  unit_vector_basis(v, u, w);
  const Vector3d out = (rodrigues_exp(delta[0] * u + delta[1] * w) * v).normalized();
  for (int i = 0; i < 3; ++i) x_out[i] = out[i];
}

void CylinderFrameManifold::plus(const double* x, const double* delta,
                                 double* x_out) const {
  const Vector3d axis(x[0], x[1], x[2]);
  Vector3d u, w;
  unit_vector_basis(axis, u, w);
  const Vector3d new_axis =
      (rodrigues_exp(delta[0] * u + delta[1] * w) * axis).normalized();
  const Vector3d new_origin =
      Vector3d(x[3], x[4], x[5]) + delta[2] * u + delta[3] * w;
  for (int i = 0; i < 3; ++i) x_out[i] = new_axis[i];
  for (int i = 0; i < 3; ++i) x_out[3 + i] = new_origin[i];
}

void ObjectPoseManifold::plus(const double* x, const double* delta,
                              double* x_out) const {
  RigidTransform pose = pose_from_array(x);
  Vector3d omega, dt;
  if (kind_ == Kind::cylinder) {
    // Object x is the cylinder axis: freeze roll about x and slide along x.
    omega = Vector3d(0.0, delta[0], delta[1]);
    dt = Vector3d(0.0, delta[2], delta[3]);
  } else {
    // Object z is the plane normal: freeze yaw about z and in-plane slide.
    omega = Vector3d(delta[0], delta[1], 0.0);
    dt = Vector3d(0.0, 0.0, delta[2]);
  }
  // Increments act in the object frame: X_obj = R*X + t.
  pose.rotation = rodrigues_exp(omega) * pose.rotation;
  pose.translation += dt;
  pose_to_array(pose, x_out);
}

std::string SolveReport::summary() const {
  std::ostringstream os;
  os << "cost " << initial_cost << " -> " << final_cost << " in " << iterations
     << " iterations (";
  switch (reason) {
    case Termination::converged: os << "converged"; break;
    case Termination::max_iterations: os << "max-iterations"; break;
    case Termination::stalled: os << "stalled"; break;
  }
  os << ")";
  return os.str();
}

int Problem::add_block(std::vector<double> values,
                       std::shared_ptr<const Manifold> manifold,
                       bool eliminable) {
  if (!manifold) {
    manifold = std::make_shared<EuclideanManifold>(
        static_cast<int>(values.size()));
  }
  if (manifold->global_size() != static_cast<int>(values.size())) {
    throw Error(ErrorCode::bad_initialization,
                "parameter block size does not match its manifold");
  }
  values_.push_back(std::move(values));
  manifolds_.push_back(std::move(manifold));
  constant_.push_back(false);
  eliminable_.push_back(eliminable);
  return static_cast<int>(values_.size()) - 1;
}

int Problem::add_pose_block(const RigidTransform& pose, bool eliminable) {
  std::vector<double> x(12);
  pose_to_array(pose, x.data());
  return add_block(std::move(x), std::make_shared<PoseManifold>(), eliminable);
}

void Problem::set_constant(int id, bool constant) { constant_[id] = constant; }

void Problem::add_residual(ResidualBlock block) {
  if (block.dim <= 0 || !block.eval || block.params.empty()) {
    throw Error(ErrorCode::bad_initialization, "malformed residual block");
  }
  if (block.weight <= 0.0) {
    throw Error(ErrorCode::bad_initialization,
                "residual weight must be positive");
  }
  residuals_.push_back(std::move(block));
}

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct BlockEval {
  Eigen::VectorXd r;
  std::vector<RowMat> jac;  // per referenced param, dim x local, row-major
};

double robust_cost(const ResidualBlock& block, double norm) {
  switch (block.loss.kind) {
    case RobustLoss::Kind::none: return block.weight * norm * norm;
    case RobustLoss::Kind::huber:
      return block.weight * huber(norm, block.loss.delta);
  }
  return 0.0;
}

// sqrt of the IRLS reweighting factor for the Gauss-Newton approximation.
double irls_scale(const ResidualBlock& block, double norm) {
  double w = 1.0;
  if (block.loss.kind == RobustLoss::Kind::huber && norm > block.loss.delta) {
    w = block.loss.delta / norm;
  }
  return std::sqrt(block.weight * w);
}

std::vector<const double*> gather_params(
    const std::vector<std::vector<double>>& values,
    const ResidualBlock& block) {
  std::vector<const double*> p;
  p.reserve(block.params.size());
  for (int id : block.params) p.push_back(values[id].data());
  return p;
}

void numeric_jacobians(const ResidualBlock& block,
                       const std::vector<std::vector<double>>& values,
                       const std::vector<const Manifold*>& manifolds,
                       std::vector<RowMat>& jac) {
  const int np = static_cast<int>(block.params.size());
  Eigen::VectorXd r_plus(block.dim), r_minus(block.dim);
  const std::vector<double*> no_jac(np, nullptr);
  for (int k = 0; k < np; ++k) {
    const Manifold& mf = *manifolds[k];
    const std::vector<double>& x = values[block.params[k]];
    double scale = 1.0;
    for (double v : x) scale = std::max(scale, std::abs(v));
    const double h = 1e-6 * scale;
    std::vector<double> x_pert(x.size());
    std::vector<double> delta(mf.local_size(), 0.0);
    jac[k].resize(block.dim, mf.local_size());
    for (int j = 0; j < mf.local_size(); ++j) {
      auto params = gather_params(values, block);
      delta[j] = h;
      mf.plus(x.data(), delta.data(), x_pert.data());
      params[k] = x_pert.data();
      block.eval(params, r_plus.data(), no_jac);
      delta[j] = -h;
      mf.plus(x.data(), delta.data(), x_pert.data());
      params[k] = x_pert.data();
      block.eval(params, r_minus.data(), no_jac);
      delta[j] = 0.0;
      jac[k].col(j) = (r_plus - r_minus) / (2.0 * h);
    }
  }
}

class Evaluator {
 public:
  Evaluator(const Problem& problem,
            const std::vector<std::vector<double>>& values,
            bool jacobians = true)
      : problem_(problem), values_(values) {
    evals_.resize(problem.residual_count());
    param_ptrs_.resize(problem.residual_count());
    jac_ptrs_.resize(problem.residual_count());
    no_jac_.resize(problem.residual_count());
    for (int i = 0; i < problem.residual_count(); ++i) {
      const ResidualBlock& b = problem.residual(i);
      evals_[i].r.resize(b.dim);
      evals_[i].jac.resize(b.params.size());
      param_ptrs_[i].resize(b.params.size());
      jac_ptrs_[i].resize(b.params.size());
      no_jac_[i].assign(b.params.size(), nullptr);
      for (size_t k = 0; k < b.params.size(); ++k) {
        if (jacobians) {
          evals_[i].jac[k].resize(
              b.dim, problem.manifold(b.params[k]).local_size());
          jac_ptrs_[i][k] = evals_[i].jac[k].data();
        }
        param_ptrs_[i][k] = values[b.params[k]].data();
      }
    }
  }

  // Residuals (and optionally Jacobians) for all blocks. Each index writes
  // only its own slot, so the OpenMP path is bitwise identical to serial.
  void evaluate(bool with_jacobians, par::ExecMode exec) {
    par::for_index(exec, problem_.residual_count(), [&](std::int64_t i) {
      const ResidualBlock& b = problem_.residual(i);
      BlockEval& e = evals_[i];
      if (!with_jacobians) {
        b.eval(param_ptrs_[i], e.r.data(), no_jac_[i]);
        return;
      }
      if (b.analytic) {
        b.eval(param_ptrs_[i], e.r.data(), jac_ptrs_[i]);
      } else {
        b.eval(param_ptrs_[i], e.r.data(), no_jac_[i]);
        std::vector<const Manifold*> mfs;
        for (int id : b.params) mfs.push_back(&problem_.manifold(id));
        numeric_jacobians(b, values_, mfs, e.jac);
      }
    });
  }

  double total_cost() const {
    double c = 0.0;
    for (int i = 0; i < problem_.residual_count(); ++i) {
      c += robust_cost(problem_.residual(i), evals_[i].r.norm());
    }
    return c;
  }

  bool finite() const {
    for (const auto& e : evals_) {
      if (!e.r.allFinite()) return false;
    }
    return true;
  }

  const BlockEval& eval(int i) const { return evals_[i]; }

 private:
  const Problem& problem_;
  const std::vector<std::vector<double>>& values_;
  std::vector<BlockEval> evals_;
  // Rebuilt never: the value buffers are stable for the Evaluator's life.
  std::vector<std::vector<const double*>> param_ptrs_;
  std::vector<std::vector<double*>> jac_ptrs_;
  std::vector<std::vector<double*>> no_jac_;
};

struct EliminableData {
  Eigen::MatrixXd c;       // local x local
  Eigen::VectorXd g;       // local
  std::vector<int> ne_ids;                 // dense offsets into S
  std::vector<int> ne_widths;
  std::vector<Eigen::MatrixXd> e_blocks;   // ne_width x local
};

}  // namespace

SolveReport lm_solve(Problem& problem, const LmOptions& opts) {
  const int nblocks = problem.block_count();
  const int nres = problem.residual_count();

  // Every free parameter block must be touched by some residual.
  std::vector<char> touched(nblocks, 0);
  for (int i = 0; i < nres; ++i)
    for (int id : problem.residual(i).params) touched[id] = 1;
  for (int id = 0; id < nblocks; ++id) {
    if (!problem.is_constant(id) && !touched[id]) {
      throw Error(ErrorCode::unconstrained_parameter,
                  "parameter block " + std::to_string(id) +
                      " is not referenced by any residual");
    }
  }

  // A residual may couple at most one eliminable block; demote otherwise.
  std::vector<bool> eliminable = problem.eliminable_;
  if (!opts.use_schur) std::fill(eliminable.begin(), eliminable.end(), false);
  for (int i = 0; i < nres; ++i) {
    const auto& ps = problem.residual(i).params;
    int n_elim = 0;
    for (int id : ps)
      if (eliminable[id] && !problem.is_constant(id)) ++n_elim;
    if (n_elim > 1) {
      for (int id : ps) eliminable[id] = false;
    }
  }

  // Dense layout for the non-eliminated free blocks.
  std::vector<int> offset(nblocks, -1), width(nblocks, 0);
  std::vector<int> elim_index(nblocks, -1);
  int n_dense = 0;
  std::vector<int> elim_blocks;
  for (int id = 0; id < nblocks; ++id) {
    if (problem.is_constant(id)) continue;
    width[id] = problem.manifold(id).local_size();
    if (eliminable[id]) {
      elim_index[id] = static_cast<int>(elim_blocks.size());
      elim_blocks.push_back(id);
    } else {
      offset[id] = n_dense;
      n_dense += width[id];
    }
  }

  std::vector<std::vector<double>> x = problem.values_;
  Evaluator evaluator(problem, x);
  evaluator.evaluate(true, opts.exec);
  if (!evaluator.finite()) {
    throw Error(ErrorCode::bad_initialization,
                "non-finite residual at the initial point");
  }

  SolveReport report;
  report.initial_cost = evaluator.total_cost();
  double cost = report.initial_cost;

  double lambda = opts.initial_damping;
  Eigen::MatrixXd b_mat(n_dense, n_dense);
  Eigen::VectorXd g_dense(n_dense);
  std::vector<EliminableData> elim(elim_blocks.size());

  std::vector<std::vector<double>> x_trial = x;
  Evaluator trial_eval(problem, x_trial, false);

  int accepted_steps = 0;
  bool done = false;
  Termination reason = Termination::max_iterations;
  for (int round = 0; round < opts.max_iterations && !done; ++round) {
    // Assemble normal equations at the current accepted point.
    b_mat.setZero();
    g_dense.setZero();
    for (size_t e = 0; e < elim_blocks.size(); ++e) {
      const int id = elim_blocks[e];
      elim[e].c = Eigen::MatrixXd::Zero(width[id], width[id]);
      elim[e].g = Eigen::VectorXd::Zero(width[id]);
      elim[e].ne_ids.clear();
      elim[e].ne_widths.clear();
      elim[e].e_blocks.clear();
    }

    for (int i = 0; i < nres; ++i) {
      const ResidualBlock& blk = problem.residual(i);
      const BlockEval& ev = evaluator.eval(i);
      const double s = irls_scale(blk, ev.r.norm());
      const Eigen::VectorXd sr = s * ev.r;

      int elim_k = -1;
      for (size_t k = 0; k < blk.params.size(); ++k) {
        const int id = blk.params[k];
        if (!problem.is_constant(id) && eliminable[id]) {
          elim_k = static_cast<int>(k);
        }
      }

      for (size_t ka = 0; ka < blk.params.size(); ++ka) {
        const int a = blk.params[ka];
        if (problem.is_constant(a)) continue;
        const Eigen::MatrixXd ja = s * ev.jac[ka];
        if (static_cast<int>(ka) == elim_k) {
          EliminableData& ed = elim[elim_index[a]];
          ed.c.noalias() += ja.transpose() * ja;
          ed.g.noalias() += ja.transpose() * sr;
          continue;
        }
        g_dense.segment(offset[a], width[a]).noalias() +=
            ja.transpose() * sr;
        for (size_t kb = 0; kb < blk.params.size(); ++kb) {
          const int b = blk.params[kb];
          if (problem.is_constant(b)) continue;
          if (static_cast<int>(kb) == elim_k) {
            EliminableData& ed = elim[elim_index[b]];
            const Eigen::MatrixXd jb = s * ev.jac[kb];
            // Keep one E block per (residual, dense param); merged below.
            ed.ne_ids.push_back(offset[a]);
            ed.ne_widths.push_back(width[a]);
            ed.e_blocks.push_back(ja.transpose() * jb);
            continue;
          }
          const Eigen::MatrixXd jb = s * ev.jac[kb];
          b_mat.block(offset[a], offset[b], width[a], width[b]).noalias() +=
              ja.transpose() * jb;
        }
      }
    }

    // Merge duplicate E blocks (same dense offset) per eliminable block.
    for (auto& ed : elim) {
      std::vector<int> ids, widths;
      std::vector<Eigen::MatrixXd> blocks;
      for (size_t j = 0; j < ed.ne_ids.size(); ++j) {
        auto it = std::find(ids.begin(), ids.end(), ed.ne_ids[j]);
        if (it == ids.end()) {
          ids.push_back(ed.ne_ids[j]);
          widths.push_back(ed.ne_widths[j]);
          blocks.push_back(ed.e_blocks[j]);
        } else {
          blocks[it - ids.begin()] += ed.e_blocks[j];
        }
      }
      ed.ne_ids = std::move(ids);
      ed.ne_widths = std::move(widths);
      ed.e_blocks = std::move(blocks);
    }

    double grad_norm = g_dense.lpNorm<Eigen::Infinity>();
    for (const auto& ed : elim)
      grad_norm = std::max(grad_norm, ed.g.lpNorm<Eigen::Infinity>());
    if (grad_norm < opts.gradient_tol) {
      reason = Termination::converged;
      break;
    }

    // Inner damping loop: retry with larger lambda until a step decreases
    // the cost or damping saturates.
    bool accepted = false;
    while (lambda <= opts.max_damping) {
      Eigen::MatrixXd s_mat = b_mat;
      for (int d = 0; d < n_dense; ++d)
        s_mat(d, d) = b_mat(d, d) * (1.0 + lambda);
      Eigen::VectorXd rhs = -g_dense;

      bool ok = true;
      std::vector<Eigen::MatrixXd> c_inv(elim.size());
      for (size_t e = 0; e < elim.size(); ++e) {
        Eigen::MatrixXd cd = elim[e].c;
        for (int d = 0; d < cd.rows(); ++d)
          cd(d, d) = elim[e].c(d, d) * (1.0 + lambda);
        Eigen::FullPivLU<Eigen::MatrixXd> lu(cd);
        if (!lu.isInvertible()) {
          ok = false;
          break;
        }
        c_inv[e] = lu.inverse();
        const auto& ed = elim[e];
        for (size_t a = 0; a < ed.ne_ids.size(); ++a) {
          rhs.segment(ed.ne_ids[a], ed.ne_widths[a]).noalias() +=
              ed.e_blocks[a] * (c_inv[e] * ed.g);
          for (size_t b = 0; b < ed.ne_ids.size(); ++b) {
            s_mat.block(ed.ne_ids[a], ed.ne_ids[b], ed.ne_widths[a],
                        ed.ne_widths[b]).noalias() -=
                ed.e_blocks[a] * c_inv[e] * ed.e_blocks[b].transpose();
          }
        }
      }

      Eigen::VectorXd delta_dense(n_dense);
      if (ok && n_dense > 0) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(s_mat);
        if (ldlt.info() != Eigen::Success) {
          ok = false;
        } else {
          delta_dense = ldlt.solve(rhs);
          ok = delta_dense.allFinite();
        }
      } else if (n_dense == 0) {
        delta_dense.resize(0);
      }

      if (!ok) {
        lambda *= 10.0;
        continue;
      }

      // Apply the step through the manifolds into the trial state. The
      // buffers are copied element-wise: the evaluators cache pointers
      // into them.
      for (int id = 0; id < nblocks; ++id) {
        std::copy(x[id].begin(), x[id].end(), x_trial[id].begin());
      }
      for (int id = 0; id < nblocks; ++id) {
        if (problem.is_constant(id) || eliminable[id]) continue;
        problem.manifold(id).plus(x[id].data(),
                                  delta_dense.data() + offset[id],
                                  x_trial[id].data());
      }
      for (size_t e = 0; e < elim.size(); ++e) {
        const int id = elim_blocks[e];
        const auto& ed = elim[e];
        Eigen::VectorXd rhs_e = -ed.g;
        for (size_t a = 0; a < ed.ne_ids.size(); ++a) {
          rhs_e.noalias() -= ed.e_blocks[a].transpose() *
                             delta_dense.segment(ed.ne_ids[a], ed.ne_widths[a]);
        }
        const Eigen::VectorXd delta_e = c_inv[e] * rhs_e;
        problem.manifold(id).plus(x[id].data(), delta_e.data(),
                                  x_trial[id].data());
      }

      trial_eval.evaluate(false, opts.exec);
      const double trial_cost =
          trial_eval.finite() ? trial_eval.total_cost()
                              : std::numeric_limits<double>::infinity();
      if (trial_cost < cost) {
        accepted = true;
        ++accepted_steps;
        const double decrease = cost - trial_cost;
        for (int id = 0; id < nblocks; ++id) {
          std::copy(x_trial[id].begin(), x_trial[id].end(), x[id].begin());
        }
        cost = trial_cost;
        lambda = std::max(1e-12, lambda * 0.5);
        evaluator.evaluate(true, opts.exec);
        if (decrease <= opts.cost_decrease_tol * std::max(cost, 1e-300)) {
          reason = Termination::converged;
          done = true;
        }
        break;
      }
      lambda *= 10.0;
    }

    if (!accepted) {
      if (lambda > opts.max_damping) {
        // Distinguish a saturated line search from singular equations: if
        // even the heavily damped system fails to factor, report it.
        Eigen::MatrixXd probe = b_mat;
        for (int d = 0; d < n_dense; ++d)
          probe(d, d) = b_mat(d, d) * (1.0 + opts.max_damping);
        Eigen::LDLT<Eigen::MatrixXd> ldlt(probe);
        const bool singular =
            n_dense > 0 && (ldlt.info() != Eigen::Success ||
                            !ldlt.solve(g_dense).allFinite());
        if (singular) {
          throw Error(ErrorCode::unsolvable,
                      "singular normal equations after max damping");
        }
      }
      reason = Termination::stalled;
      break;
    }
  }

  problem.values_ = x;
  report.final_cost = cost;
  report.iterations = accepted_steps;
  report.reason = reason;
  report.monotone = report.final_cost <= report.initial_cost + 1e-15;
  return report;
}

double Problem::cost(par::ExecMode exec) const {
  Evaluator evaluator(*this, values_, false);
  evaluator.evaluate(false, exec);
  return evaluator.total_cost();
}

double jacobian_check(const ResidualBlock& block,
                      const std::vector<std::vector<double>>& params,
                      const std::vector<const Manifold*>& manifolds) {
  // Block-provided Jacobians.
  Eigen::VectorXd r(block.dim);
  std::vector<RowMat> provided(block.params.size());
  std::vector<const double*> p;
  std::vector<double*> jac_ptrs(block.params.size());
  for (size_t k = 0; k < block.params.size(); ++k) {
    p.push_back(params[k].data());
    provided[k].resize(block.dim, manifolds[k]->local_size());
    jac_ptrs[k] = provided[k].data();
  }
  block.eval(p, r.data(), jac_ptrs);

  // Central differences through the manifolds. Parameter ids inside the
  // block are remapped to a local dense numbering for this check.
  ResidualBlock local = block;
  local.params.clear();
  for (size_t k = 0; k < block.params.size(); ++k)
    local.params.push_back(static_cast<int>(k));
  std::vector<RowMat> numeric(block.params.size());
  numeric_jacobians(local, params, manifolds, numeric);

  double dev = 0.0;
  for (size_t k = 0; k < block.params.size(); ++k) {
    for (int i = 0; i < provided[k].rows(); ++i) {
      for (int j = 0; j < provided[k].cols(); ++j) {
        const double a = provided[k](i, j);
        const double n = numeric[k](i, j);
        dev = std::max(
            dev, std::abs(a - n) / std::max(1.0, std::abs(a) + std::abs(n)));
      }
    }
  }
  return dev;
}

}  // namespace orchard
