#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "orchard/error.hpp"
#include "orchard/geometry.hpp"
#include "orchard/parallel.hpp"

namespace orchard {

// Huber cost of a scalar residual magnitude: e^2 inside the delta band,
// linear growth 2*delta*|e| - delta^2 outside. C1 at |e| = delta.
double huber(double e, double delta);

// Local parameterization. Residual blocks report Jacobians with respect
// to the local increment (evaluated at delta = 0), and the solver applies
// accepted increments through plus().
class Manifold {
 public:
  virtual ~Manifold() = default;
  virtual int global_size() const = 0;
  virtual int local_size() const = 0;
  virtual void plus(const double* x, const double* delta,
                    double* x_out) const = 0;
};

class EuclideanManifold final : public Manifold {
 public:
  explicit EuclideanManifold(int size) : size_(size) {}
  int global_size() const override { return size_; }
  int local_size() const override { return size_; }
  void plus(const double* x, const double* delta,
            double* x_out) const override {
    for (int i = 0; i < size_; ++i) x_out[i] = x[i] + delta[i];
  }

 private:
  int size_;
};

// Rigid pose stored as 12 doubles (rotation row-major, then translation).
// Local increment is (omega, dt) with the left-multiplicative convention
// R' = exp(omega) * R, t' = t + dt.
class PoseManifold final : public Manifold {
 public:
  int global_size() const override { return 12; }
  int local_size() const override { return 6; }
  void plus(const double* x, const double* delta,
            double* x_out) const override;
};

// Unit 3-vector with a 2D tangent increment: v' = exp(d0*u + d1*w) * v
// where (u, w) = unit_vector_basis(v).
class UnitVectorManifold final : public Manifold {
 public:
  int global_size() const override { return 3; }
  int local_size() const override { return 2; }
  void plus(const double* x, const double* delta,
            double* x_out) const override;
};

// Cylinder frame block: global (axis(3), origin(3)), local 4. The axis
// moves on the unit sphere and the origin moves perpendicular to the
// current axis, which pins the slide-along-axis gauge. Both use the
// unit_vector_basis of the current axis.
class CylinderFrameManifold final : public Manifold {
 public:
  int global_size() const override { return 6; }
  int local_size() const override { return 4; }
  void plus(const double* x, const double* delta,
            double* x_out) const override;
};

// Pose of a semantic object with its symmetry directions frozen. For a
// cylinder (axis = object x) the rotation about x and the translation
// along x are gauge; for a plane (normal = object z) the rotation about z
// and the in-plane translations are gauge.
class ObjectPoseManifold final : public Manifold {
 public:
  enum class Kind { cylinder, plane };
  explicit ObjectPoseManifold(Kind kind) : kind_(kind) {}
  int global_size() const override { return 12; }
  int local_size() const override { return kind_ == Kind::cylinder ? 4 : 3; }
  void plus(const double* x, const double* delta,
            double* x_out) const override;
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Deterministic orthonormal basis (u, w) of the plane perpendicular to v.
// Shared by manifolds and residual blocks so local Jacobians agree.
void unit_vector_basis(const Vector3d& v, Vector3d& u, Vector3d& w);

void pose_to_array(const RigidTransform& pose, double* x);
RigidTransform pose_from_array(const double* x);

struct RobustLoss {
  enum class Kind { none, huber };
  Kind kind = Kind::none;
  double delta = 1.0;

  static RobustLoss None() { return {}; }
  static RobustLoss Huber(double delta) {
    return {Kind::huber, delta};
  }
};

// One residual term. `eval` fills the residual vector and, when the
// jacobian pointers are non-null, the local Jacobians (row-major,
// dim x local_size of each referenced block). Blocks without analytic
// Jacobians leave `analytic` false and the solver differentiates them
// numerically through the manifolds.
struct ResidualBlock {
  std::vector<int> params;
  int dim = 0;
  RobustLoss loss;
  double weight = 1.0;
  bool analytic = true;
  std::function<void(const std::vector<const double*>&, double*,
                     const std::vector<double*>&)>
      eval;
};

enum class Termination { converged, max_iterations, stalled };

struct SolveReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  Termination reason = Termination::converged;
  bool monotone = true;  // accepted-step costs never increased

  std::string summary() const;
};

struct LmOptions {
  int max_iterations = 200;
  double cost_decrease_tol = 1e-10;
  double gradient_tol = 1e-10;
  double initial_damping = 1e-4;
  double max_damping = 1e14;
  bool use_schur = true;  // eliminate blocks marked eliminable
  par::ExecMode exec = par::default_mode();
};

class Problem {
 public:
  // Returns the block id. Eliminable blocks are Schur-complemented away;
  // a residual may reference at most one eliminable block.
  int add_block(std::vector<double> values,
                std::shared_ptr<const Manifold> manifold = nullptr,
                bool eliminable = false);
  int add_pose_block(const RigidTransform& pose, bool eliminable = false);

  void set_constant(int id, bool constant = true);
  bool is_constant(int id) const { return constant_[id]; }

  void add_residual(ResidualBlock block);

  int block_count() const { return static_cast<int>(values_.size()); }
  int residual_count() const { return static_cast<int>(residuals_.size()); }

  const std::vector<double>& values(int id) const { return values_[id]; }
  std::vector<double>& mutable_values(int id) { return values_[id]; }
  RigidTransform pose(int id) const { return pose_from_array(values_[id].data()); }
  const Manifold& manifold(int id) const { return *manifolds_[id]; }
  const ResidualBlock& residual(int i) const { return residuals_[i]; }

  // Total robustified cost at the current parameter values.
  double cost(par::ExecMode exec = par::default_mode()) const;

 private:
  friend SolveReport lm_solve(Problem&, const LmOptions&);
  friend class NormalEquations;

  std::vector<std::vector<double>> values_;
  std::vector<std::shared_ptr<const Manifold>> manifolds_;
  std::vector<bool> constant_;
  std::vector<bool> eliminable_;
  std::vector<ResidualBlock> residuals_;
};

SolveReport lm_solve(Problem& problem, const LmOptions& opts = {});

// Compares the block's Jacobian against central finite differences taken
// through the manifolds (step 1e-6 times the parameter scale). Returns
// the max deviation relative to max(1, |a| + |n|) per entry.
double jacobian_check(const ResidualBlock& block,
                      const std::vector<std::vector<double>>& params,
                      const std::vector<const Manifold*>& manifolds);

}  // namespace orchard
