#pragma once

#include "nproj/core_types.hpp"
#include "nproj/net.hpp"
#include "nproj/scenario.hpp"

#include <map>
#include <memory>
#include <string>

namespace nproj {

/// Scalar constraint with gradient; satisfied anywhere the value is zero.
/// Both the learned network and the analytic adapters implement this.
class ConstraintFunction {
 public:
  virtual ~ConstraintFunction() = default;
  virtual int input_width() const = 0;
  virtual double value_and_grad(const VectorXd& x, VectorXd& grad) const = 0;
};

class NetConstraint : public ConstraintFunction {
 public:
  explicit NetConstraint(const ConstraintNet& net) : net_(&net) {}
  int input_width() const override { return net_->arch.input_width(); }
  double value_and_grad(const VectorXd& x, VectorXd& grad) const override {
    return net_value_and_input_grad(*net_, x, grad);
  }

 private:
  const ConstraintNet* net_;
};

/// Combines a scenario's analytic constraints into one scalar: the Euclidean
/// norm of the residual vector (stretch and shape residuals raw, bend residuals
/// scaled by their stiffness, inequality residuals as one-sided penetrations).
/// Zero value and zero gradient exactly on the constraint manifold. For a
/// single distance constraint this reduces to |dist - rest|, so one projection
/// iteration reproduces the classical equal-mass distance projection.
class AnalyticConstraint : public ConstraintFunction {
 public:
  AnalyticConstraint(std::vector<DistanceConstraint> distances, std::vector<BendConstraint> bends,
                     std::vector<CircleBoundary> boundaries,
                     std::vector<PolygonCollision> collisions, int input_width);
  int input_width() const override { return input_width_; }
  double value_and_grad(const VectorXd& x, VectorXd& grad) const override;

  /// Signed/one-sided residual entries; value_and_grad returns their norm.
  VectorXd residuals(const VectorXd& x) const;

 private:
  std::vector<DistanceConstraint> distances_;
  std::vector<BendConstraint> bends_;
  std::vector<CircleBoundary> boundaries_;
  std::vector<PolygonCollision> collisions_;
  int input_width_;
};

AnalyticConstraint analytic_constraint_adapter(const ScenarioSpec& spec);

struct ProjectionIterationRecord {
  double constraint_value = 0.0;
  double lambda = 0.0;
  double correction_norm = 0.0;
  bool guarded = false;
};

struct ProjectionTrace {
  std::vector<ProjectionIterationRecord> iterations;
};

/// Thrown when an iteration produces a non-finite state.
class ProjectionNumericalError : public std::runtime_error {
 public:
  ProjectionNumericalError(int iteration, const std::string& what)
      : std::runtime_error(what), iteration(iteration) {}
  int iteration;
};

struct ProjectionResult {
  SystemState state;
  ProjectionTrace trace;
};

/// Algorithm: N iterations of x += r * (-C/|grad C|^2) * grad C, with the step
/// skipped when |grad C|^2 falls below cfg.grad_guard and pinned particles

/// never moved. cfg.iterations == 0 is allowed and returns the input unchanged.
ProjectionResult project(const ConstraintFunction& fn, const SystemState& x_hat,
                         const ProjectionConfig& cfg);

struct MultigroupResult {
  SystemState state;
  std::vector<ProjectionTrace> group_traces;
};

/// Outer loop of cfg.iterations; each group takes one projection step through
/// its bound module per outer iteration. Jacobi mode evaluates every group
/// against the pre-iteration state and averages corrections on shared
/// particles; Gauss-Seidel applies each group's correction before the next
/// group runs.
MultigroupResult project_multigroup(const std::map<std::string, const ConstraintFunction*>& modules,
                                    const SystemState& x_hat, const GroupPartition& partition,
                                    const ProjectionConfig& cfg);

/// CSV rows: iteration,group,constraint_value,lambda,correction_norm
void write_trace_csv(const std::string& path, const std::vector<ProjectionTrace>& group_traces);

}  // namespace nproj
