#pragma once

#include "nproj/core_types.hpp"

#include <Eigen/Dense>

#include <map>
#include <vector>

namespace nproj {

using Eigen::Vector2d;

struct DistanceConstraint {
  int i = 0, j = 0;
  double rest = 1.0;
};

/// Signed planar angle between segments (j-i) and (k-j); zero for a straight chain.
struct BendConstraint {
  int i = 0, j = 0, k = 0;
  double rest_angle = 0.0;
  double stiffness = 0.1;
};

/// Solid circular terrain: particles must stay on or outside the circle.
struct CircleBoundary {
  Vector2d center{0.0, 0.0};
  double radius = 1.0;
};

/// Two convex bodies given as ordered (counterclockwise) hull vertex loops.
struct PolygonCollision {
  std::vector<int> body_a;
  std::vector<int> body_b;
};

/// Random rigid placement of a particle subset: the subset's centroid is moved
/// to a uniform point in the box and the subset rotated by a uniform angle.
struct BodyPlacement {
  std::vector<int> indices;
  double cx_lo = 0, cx_hi = 0;
  double cy_lo = 0, cy_hi = 0;
  double rot_lo = 0, rot_hi = 0;
};

struct ScenarioSpec {
  Scenario tag = Scenario::rigid1;
  VectorXd template_positions;
  int dim = 2;
  std::vector<std::uint8_t> pin_mask;

  std::vector<DistanceConstraint> distances;
  std::vector<BendConstraint> bends;
  std::vector<CircleBoundary> boundaries;
  std::vector<PolygonCollision> collisions;

  Vector2d gravity{0.0, 0.0};
  double impulse_lo = -1.0, impulse_hi = 1.0;
  int solver_iterations = 20;
  double dt = 0.1;

  std::vector<BodyPlacement> placements;
  std::vector<int> default_observations;
  double default_noise_sigma = 0.0;

  int particle_count() const { return static_cast<int>(template_positions.size()) / dim; }
  SystemState template_state() const;
  void validate() const;
};

/// The five canonical experiment setups.
std::map<Scenario, ScenarioSpec> scenario_presets();
ScenarioSpec scenario_preset(Scenario tag);

// Residual primitives shared by the simulator, the analytic projection adapter
// and the evaluation metrics. Positions are interleaved 2D.

double distance_residual(const VectorXd& positions, const DistanceConstraint& c);
double bend_angle(const VectorXd& positions, const BendConstraint& c);

/// Penetration depth into the terrain circle for one particle (0 when outside).
double circle_penetration(const VectorXd& positions, int particle, const CircleBoundary& b);

/// Greatest depth by which any vertex of one hull sits inside the other; 0 when separated.
double polygon_penetration(const VectorXd& positions, const PolygonCollision& c);

}  // namespace nproj
