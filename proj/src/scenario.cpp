#include "nproj/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace nproj {
namespace {

constexpr double kPi = std::numbers::pi;

Vector2d point(const VectorXd& positions, int particle) {
  return Vector2d(positions[2 * particle], positions[2 * particle + 1]);
}

void all_pairs_distances(ScenarioSpec& spec, const std::vector<int>& body) {
  for (std::size_t a = 0; a < body.size(); ++a) {
    for (std::size_t b = a + 1; b < body.size(); ++b) {
      const Vector2d pa = point(spec.template_positions, body[a]);
      const Vector2d pb = point(spec.template_positions, body[b]);
      spec.distances.push_back({body[a], body[b], (pa - pb).norm()});
    }
  }
}

void chain_constraints(ScenarioSpec& spec, const std::vector<int>& chain, double bend_stiffness) {
  for (std::size_t k = 0; k + 1 < chain.size(); ++k) {
    const Vector2d pa = point(spec.template_positions, chain[k]);
    const Vector2d pb = point(spec.template_positions, chain[k + 1]);
    spec.distances.push_back({chain[k], chain[k + 1], (pa - pb).norm()});
  }
  // Rest angles come from the template, so the bends never pull a slack chain
  // taut against its pins (taut chains make the distance sweeps degenerate).
  for (std::size_t k = 0; k + 2 < chain.size(); ++k) {
    BendConstraint c{chain[k], chain[k + 1], chain[k + 2], 0.0, bend_stiffness};
    c.rest_angle = bend_angle(spec.template_positions, c);
    spec.bends.push_back(c);
  }
}

std::vector<int> iota_indices(int begin, int count) {
  std::vector<int> v(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) v[static_cast<std::size_t>(i)] = begin + i;
  return v;
}

/// 16 perimeter points of an axis-aligned square (side 1, centered at origin),
/// counterclockwise from the bottom-left corner; corners at 0, 4, 8, 12.
std::vector<Vector2d> square_perimeter16() {
  std::vector<Vector2d> pts;
  const Vector2d corners[4] = {{-0.5, -0.5}, {0.5, -0.5}, {0.5, 0.5}, {-0.5, 0.5}};
  for (int e = 0; e < 4; ++e) {
    const Vector2d a = corners[e];
    const Vector2d b = corners[(e + 1) % 4];
    for (int s = 0; s < 4; ++s) pts.push_back(a + (b - a) * (s / 4.0));
  }
  return pts;
}

ScenarioSpec make_rigid1() {
  ScenarioSpec spec;
  spec.tag = Scenario::rigid1;
  spec.template_positions.resize(8);
  spec.template_positions << 0, 0, 1, 0, 1, 1, 0, 1;
  spec.pin_mask.assign(4, 0);
  all_pairs_distances(spec, iota_indices(0, 4));
  spec.placements.push_back({iota_indices(0, 4), -1, 1, -1, 1, -kPi, kPi});
  spec.default_observations = iota_indices(0, 4);
  spec.default_noise_sigma = 1e-3;
  return spec;
}

ScenarioSpec make_rigid2() {
  ScenarioSpec spec;
  spec.tag = Scenario::rigid2;
  spec.template_positions.resize(32);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      spec.template_positions[2 * (4 * r + c)] = c / 3.0;
      spec.template_positions[2 * (4 * r + c) + 1] = r / 3.0;
    }
  }
  spec.pin_mask.assign(16, 0);
  all_pairs_distances(spec, iota_indices(0, 16));
  spec.solver_iterations = 60;
  spec.placements.push_back({iota_indices(0, 16), -1, 1, -1, 1, -kPi, kPi});
  spec.default_observations = iota_indices(0, 16);
  spec.default_noise_sigma = 1e-3;
  return spec;
}

ScenarioSpec make_rope() {
  ScenarioSpec spec;
  spec.tag = Scenario::rope;
  const int n = 8;
  // Exact 0.25 segment lengths along gently varying headings, so the chord is
  // shorter than the rope and the pinned ends leave slack to swing.
  spec.template_positions.resize(2 * n);
  Vector2d p(0.0, 0.0);
  spec.template_positions.segment<2>(0) = p;
  for (int i = 1; i < n; ++i) {
    const double heading = 0.5 * std::sin(2.0 * kPi * (i - 1) / (n - 1));
    p += 0.25 * Vector2d(std::cos(heading), std::sin(heading));
    spec.template_positions.segment<2>(2 * i) = p;
  }
  spec.pin_mask.assign(static_cast<std::size_t>(n), 0);
  spec.pin_mask[0] = 1;
  spec.pin_mask[static_cast<std::size_t>(n - 1)] = 1;
  chain_constraints(spec, iota_indices(0, n), 0.1);
  spec.solver_iterations = 400;
  spec.placements.push_back({iota_indices(0, n), -1, 1, -1, 1, -kPi, kPi});
  spec.default_observations = iota_indices(0, n);
  return spec;
}

ScenarioSpec make_articulated() {
  ScenarioSpec spec;
  spec.tag = Scenario::articulated;
  // Particles 0..7: rope hanging from the pinned particle 0; particle 7 doubles
  // as the top-left lattice corner of the 16-particle rigid body (8..22).
  const int rope_n = 8;
  const int total = 23;
  spec.template_positions.resize(2 * total);
  for (int i = 0; i < rope_n; ++i) {
    spec.template_positions[2 * i] = 0.0;
    spec.template_positions[2 * i + 1] = -0.25 * i;
  }
  std::vector<int> body;
  body.reserve(16);
  const double top = -0.25 * (rope_n - 1);
  int next = rope_n;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      if (r == 0 && c == 0) {
        body.push_back(rope_n - 1);
        continue;
      }
      spec.template_positions[2 * next] = 0.25 * c;
      spec.template_positions[2 * next + 1] = top - 0.25 * r;
      body.push_back(next);
      ++next;
    }
  }
  spec.pin_mask.assign(static_cast<std::size_t>(total), 0);
  spec.pin_mask[0] = 1;
  chain_constraints(spec, iota_indices(0, rope_n), 0.1);
  all_pairs_distances(spec, body);
  spec.gravity = Vector2d(0.0, -9.8);
  spec.solver_iterations = 3000;
  spec.placements.push_back({iota_indices(0, total), -1, 1, -1, 1, -kPi / 4, kPi / 4});
  spec.default_observations = iota_indices(0, total);
  return spec;
}

ScenarioSpec make_collision() {
  ScenarioSpec spec;
  spec.tag = Scenario::collision;
  const auto square = square_perimeter16();
  spec.template_positions.resize(64);
  for (int body = 0; body < 2; ++body) {
    for (int i = 0; i < 16; ++i) {
      spec.template_positions[2 * (16 * body + i)] = square[static_cast<std::size_t>(i)].x();
      spec.template_positions[2 * (16 * body + i) + 1] = square[static_cast<std::size_t>(i)].y();
    }
  }
  spec.pin_mask.assign(32, 0);
  all_pairs_distances(spec, iota_indices(0, 16));
  all_pairs_distances(spec, iota_indices(16, 16));
  spec.collisions.push_back({iota_indices(0, 16), iota_indices(16, 16)});
  // Terrain: a large circle whose top touches the origin.
  spec.boundaries.push_back({Vector2d(0.0, -5.0), 5.0});
  spec.gravity = Vector2d(0.0, -9.8);
  spec.solver_iterations = 500;
  spec.placements.push_back({iota_indices(0, 16), -0.8, -0.1, 0.8, 1.4, -kPi, kPi});
  spec.placements.push_back({iota_indices(16, 16), 0.1, 0.8, 1.8, 2.4, -kPi, kPi});
  // Mid-edge perimeter points; the corners stay unobserved.
  spec.default_observations = {2, 6, 10, 14, 18, 22, 26, 30};
  return spec;
}

}  // namespace

SystemState ScenarioSpec::template_state() const {
  SystemState s;
  s.positions = template_positions;
  s.dim = dim;
  s.pin_mask = pin_mask;
  return s;
}

void ScenarioSpec::validate() const {
  const int m = particle_count();
  auto check_index = [m](int idx) {
    if (idx < 0 || idx >= m) throw std::invalid_argument("scenario: constraint index out of range");
  };
  for (const auto& c : distances) {
    check_index(c.i);
    check_index(c.j);
    if (c.rest <= 0) throw std::invalid_argument("scenario: rest length must be positive");
  }
  for (const auto& c : bends) {
    check_index(c.i);
    check_index(c.j);
    check_index(c.k);
  }
  for (const auto& b : boundaries) {
    if (b.radius <= 0) throw std::invalid_argument("scenario: boundary radius must be positive");
  }
  for (const auto& c : collisions) {
    for (int idx : c.body_a) check_index(idx);
    for (int idx : c.body_b) check_index(idx);
  }
  if (static_cast<int>(pin_mask.size()) != m)
    throw std::invalid_argument("scenario: pin mask length mismatch");
}

std::map<Scenario, ScenarioSpec> scenario_presets() {
  std::map<Scenario, ScenarioSpec> presets;
  presets[Scenario::rigid1] = make_rigid1();
  presets[Scenario::rigid2] = make_rigid2();
  presets[Scenario::rope] = make_rope();
  presets[Scenario::articulated] = make_articulated();
  presets[Scenario::collision] = make_collision();
  return presets;
}

ScenarioSpec scenario_preset(Scenario tag) {
  switch (tag) {
    case Scenario::rigid1: return make_rigid1();
    case Scenario::rigid2: return make_rigid2();
    case Scenario::rope: return make_rope();
    case Scenario::articulated: return make_articulated();
    case Scenario::collision: return make_collision();
  }
  throw std::invalid_argument("unknown scenario");
}

double distance_residual(const VectorXd& positions, const DistanceConstraint& c) {
  return (point(positions, c.i) - point(positions, c.j)).norm() - c.rest;
}

double bend_angle(const VectorXd& positions, const BendConstraint& c) {
  const Vector2d d1 = point(positions, c.j) - point(positions, c.i);
  const Vector2d d2 = point(positions, c.k) - point(positions, c.j);
  const double cross = d1.x() * d2.y() - d1.y() * d2.x();
  const double dot = d1.dot(d2);
  return std::atan2(cross, dot);
}

double circle_penetration(const VectorXd& positions, int particle, const CircleBoundary& b) {
  const double dist = (point(positions, particle) - b.center).norm();
  return std::max(0.0, b.radius - dist);
}

namespace {

bool point_in_polygon(const Vector2d& p, const VectorXd& positions, const std::vector<int>& loop) {
  bool inside = false;
  const std::size_t n = loop.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vector2d a = point(positions, loop[i]);
    const Vector2d b = point(positions, loop[j]);
    if ((a.y() > p.y()) != (b.y() > p.y())) {
      const double x_cross = (b.x() - a.x()) * (p.y() - a.y()) / (b.y() - a.y()) + a.x();
      if (p.x() < x_cross) inside = !inside;
    }
  }
  return inside;
}

double depth_inside(const Vector2d& p, const VectorXd& positions, const std::vector<int>& loop) {
  if (!point_in_polygon(p, positions, loop)) return 0.0;
  double best = std::numeric_limits<double>::max();
  const std::size_t n = loop.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vector2d a = point(positions, loop[i]);
    const Vector2d b = point(positions, loop[(i + 1) % n]);
    const Vector2d ab = b - a;
    const double len2 = ab.squaredNorm();
    const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    best = std::min(best, (p - (a + t * ab)).norm());
  }
  return best;
}

}  // namespace

double polygon_penetration(const VectorXd& positions, const PolygonCollision& c) {
  double worst = 0.0;
  for (int idx : c.body_a)
    worst = std::max(worst, depth_inside(point(positions, idx), positions, c.body_b));
  for (int idx : c.body_b)
    worst = std::max(worst, depth_inside(point(positions, idx), positions, c.body_a));
  return worst;
}

}  // namespace nproj
