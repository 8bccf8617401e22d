#include "nproj/projection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace nproj {
namespace {

Vector2d point(const VectorXd& x, int particle) {
  return Vector2d(x[2 * particle], x[2 * particle + 1]);
}

void add_to(VectorXd& grad, int particle, const Vector2d& v) {
  grad[2 * particle] += v.x();
  grad[2 * particle + 1] += v.y();
}

VectorXd centered(const VectorXd& x, int dim) {
  VectorXd out = x;
  const Eigen::Index particles = x.size() / dim;
  for (int axis = 0; axis < dim; ++axis) {
    double mean = 0.0;
    for (Eigen::Index p = 0; p < particles; ++p) mean += x[p * dim + axis];
    mean /= static_cast<double>(particles);
    for (Eigen::Index p = 0; p < particles; ++p) out[p * dim + axis] -= mean;
  }
  return out;
}

struct StepOutcome {
  VectorXd delta;  // applied correction, already relaxed and pin-masked
  ProjectionIterationRecord record;
};

/// One fast-projection step; shared verbatim by single- and multi-group paths.
StepOutcome projection_step(const ConstraintFunction& fn, const VectorXd& x,
                            const std::vector<std::uint8_t>& pins, int dim,
                            const ProjectionConfig& cfg) {
  StepOutcome out;
  VectorXd grad;
  double value;
  if (cfg.center_input) {
    value = fn.value_and_grad(centered(x, dim), grad);
    grad = centered(grad, dim);  // chain rule through the centering map
  } else {
    value = fn.value_and_grad(x, grad);
  }
  out.record.constraint_value = value;

  const double grad_sq = grad.squaredNorm();
  if (!(grad_sq >= cfg.grad_guard)) {
    out.delta = VectorXd::Zero(x.size());
    out.record.guarded = true;
    return out;
  }
  const double lambda = value / grad_sq;
  out.record.lambda = lambda;
  out.delta = (-cfg.relaxation * lambda) * grad;
  for (std::size_t p = 0; p < pins.size(); ++p) {
    if (pins[p]) out.delta.segment(static_cast<Eigen::Index>(p) * dim, dim).setZero();
  }
  out.record.correction_norm = out.delta.norm();
  return out;
}

/// Writes delta into x, particle by particle, never touching pinned particles.
void apply_correction(VectorXd& x, const VectorXd& delta, const std::vector<std::uint8_t>& pins,
                      int dim) {
  for (std::size_t p = 0; p < pins.size(); ++p) {
    if (pins[p]) continue;
    x.segment(static_cast<Eigen::Index>(p) * dim, dim) +=
        delta.segment(static_cast<Eigen::Index>(p) * dim, dim);
  }
}

}  // namespace

AnalyticConstraint::AnalyticConstraint(std::vector<DistanceConstraint> distances,
                                       std::vector<BendConstraint> bends,
                                       std::vector<CircleBoundary> boundaries,
                                       std::vector<PolygonCollision> collisions, int input_width)
    : distances_(std::move(distances)),
      bends_(std::move(bends)),
      boundaries_(std::move(boundaries)),
      collisions_(std::move(collisions)),
      input_width_(input_width) {}

AnalyticConstraint analytic_constraint_adapter(const ScenarioSpec& spec) {
  return AnalyticConstraint(spec.distances, spec.bends, spec.boundaries, spec.collisions,
                            spec.particle_count() * spec.dim);
}

VectorXd AnalyticConstraint::residuals(const VectorXd& x) const {
  std::vector<double> r;
  for (const auto& c : distances_) r.push_back(distance_residual(x, c));
  for (const auto& c : bends_) r.push_back(c.stiffness * (bend_angle(x, c) - c.rest_angle));
  for (const auto& b : boundaries_) {
    const int particles = static_cast<int>(x.size()) / 2;
    for (int p = 0; p < particles; ++p) r.push_back(circle_penetration(x, p, b));
  }
  for (const auto& c : collisions_) r.push_back(polygon_penetration(x, c));
  return Eigen::Map<VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
}

double AnalyticConstraint::value_and_grad(const VectorXd& x, VectorXd& grad) const {
  if (x.size() != input_width_)
    throw std::invalid_argument("analytic constraint: input width mismatch");
  grad = VectorXd::Zero(x.size());
  VectorXd weighted = VectorXd::Zero(x.size());  // sum of r_i * grad r_i
  double sum_sq = 0.0;

  for (const auto& c : distances_) {
    const Vector2d diff = point(x, c.i) - point(x, c.j);
    const double len = diff.norm();
    if (len < 1e-15) continue;
    const double r = len - c.rest;
    const Vector2d n = diff / len;
    sum_sq += r * r;
    add_to(weighted, c.i, r * n);
    add_to(weighted, c.j, -r * n);
  }
  for (const auto& c : bends_) {
    const Vector2d d1 = point(x, c.j) - point(x, c.i);
    const Vector2d d2 = point(x, c.k) - point(x, c.j);
    const double l1 = d1.squaredNorm();
    const double l2 = d2.squaredNorm();
    if (l1 < 1e-18 || l2 < 1e-18) continue;
    const double theta = std::atan2(d1.x() * d2.y() - d1.y() * d2.x(), d1.dot(d2));
    const double r = c.stiffness * (theta - c.rest_angle);
    const Vector2d g_d1(d1.y() / l1, -d1.x() / l1);
    const Vector2d g_d2(-d2.y() / l2, d2.x() / l2);
    sum_sq += r * r;
    add_to(weighted, c.i, r * c.stiffness * -g_d1);
    add_to(weighted, c.j, r * c.stiffness * (g_d1 - g_d2));
    add_to(weighted, c.k, r * c.stiffness * g_d2);
  }
  for (const auto& b : boundaries_) {
    const int particles = static_cast<int>(x.size()) / 2;
    for (int p = 0; p < particles; ++p) {
      const Vector2d diff = point(x, p) - b.center;
      const double dist = diff.norm();
      if (dist >= b.radius || dist < 1e-15) continue;
      const double r = b.radius - dist;
      sum_sq += r * r;
      add_to(weighted, p, r * (-diff / dist));
    }
  }
  for (const auto& c : collisions_) {
    auto vertex_terms = [&](const std::vector<int>& verts, const std::vector<int>& loop) {
      for (int v : verts) {
        const Vector2d p = point(x, v);
        // inside test + nearest edge, mirroring the simulator's resolution
        bool inside = false;
        const std::size_t n = loop.size();
        for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
          const Vector2d a = point(x, loop[i]);
          const Vector2d b2 = point(x, loop[j]);
          if ((a.y() > p.y()) != (b2.y() > p.y())) {
            const double x_cross = (b2.x() - a.x()) * (p.y() - a.y()) / (b2.y() - a.y()) + a.x();
            if (p.x() < x_cross) inside = !inside;
          }
        }
        if (!inside) continue;
        double best = std::numeric_limits<double>::max();
        std::size_t best_e = 0;
        double best_t = 0.0;
        Vector2d best_c;
        for (std::size_t e = 0; e < n; ++e) {
          const Vector2d a = point(x, loop[e]);
          const Vector2d b2 = point(x, loop[(e + 1) % n]);
          const Vector2d ab = b2 - a;
          const double len2 = ab.squaredNorm();
          const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
          const Vector2d closest = a + t * ab;
          const double d = (p - closest).norm();
          if (d < best) {
            best = d;
            best_e = e;
            best_t = t;
            best_c = closest;
          }
        }
        if (best < 1e-15) continue;
        const Vector2d dir = (p - best_c) / best;
        sum_sq += best * best;
        add_to(weighted, v, best * dir);
        add_to(weighted, loop[best_e], best * -(1.0 - best_t) * dir);
        add_to(weighted, loop[(best_e + 1) % n], best * -best_t * dir);
      }
    };
    vertex_terms(c.body_a, c.body_b);
    vertex_terms(c.body_b, c.body_a);
  }

  const double norm = std::sqrt(sum_sq);
  if (norm < 1e-15) {
    grad.setZero();
    return 0.0;
  }
  grad = weighted / norm;
  return norm;
}

ProjectionResult project(const ConstraintFunction& fn, const SystemState& x_hat,
                         const ProjectionConfig& cfg) {
  x_hat.validate();
  if (fn.input_width() != static_cast<int>(x_hat.positions.size()))
    throw std::invalid_argument("project: state width does not match constraint input");

  ProjectionResult result;
  result.state = x_hat;
  for (int i = 0; i < cfg.iterations; ++i) {
    StepOutcome step = projection_step(fn, result.state.positions, result.state.pin_mask,
                                       result.state.dim, cfg);
    apply_correction(result.state.positions, step.delta, result.state.pin_mask, result.state.dim);
    if (!result.state.positions.allFinite())
      throw ProjectionNumericalError(i + 1, "projection produced a non-finite state at iteration " +
                                                std::to_string(i + 1));
    result.trace.iterations.push_back(step.record);
  }
  return result;
}

MultigroupResult project_multigroup(
    const std::map<std::string, const ConstraintFunction*>& modules, const SystemState& x_hat,
    const GroupPartition& partition, const ProjectionConfig& cfg) {
  x_hat.validate();
  partition.validate(x_hat.particle_count());
  const int dim = x_hat.dim;
  const std::size_t n_groups = partition.groups.size();

  std::vector<const ConstraintFunction*> fns(n_groups, nullptr);
  std::vector<std::vector<std::uint8_t>> group_pins(n_groups);
  for (std::size_t g = 0; g < n_groups; ++g) {
    auto it = modules.find(partition.net_binding[g]);
    if (it == modules.end() || it->second == nullptr)
      throw std::invalid_argument("project_multigroup: no module bound for '" +
                                  partition.net_binding[g] + "'");
    fns[g] = it->second;
    if (fns[g]->input_width() != static_cast<int>(partition.groups[g].size()) * dim)
      throw std::invalid_argument("project_multigroup: group arity does not match module input");
    for (int idx : partition.groups[g])
      group_pins[g].push_back(x_hat.pin_mask[static_cast<std::size_t>(idx)]);
  }

  MultigroupResult result;
  result.state = x_hat;
  result.group_traces.resize(n_groups);
  VectorXd& x = result.state.positions;

  auto gather = [&](std::size_t g) {
    const auto& idx = partition.groups[g];
    VectorXd sub(static_cast<Eigen::Index>(idx.size()) * dim);
    for (std::size_t k = 0; k < idx.size(); ++k)
      sub.segment(static_cast<Eigen::Index>(k) * dim, dim) =
          x.segment(static_cast<Eigen::Index>(idx[k]) * dim, dim);
    return sub;
  };

  for (int i = 0; i < cfg.iterations; ++i) {
    if (cfg.sync_mode == SyncMode::jacobi) {
      // Every group reads the same pre-iteration state.
      std::vector<VectorXd> deltas(n_groups);
      for (std::size_t g = 0; g < n_groups; ++g) {
        StepOutcome step = projection_step(*fns[g], gather(g), group_pins[g], dim, cfg);
        deltas[g] = std::move(step.delta);
        result.group_traces[g].iterations.push_back(step.record);
      }
      // Shared particles take the mean correction, summed in group-id order so
      // the result is independent of evaluation order.
      for (const auto& [particle, groups_of] : partition.shared) {
        if (x_hat.pinned(particle)) continue;
        VectorXd sum = VectorXd::Zero(dim);
        for (int g : groups_of) {
          const auto& idx = partition.groups[static_cast<std::size_t>(g)];
          const auto slot = std::find(idx.begin(), idx.end(), particle) - idx.begin();
          sum += deltas[static_cast<std::size_t>(g)].segment(
              static_cast<Eigen::Index>(slot) * dim, dim);
        }
        x.segment(static_cast<Eigen::Index>(particle) * dim, dim) +=
            sum / static_cast<double>(groups_of.size());
      }
    } else {
      // Gauss-Seidel: corrections land immediately; later groups see them.
      for (std::size_t g = 0; g < n_groups; ++g) {
        StepOutcome step = projection_step(*fns[g], gather(g), group_pins[g], dim, cfg);
        const auto& idx = partition.groups[g];
        for (std::size_t k = 0; k < idx.size(); ++k) {
          if (group_pins[g][k]) continue;
          x.segment(static_cast<Eigen::Index>(idx[k]) * dim, dim) +=
              step.delta.segment(static_cast<Eigen::Index>(k) * dim, dim);
        }
        result.group_traces[g].iterations.push_back(step.record);
      }
    }
    if (!x.allFinite())
      throw ProjectionNumericalError(i + 1, "multigroup projection produced a non-finite state at iteration " +
                                                std::to_string(i + 1));
  }
  return result;
}

void write_trace_csv(const std::string& path, const std::vector<ProjectionTrace>& group_traces) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "iteration,group,constraint_value,lambda,correction_norm\n";
  for (std::size_t g = 0; g < group_traces.size(); ++g) {
    const auto& trace = group_traces[g];
    for (std::size_t i = 0; i < trace.iterations.size(); ++i) {
      const auto& rec = trace.iterations[i];
      os << (i + 1) << ',' << g << ',' << rec.constraint_value << ',' << rec.lambda << ','
         << rec.correction_norm << '\n';
    }
  }
}

}  // namespace nproj
