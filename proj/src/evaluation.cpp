#include "nproj/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace nproj {
namespace {

Vector2d point(const VectorXd& x, int slot) { return Vector2d(x[2 * slot], x[2 * slot + 1]); }

/// Residual terms expressed in observed-slot coordinates.
struct MetricDefinition {
  std::vector<DistanceConstraint> shape;      // slot indices, template rest
  std::vector<DistanceConstraint> stretch;
  std::vector<BendConstraint> bend;
  std::vector<CircleBoundary> terrain;        // applies to every observed slot
  std::vector<std::vector<int>> hulls;        // observed slot loops per body
};

std::vector<int> slots_of(const std::vector<int>& observation, const std::vector<int>& wanted) {
  // wanted holds simulator particle ids; returns their observed slots in order.
  std::vector<int> slots;
  for (int id : wanted) {
    const auto it = std::find(observation.begin(), observation.end(), id);
    if (it != observation.end()) slots.push_back(static_cast<int>(it - observation.begin()));
  }
  return slots;
}

void add_shape_pairs(MetricDefinition& def, const ScenarioSpec& spec,
                     const std::vector<int>& observation, const std::vector<int>& body) {
  const auto slots = slots_of(observation, body);
  for (std::size_t a = 0; a < slots.size(); ++a) {
    for (std::size_t b = a + 1; b < slots.size(); ++b) {
      const Vector2d pa = point(spec.template_positions, observation[static_cast<std::size_t>(slots[a])]);
      const Vector2d pb = point(spec.template_positions, observation[static_cast<std::size_t>(slots[b])]);
      def.shape.push_back({slots[a], slots[b], (pa - pb).norm()});
    }
  }
}

void add_chain(MetricDefinition& def, const ScenarioSpec& spec, const std::vector<int>& observation,
               const std::vector<int>& chain) {
  const auto slots = slots_of(observation, chain);
  for (std::size_t k = 0; k + 1 < slots.size(); ++k) {
    const Vector2d pa = point(spec.template_positions, observation[static_cast<std::size_t>(slots[k])]);
    const Vector2d pb =
        point(spec.template_positions, observation[static_cast<std::size_t>(slots[k + 1])]);
    def.stretch.push_back({slots[k], slots[k + 1], (pa - pb).norm()});
  }
  for (std::size_t k = 0; k + 2 < slots.size(); ++k) {
    // rest angle measured on the template between the same observed particles
    BendConstraint tpl{observation[static_cast<std::size_t>(slots[k])],
                       observation[static_cast<std::size_t>(slots[k + 1])],
                       observation[static_cast<std::size_t>(slots[k + 2])], 0.0, 1.0};
    const double rest = bend_angle(spec.template_positions, tpl);
    def.bend.push_back({slots[k], slots[k + 1], slots[k + 2], rest, 1.0});
  }
}

std::vector<int> iota(int begin, int count) {
  std::vector<int> v(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) v[static_cast<std::size_t>(i)] = begin + i;
  return v;
}

MetricDefinition metric_definition(Scenario scenario, const std::vector<int>& observation) {
  const ScenarioSpec spec = scenario_preset(scenario);
  MetricDefinition def;
  switch (scenario) {
    case Scenario::rigid1:
      add_shape_pairs(def, spec, observation, iota(0, 4));
      break;
    case Scenario::rigid2:
      add_shape_pairs(def, spec, observation, iota(0, 16));
      break;
    case Scenario::rope:
      add_chain(def, spec, observation, iota(0, 8));
      break;
    case Scenario::articulated: {
      add_chain(def, spec, observation, iota(0, 8));
      std::vector<int> body = {7};
      for (int i = 8; i < 23; ++i) body.push_back(i);
      add_shape_pairs(def, spec, observation, body);
      break;
    }
    case Scenario::collision: {
      add_shape_pairs(def, spec, observation, iota(0, 16));
      add_shape_pairs(def, spec, observation, iota(16, 16));
      def.terrain = spec.boundaries;
      auto hull_a = slots_of(observation, iota(0, 16));
      auto hull_b = slots_of(observation, iota(16, 16));
      if (hull_a.size() >= 3) def.hulls.push_back(hull_a);
      if (hull_b.size() >= 3) def.hulls.push_back(hull_b);
      break;
    }
  }
  return def;
}

}  // namespace

const char* residual_family_name(ResidualFamily f) {
  switch (f) {
    case ResidualFamily::shape: return "shape";
    case ResidualFamily::stretch: return "stretch";
    case ResidualFamily::bend: return "bend";
    case ResidualFamily::collision: return "collision";
  }
  return "?";
}

VectorXd rollout_mse(const TrajectorySample& predicted, const TrajectorySample& truth) {
  if (predicted.frames.size() != truth.frames.size())
    throw std::invalid_argument("rollout_mse: frame counts differ");
  VectorXd out(static_cast<Eigen::Index>(predicted.frames.size()));
  for (std::size_t f = 0; f < predicted.frames.size(); ++f) {
    const auto& a = predicted.frames[f].positions;
    const auto& b = truth.frames[f].positions;
    if (a.size() != b.size()) throw std::invalid_argument("rollout_mse: state sizes differ");
    // mean over particles of the squared position error
    out[static_cast<Eigen::Index>(f)] =
        (a - b).squaredNorm() / static_cast<double>(predicted.frames[f].particle_count());
  }
  return out;
}

MetricReport constraint_residuals(const TrajectorySample& traj, Scenario scenario,
                                  const std::vector<int>& observation_indices) {
  if (traj.frames.empty()) throw std::invalid_argument("constraint_residuals: empty trajectory");
  const MetricDefinition def = metric_definition(scenario, observation_indices);
  const std::size_t frames = traj.frames.size();

  MetricReport report;
  auto series = [&](ResidualFamily f) -> ResidualSeries& {
    auto& s = report.families[f];
    if (s.per_frame.empty()) s.per_frame.assign(frames, 0.0);
    return s;
  };

  for (std::size_t f = 0; f < frames; ++f) {
    const VectorXd& x = traj.frames[f].positions;
    if (!def.shape.empty()) {
      double acc = 0.0;
      for (const auto& c : def.shape) acc += std::abs(distance_residual(x, c));
      series(ResidualFamily::shape).per_frame[f] = acc / static_cast<double>(def.shape.size());
    }
    if (!def.stretch.empty()) {
      double acc = 0.0;
      for (const auto& c : def.stretch) acc += std::abs(distance_residual(x, c));
      series(ResidualFamily::stretch).per_frame[f] = acc / static_cast<double>(def.stretch.size());
    }
    if (!def.bend.empty()) {
      double acc = 0.0;
      for (const auto& c : def.bend) acc += std::abs(bend_angle(x, c) - c.rest_angle);
      series(ResidualFamily::bend).per_frame[f] = acc / static_cast<double>(def.bend.size());
    }
    if (!def.terrain.empty() || def.hulls.size() >= 2) {
      double acc = 0.0;
      std::size_t terms = 0;
      const int slots = traj.frames[f].particle_count();
      for (const auto& b : def.terrain) {
        for (int p = 0; p < slots; ++p) {
          acc += circle_penetration(x, p, b);
          ++terms;
        }
      }
      if (def.hulls.size() >= 2) {
        PolygonCollision pc{def.hulls[0], def.hulls[1]};
        acc += polygon_penetration(x, pc);
        ++terms;
      }
      if (terms > 0)
        series(ResidualFamily::collision).per_frame[f] = acc / static_cast<double>(terms);
    }
  }
  for (auto& [family, s] : report.families) {
    double acc = 0.0;
    for (double v : s.per_frame) acc += v;
    s.mean = acc / static_cast<double>(s.per_frame.size());
  }
  return report;
}

MetricReport constraint_residuals(const TrajectorySample& traj, Scenario scenario) {
  const ScenarioSpec spec = scenario_preset(scenario);
  std::vector<int> observation = spec.default_observations;
  if (static_cast<int>(observation.size()) != traj.frames.front().particle_count()) {
    observation = iota(0, traj.frames.front().particle_count());
  }
  return constraint_residuals(traj, scenario, observation);
}

MetricReport aggregate_reports(const std::vector<MetricReport>& reports) {
  MetricReport out;
  if (reports.empty()) return out;
  for (const auto& report : reports) {
    for (const auto& [family, s] : report.families) {
      auto& acc = out.families[family];
      if (acc.per_frame.empty()) acc.per_frame.assign(s.per_frame.size(), 0.0);
      for (std::size_t f = 0; f < s.per_frame.size() && f < acc.per_frame.size(); ++f)
        acc.per_frame[f] += s.per_frame[f];
      acc.mean += s.mean;
    }
  }
  const double n = static_cast<double>(reports.size());
  for (auto& [family, s] : out.families) {
    for (double& v : s.per_frame) v /= n;
    s.mean /= n;
  }
  return out;
}

SystemState baseline_step(const ConstraintNet& net, const SystemState& prev,
                          const SystemState& curr, double dt, const Vector2d& gravity) {
  SystemState predicted = linear_predict(prev, curr, dt, gravity);
  const VectorXd correction = net_forward_vec(net, predicted.positions);
  for (int p = 0; p < predicted.particle_count(); ++p) {
    if (predicted.pinned(p)) continue;
    predicted.positions.segment(static_cast<Eigen::Index>(p) * predicted.dim, predicted.dim) +=
        correction.segment(static_cast<Eigen::Index>(p) * predicted.dim, predicted.dim);
  }
  return predicted;
}

RolloutResult rollout_baseline(const ConstraintNet& net, const SystemState& x0,
                               const SystemState& x1, int num_frames, const RolloutOptions& opts) {
  if (num_frames < 2) throw std::invalid_argument("rollout_baseline: num_frames >= 2 required");
  RolloutResult result;
  result.trajectory.dt = opts.dt;
  result.trajectory.frames = {x0, x1};
  SystemState prev = x0;
  SystemState curr = x1;
  for (int f = 2; f < num_frames; ++f) {
    SystemState next = baseline_step(net, prev, curr, opts.dt, opts.gravity);
    if (!next.positions.allFinite())
      throw ProjectionNumericalError(0, "baseline rollout produced a non-finite state at frame " +
                                            std::to_string(f));
    result.trajectory.frames.push_back(next);
    prev = std::move(curr);
    curr = result.trajectory.frames.back();
  }
  return result;
}

TrainResult naive_mlp_baseline(const TrajectoryDataset& dataset, const TrainConfig& cfg) {
  return train_baseline_mlp(dataset, cfg);
}

DiagnosticsReport constraint_diagnostics(const ConstraintFunction& fn,
                                         const TrajectoryDataset& held_out,
                                         const ProjectionConfig& cfg, const Vector2d& gravity,
                                         Scenario scenario, int max_frames) {
  DiagnosticsReport report;

  // (a) constraint value against uniform scaling of the rest shape about its centroid
  {
    const ScenarioSpec spec = scenario_preset(scenario);
    const auto& obs = held_out.observation_indices;
    VectorXd rest(static_cast<Eigen::Index>(obs.size()) * 2);
    for (std::size_t k = 0; k < obs.size(); ++k)
      rest.segment(static_cast<Eigen::Index>(2 * k), 2) =
          spec.template_positions.segment(2 * obs[k], 2);
    Vector2d centroid(0, 0);
    for (std::size_t k = 0; k < obs.size(); ++k) centroid += point(rest, static_cast<int>(k));
    centroid /= static_cast<double>(obs.size());
    for (int step = 0; step <= 40; ++step) {
      const double s = 0.8 + 0.01 * step;
      VectorXd scaled = rest;
      for (std::size_t k = 0; k < obs.size(); ++k) {
        const Vector2d p = centroid + s * (point(rest, static_cast<int>(k)) - centroid);
        scaled[static_cast<Eigen::Index>(2 * k)] = p.x();
        scaled[static_cast<Eigen::Index>(2 * k) + 1] = p.y();
      }
      VectorXd grad;
      const double value = fn.value_and_grad(scaled, grad);
      report.value_vs_scale.emplace_back(s, value);
    }
  }

  // (b)/(c) per-iteration traces over held-out predictions
  std::vector<std::vector<double>> abs_c_rows, delta_rows;
  const auto triples = make_training_triples(held_out);
  const std::size_t n = std::min<std::size_t>(triples.size(), static_cast<std::size_t>(max_frames));
  std::size_t improved = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const Triple t = triples[k];
    const auto& frames = held_out.samples[static_cast<std::size_t>(t.sample)].frames;
    const SystemState predicted =
        linear_predict(frames[static_cast<std::size_t>(t.center_frame - 1)],
                       frames[static_cast<std::size_t>(t.center_frame)],
                       held_out.samples[static_cast<std::size_t>(t.sample)].dt, gravity);
    ProjectionResult projected = project(fn, predicted, cfg);
    std::vector<double> abs_c, deltas;
    for (const auto& rec : projected.trace.iterations) {
      abs_c.push_back(std::abs(rec.constraint_value));
      deltas.push_back(rec.correction_norm);
    }
    VectorXd grad;
    abs_c.push_back(std::abs(fn.value_and_grad(projected.state.positions, grad)));
    if (abs_c.back() <= abs_c.front()) ++improved;
    abs_c_rows.push_back(std::move(abs_c));
    delta_rows.push_back(std::move(deltas));
  }

  auto to_mat = [](const std::vector<std::vector<double>>& rows) {
    Mat m(static_cast<Eigen::Index>(rows.size()),
          rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < rows[r].size(); ++c)
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    return m;
  };
  report.abs_constraint = to_mat(abs_c_rows);
  report.correction_norm = to_mat(delta_rows);
  report.fraction_final_below_first =
      n > 0 ? static_cast<double>(improved) / static_cast<double>(n) : 0.0;

  auto medians = [](const Mat& m) {
    std::vector<double> out;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::vector<double> col(m.rows());
      for (Eigen::Index r = 0; r < m.rows(); ++r) col[static_cast<std::size_t>(r)] = m(r, c);
      std::sort(col.begin(), col.end());
      out.push_back(col.empty() ? 0.0 : col[col.size() / 2]);
    }
    return out;
  };
  report.median_abs_constraint = medians(report.abs_constraint);
  report.median_correction_norm = medians(report.correction_norm);
  return report;
}

void write_diagnostics_csv(const std::string& path_prefix, const DiagnosticsReport& report) {
  {
    std::ofstream os(path_prefix + "_value_vs_scale.csv");
    if (!os) throw std::runtime_error("cannot open diagnostics csv for writing");
    os << "scale,constraint_value\n";
    for (const auto& [s, v] : report.value_vs_scale) os << s << ',' << v << '\n';
  }
  {
    std::ofstream os(path_prefix + "_iterations.csv");
    if (!os) throw std::runtime_error("cannot open diagnostics csv for writing");
    os << "frame,iteration,abs_constraint,correction_norm\n";
    for (Eigen::Index r = 0; r < report.abs_constraint.rows(); ++r) {
      for (Eigen::Index c = 0; c < report.abs_constraint.cols(); ++c) {
        os << r << ',' << (c + 1) << ',' << report.abs_constraint(r, c) << ',';
        if (c < report.correction_norm.cols()) {
          os << report.correction_norm(r, c);
        }
        os << '\n';
      }
    }
  }
}

std::vector<RelaxationSweepEntry> relaxation_sweep(const ConstraintFunction& fn,
                                                   const SystemState& x0, const SystemState& x1,
                                                   const std::vector<double>& relaxations,
                                                   int num_frames, const ProjectionConfig& base_cfg,
                                                   const Vector2d& gravity,
                                                   const std::vector<int>& observation_indices) {
  std::vector<RelaxationSweepEntry> sweep;
  for (double r : relaxations) {
    RolloutOptions opts;
    opts.projection = base_cfg;
    opts.projection.relaxation = r;
    opts.gravity = gravity;
    RolloutResult rolled = rollout(fn, x0, x1, num_frames, opts);
    MetricReport report =
        constraint_residuals(rolled.trajectory, Scenario::rope, observation_indices);
    RelaxationSweepEntry entry;
    entry.relaxation = r;
    if (report.has(ResidualFamily::stretch)) entry.stretch = report.families.at(ResidualFamily::stretch);
    const std::size_t frames = entry.stretch.per_frame.size();
    const std::size_t tail = std::max<std::size_t>(1, frames / 4);
    double acc = 0.0;
    for (std::size_t f = frames - tail; f < frames; ++f) acc += entry.stretch.per_frame[f];
    entry.steady_state = acc / static_cast<double>(tail);
    sweep.push_back(std::move(entry));
  }
  return sweep;
}

void write_relaxation_csv(const std::string& path, const std::vector<RelaxationSweepEntry>& sweep) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "relaxation,frame,stretch_residual\n";
  for (const auto& entry : sweep) {
    for (std::size_t f = 0; f < entry.stretch.per_frame.size(); ++f) {
      os << entry.relaxation << ',' << f << ',' << entry.stretch.per_frame[f] << '\n';
    }
  }
}

void write_mse_csv(const std::string& path, const VectorXd& per_frame) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "frame,mse\n";
  for (Eigen::Index f = 0; f < per_frame.size(); ++f) os << f << ',' << per_frame[f] << '\n';
}

void write_residual_csv(const std::string& path, const MetricReport& report) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "frame,family,residual\n";
  for (const auto& [family, series] : report.families) {
    for (std::size_t f = 0; f < series.per_frame.size(); ++f) {
      os << f << ',' << residual_family_name(family) << ',' << series.per_frame[f] << '\n';
    }
  }
}

std::string format_summary_table(const std::vector<std::pair<Scenario, MetricReport>>& columns) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "Constraint";
  for (const auto& [scenario, report] : columns) os << std::setw(14) << scenario_name(scenario);
  os << '\n';
  for (ResidualFamily f : {ResidualFamily::shape, ResidualFamily::stretch, ResidualFamily::bend,
                           ResidualFamily::collision}) {
    os << std::setw(12) << residual_family_name(f);
    for (const auto& [scenario, report] : columns) {
      if (report.has(f)) {
        std::ostringstream val;
        val << std::scientific << std::setprecision(2) << report.mean(f);
        os << std::setw(14) << val.str();
      } else {
        os << std::setw(14) << "--";
      }
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace nproj
