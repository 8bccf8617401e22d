#include "nproj/predictor.hpp"

namespace nproj {

SystemState linear_predict(const SystemState& x_prev, const SystemState& x_curr, double dt,
                           const Vector2d& gravity) {
  if (x_prev.positions.size() != x_curr.positions.size() || x_prev.dim != x_curr.dim)
    throw std::invalid_argument("linear_predict: frame shapes differ");
  SystemState out = x_curr;
  const int m = x_curr.particle_count();
  for (int p = 0; p < m; ++p) {
    if (x_curr.pinned(p)) continue;
    for (int a = 0; a < x_curr.dim; ++a) {
      const Eigen::Index i = static_cast<Eigen::Index>(p) * x_curr.dim + a;
      out.positions[i] = 2.0 * x_curr.positions[i] - x_prev.positions[i] + gravity[a] * dt * dt;
    }
  }
  return out;
}

namespace {

template <typename ProjectFn>
RolloutResult run_rollout(const SystemState& x0, const SystemState& x1, int num_frames,
                          const RolloutOptions& opts, ProjectFn&& project_frame) {
  if (num_frames < 2) throw std::invalid_argument("rollout: num_frames >= 2 required");
  RolloutResult result;
  result.trajectory.dt = opts.dt;
  result.trajectory.frames.push_back(x0);
  result.trajectory.frames.push_back(x1);

  SystemState prev = x0;
  SystemState curr = x1;
  for (int f = 2; f < num_frames; ++f) {
    SystemState predicted = linear_predict(prev, curr, opts.dt, opts.gravity);
    SystemState next;
    try {
      next = project_frame(predicted, result.traces);
    } catch (const ProjectionNumericalError& err) {
      throw ProjectionNumericalError(err.iteration,
                                     std::string(err.what()) + " (frame " + std::to_string(f) + ")");
    }
    result.trajectory.frames.push_back(next);
    prev = std::move(curr);
    curr = result.trajectory.frames.back();
  }
  return result;
}

}  // namespace

RolloutResult rollout(const ConstraintFunction& fn, const SystemState& x0, const SystemState& x1,
                      int num_frames, const RolloutOptions& opts) {
  return run_rollout(x0, x1, num_frames, opts,
                     [&](const SystemState& predicted,
                         std::vector<std::vector<ProjectionTrace>>& traces) {
                       ProjectionResult projected = project(fn, predicted, opts.projection);
                       if (opts.record_traces) traces.push_back({std::move(projected.trace)});
                       return std::move(projected.state);
                     });
}

RolloutResult rollout_multigroup(const std::map<std::string, const ConstraintFunction*>& modules,
                                 const GroupPartition& partition, const SystemState& x0,
                                 const SystemState& x1, int num_frames,
                                 const RolloutOptions& opts) {
  return run_rollout(x0, x1, num_frames, opts,
                     [&](const SystemState& predicted,
                         std::vector<std::vector<ProjectionTrace>>& traces) {
                       MultigroupResult projected =
                           project_multigroup(modules, predicted, partition, opts.projection);
                       if (opts.record_traces) traces.push_back(std::move(projected.group_traces));
                       return std::move(projected.state);
                     });
}

}  // namespace nproj
