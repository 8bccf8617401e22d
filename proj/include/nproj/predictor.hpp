#pragma once

#include "nproj/projection.hpp"

namespace nproj {

/// x_hat = 2*curr - prev + gravity*dt^2 on free particles; pinned particles
/// copy their current position. Velocity only ever exists as the frame pair.
SystemState linear_predict(const SystemState& x_prev, const SystemState& x_curr, double dt,
                           const Vector2d& gravity);

struct RolloutOptions {
  ProjectionConfig projection;
  Vector2d gravity{0.0, 0.0};
  double dt = 0.1;
  bool record_traces = false;
};

struct RolloutResult {
  TrajectorySample trajectory;                       // includes the two seed frames
  std::vector<std::vector<ProjectionTrace>> traces;  // per predicted frame, per group
};

/// Alternates linear prediction and projection for num_frames total frames.
RolloutResult rollout(const ConstraintFunction& fn, const SystemState& x0, const SystemState& x1,
                      int num_frames, const RolloutOptions& opts);

RolloutResult rollout_multigroup(const std::map<std::string, const ConstraintFunction*>& modules,
                                 const GroupPartition& partition, const SystemState& x0,
                                 const SystemState& x1, int num_frames,
                                 const RolloutOptions& opts);

}  // namespace nproj
