#pragma once

#include "nproj/core_types.hpp"
#include "nproj/scenario.hpp"

namespace nproj {

/// One position-based dynamics step: symplectic position update followed by
/// Gauss-Seidel passes over the analytic constraints. Pinned particles stay put.
SystemState simulate_step(const ScenarioSpec& spec, const SystemState& prev,
                          const SystemState& curr, double dt,
                          const MassModel& masses);

SystemState simulate_step(const ScenarioSpec& spec, const SystemState& prev,
                          const SystemState& curr, double dt);

/// Gauss-Seidel projection passes only (no inertial update); exposed for tests.
void project_constraints(const ScenarioSpec& spec, SystemState& state, const MassModel& masses);

/// Simulates num_samples short trajectories from randomized starts and records
/// the observed particles. Deterministic given seed; samples use independent
/// streams keyed by (seed, sample index). Observation noise never feeds back
/// into the simulator state.
TrajectoryDataset generate_dataset(const ScenarioSpec& spec, int num_samples,
                                   int frames_per_sample, std::uint64_t seed,
                                   double noise_sigma,
                                   const std::vector<int>& observation_indices);

}  // namespace nproj
