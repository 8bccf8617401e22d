#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace nproj {

using Eigen::VectorXd;

/// Scenario identifiers. Values are part of the dataset wire format, do not reorder.
enum class Scenario : std::uint32_t {
  rigid1 = 0,
  rigid2 = 1,
  rope = 2,
  articulated = 3,
  collision = 4,
};

const char* scenario_name(Scenario s);
Scenario scenario_from_name(const std::string& name);

/// One frame of particle positions, interleaved per particle: x1,y1,x2,y2,...
/// Pinned particles are externally fixed; prediction and projection never move them.
struct SystemState {
  VectorXd positions;
  int dim = 2;
  std::vector<std::uint8_t> pin_mask;

  int particle_count() const { return dim > 0 ? static_cast<int>(positions.size()) / dim : 0; }
  bool pinned(int particle) const { return pin_mask[static_cast<std::size_t>(particle)] != 0; }

  /// Throws std::invalid_argument if sizes are inconsistent.
  void validate() const;
};

/// Sub-state over the given particle indices, order preserved, pin mask sliced too.
SystemState state_slice(const SystemState& state, const std::vector<int>& indices);

/// Accumulates per-particle correction contributions for Jacobi synchronization.
/// Contributions targeting pinned particles are dropped; finalize() averages the
/// rest and leaves untouched particles at zero.
class CorrectionBuffer {
 public:
  CorrectionBuffer(int particle_count, int dim);

  /// values is |indices|*dim scalars in the same interleaved layout as SystemState.
  void scatter_add(const SystemState& target, const std::vector<int>& indices,
                   const VectorXd& values);

  VectorXd finalize() const;
  int count(int particle) const { return counts_[static_cast<std::size_t>(particle)]; }

 private:
  int dim_;
  VectorXd sums_;
  std::vector<int> counts_;
};

struct TrajectorySample {
  std::vector<SystemState> frames;
  double dt = 0.1;
};

struct TrajectoryDataset {
  std::vector<TrajectorySample> samples;
  std::vector<int> observation_indices;
  Scenario scenario = Scenario::rigid1;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  /// Free-form generator metadata for the sidecar file.
  std::map<std::string, std::string> metadata;

  int frames_per_sample() const {
    return samples.empty() ? 0 : static_cast<int>(samples.front().frames.size());
  }
  int observed_particles() const { return static_cast<int>(observation_indices.size()); }
  int dim() const {
    return samples.empty() || samples.front().frames.empty() ? 2
                                                             : samples.front().frames.front().dim;
  }
  double dt() const { return samples.empty() ? 0.1 : samples.front().dt; }

  /// Checks the uniform-shape invariants (same m, d, pin mask and frame count everywhere).
  void validate() const;
};

/// Overlapping particle groups with their network-module bindings.
struct GroupPartition {
  std::vector<std::vector<int>> groups;
  std::vector<std::string> net_binding;                // group index -> module id
  std::map<int, std::vector<int>> shared;              // particle -> groups containing it

  static GroupPartition make(std::vector<std::vector<int>> groups,
                             std::vector<std::string> bindings);

  /// Every particle in [0, particle_count) must belong to at least one group.
  void validate(int particle_count) const;
};

enum class SyncMode { jacobi, gauss_seidel };

struct ProjectionConfig {
  int iterations = 5;
  double relaxation = 1.0;
  double grad_guard = 1e-12;
  SyncMode sync_mode = SyncMode::jacobi;
  bool center_input = false;

  void validate() const;
};

/// Per-particle masses for the classical simulators. The projection operator
/// itself always runs the identity-mass form.
struct MassModel {
  VectorXd per_particle_mass;

  static MassModel uniform(int particle_count);
  void validate() const;
};

}  // namespace nproj
