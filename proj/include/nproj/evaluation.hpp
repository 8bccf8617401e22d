#pragma once

#include "nproj/training.hpp"

namespace nproj {

enum class ResidualFamily { shape, stretch, bend, collision };
const char* residual_family_name(ResidualFamily f);

struct ResidualSeries {
  std::vector<double> per_frame;
  double mean = 0.0;
};

struct MetricReport {
  std::map<ResidualFamily, ResidualSeries> families;
  bool has(ResidualFamily f) const { return families.count(f) != 0; }
  double mean(ResidualFamily f) const { return families.at(f).mean; }
};

/// Mean squared coordinate error per frame.
VectorXd rollout_mse(const TrajectorySample& predicted, const TrajectorySample& truth);

/// Analytic per-family residuals measured on the observed points of a
/// trajectory, using rest geometry from the scenario preset. Families follow
/// the scenario: rigid -> shape; rope -> stretch+bend; articulated ->
/// shape+stretch+bend; collision -> shape+collision (one-sided penetration).
MetricReport constraint_residuals(const TrajectorySample& traj, Scenario scenario,
                                  const std::vector<int>& observation_indices);
MetricReport constraint_residuals(const TrajectorySample& traj, Scenario scenario);

/// Aggregates per-frame residual means over many trajectories (mean over
/// frames, then over samples).
MetricReport aggregate_reports(const std::vector<MetricReport>& reports);

/// Correction-predicting baseline: x_next = x_hat + net(x_hat), pins untouched.
SystemState baseline_step(const ConstraintNet& net, const SystemState& prev,
                          const SystemState& curr, double dt, const Vector2d& gravity);
RolloutResult rollout_baseline(const ConstraintNet& net, const SystemState& x0,
                               const SystemState& x1, int num_frames, const RolloutOptions& opts);

/// Trains the baseline on the same triples and loss as the projection model.
TrainResult naive_mlp_baseline(const TrajectoryDataset& dataset, const TrainConfig& cfg);

struct DiagnosticsReport {
  std::vector<std::pair<double, double>> value_vs_scale;  // (scale factor, C value)
  // One row per evaluated frame; |C| has iterations+1 columns (value after the
  // final update included), |dx| has one column per iteration.
  Mat abs_constraint;
  Mat correction_norm;
  std::vector<double> median_abs_constraint;
  std::vector<double> median_correction_norm;
  double fraction_final_below_first = 0.0;
};

/// Fig-7-style diagnostics: C value against a uniform scaling of the rest
/// shape, and per-iteration |C| / |dx| statistics over held-out predictions.
DiagnosticsReport constraint_diagnostics(const ConstraintFunction& fn,
                                         const TrajectoryDataset& held_out,
                                         const ProjectionConfig& cfg, const Vector2d& gravity,
                                         Scenario scenario, int max_frames);

void write_diagnostics_csv(const std::string& path_prefix, const DiagnosticsReport& report);

struct RelaxationSweepEntry {
  double relaxation = 0.0;
  ResidualSeries stretch;
  double steady_state = 0.0;  // mean stretch over the trailing quarter of frames
};

/// Rollouts of the rope start frames under varying relaxation coefficients.
std::vector<RelaxationSweepEntry> relaxation_sweep(const ConstraintFunction& fn,
                                                   const SystemState& x0, const SystemState& x1,
                                                   const std::vector<double>& relaxations,
                                                   int num_frames, const ProjectionConfig& base_cfg,
                                                   const Vector2d& gravity,
                                                   const std::vector<int>& observation_indices);

void write_relaxation_csv(const std::string& path, const std::vector<RelaxationSweepEntry>& sweep);

void write_mse_csv(const std::string& path, const VectorXd& per_frame);
void write_residual_csv(const std::string& path, const MetricReport& report);

/// Table-style summary: residual family rows by scenario columns.
std::string format_summary_table(const std::vector<std::pair<Scenario, MetricReport>>& columns);

}  // namespace nproj
