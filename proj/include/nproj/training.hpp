#pragma once

#include "nproj/dataset_io.hpp"
#include "nproj/predictor.hpp"

#include <optional>

namespace nproj {

struct TrainConfig {
  NetArch arch;                     // empty widths: derived as [m*d, 256 x4, 1]
  int batch_size = 256;
  LrSchedule schedule;
  int epochs = 600;
  ProjectionConfig projection;      // iterations, relaxation, center_input
  std::uint64_t seed = 0;
  Scenario scenario = Scenario::rigid1;
  bool gravity_on = false;
  Vector2d gravity{0.0, -9.8};
  double validation_fraction = 0.05;
  int threads = 0;                  // 0: hardware concurrency
  int samples_limit = 0;            // 0: use all samples

  /// Per-scenario training row: batch size, schedule, epochs, iterations,
  /// hidden width (512 for collision, 256 otherwise).
  static TrainConfig preset(Scenario scenario);

  Vector2d effective_gravity() const { return gravity_on ? gravity : Vector2d(0.0, 0.0); }
};

struct Triple {
  int sample = 0;
  int center_frame = 0;  // the triple is (center-1, center, center+1)
};

/// All consecutive frame triples of every sample, sample-major then frame-major.
std::vector<Triple> make_training_triples(const TrajectoryDataset& dataset);

struct LossResult {
  double loss = 0.0;
  std::vector<Mat> grad_w;
  std::vector<VectorXd> grad_b;
};

/// Mean over the batch of |project(linear_predict(prev, curr)) - next|^2 / (m*d),
/// differentiated through all projection iterations when with_grad is set.
LossResult projection_loss(const ConstraintNet& net, const TrajectoryDataset& dataset,
                           const std::vector<Triple>& triples, const TrainConfig& cfg,
                           bool with_grad);

/// Same loss for the correction-predicting baseline: x_pred = x_hat + net(x_hat).
LossResult baseline_loss(const ConstraintNet& net, const TrajectoryDataset& dataset,
                         const std::vector<Triple>& triples, const TrainConfig& cfg,
                         bool with_grad);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  ConstraintNet net;  // best-validation checkpoint
  std::vector<EpochLog> log;
  double best_val_loss = 0.0;
  int best_epoch = -1;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::string what, std::optional<ConstraintNet> last_good)
      : std::runtime_error(std::move(what)), last_good_checkpoint(std::move(last_good)) {}
  std::optional<ConstraintNet> last_good_checkpoint;
};

TrainResult train(const TrajectoryDataset& dataset, const TrainConfig& cfg);
TrainResult train_baseline_mlp(const TrajectoryDataset& dataset, const TrainConfig& cfg);

/// Trains one net per distinct module id over the group-sliced (and, for
/// shared ids, concatenated) data. Modules are independent; there is no joint
/// objective across groups.
std::map<std::string, TrainResult> train_multigroup(const TrajectoryDataset& dataset,
                                                    const GroupPartition& partition,
                                                    const TrainConfig& cfg);

/// Group-local view of a dataset (observed columns sliced to the group).
TrajectoryDataset slice_dataset(const TrajectoryDataset& dataset, const std::vector<int>& indices);

void write_training_log_csv(const std::string& path, const std::vector<EpochLog>& log);

}  // namespace nproj
