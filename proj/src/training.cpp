#include "nproj/training.hpp"

#include "nproj/rng.hpp"

#include <atomic>
#include <mutex>
#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

namespace nproj {
namespace {

// Fixed sub-batch width: parallel workers process chunks of this many batch
// elements and gradients reduce in chunk order, so results do not depend on
// the thread count.
constexpr int kChunk = 64;

struct ChunkGrads {
  double sse_sum = 0.0;
  std::vector<Mat> grad_w;
  std::vector<VectorXd> grad_b;
};

VectorXd pin_vector(const SystemState& frame) {
  VectorXd v(frame.positions.size());
  for (int p = 0; p < frame.particle_count(); ++p) {
    const double free = frame.pinned(p) ? 0.0 : 1.0;
    for (int a = 0; a < frame.dim; ++a) v[static_cast<Eigen::Index>(p) * frame.dim + a] = free;
  }
  return v;
}

/// Stacks linear predictions and targets for a chunk of triples.
void build_chunk(const TrajectoryDataset& dataset, const std::vector<Triple>& triples,
                 std::size_t begin, std::size_t end, const Vector2d& gravity, Mat& x_hat,
                 Mat& target) {
  const auto& first = dataset.samples.front().frames.front();
  const Eigen::Index width = first.positions.size();
  x_hat.resize(width, static_cast<Eigen::Index>(end - begin));
  target.resize(width, static_cast<Eigen::Index>(end - begin));
  for (std::size_t k = begin; k < end; ++k) {
    const Triple t = triples[k];
    const auto& frames = dataset.samples[static_cast<std::size_t>(t.sample)].frames;
    const SystemState predicted =
        linear_predict(frames[static_cast<std::size_t>(t.center_frame - 1)],
                       frames[static_cast<std::size_t>(t.center_frame)],
                       dataset.samples[static_cast<std::size_t>(t.sample)].dt, gravity);
    x_hat.col(static_cast<Eigen::Index>(k - begin)) = predicted.positions;
    target.col(static_cast<Eigen::Index>(k - begin)) =
        frames[static_cast<std::size_t>(t.center_frame + 1)].positions;
  }
}

/// Emits the full differentiable projection loop for one chunk and returns the
/// per-sample squared-error row (1xB). preds_out returns the projected state.
Var chunk_projection_sse(Tape& tape, const NetVars& vars, const NetArch& arch, const Mat& x_hat,
                         const Mat& target, const VectorXd& pins, int dim,
                         const ProjectionConfig& cfg) {
  const Eigen::Index batch = x_hat.cols();
  Var x = tape.leaf(x_hat);
  for (int i = 0; i < cfg.iterations; ++i) {
    Var xin = cfg.center_input ? tape.center(x, dim) : x;
    NetTapeForward fwd = net_forward_tape(tape, vars, arch, xin);
    Var g = net_input_grad_tape(tape, vars, arch, fwd);
    if (cfg.center_input) g = tape.center(g, dim);
    Var s = tape.col_dot(g, g);

    // Guard decisions come from concrete values and enter the graph as constants.
    Mat guard_on(1, batch), guard_off(1, batch);
    for (Eigen::Index c = 0; c < batch; ++c) {
      const bool active = tape.value(s)(0, c) >= cfg.grad_guard;
      guard_on(0, c) = active ? 1.0 : 0.0;
      guard_off(0, c) = active ? 0.0 : 1.0;
    }
    Var s_safe = tape.add(tape.ew_mul(s, tape.leaf(guard_on)), tape.leaf(guard_off));
    Var lambda = tape.ew_mul(tape.ew_div(fwd.output, s_safe), tape.leaf(guard_on));
    Var delta = tape.cmul(tape.col_scale(g, tape.scale(lambda, -cfg.relaxation)), pins);
    x = tape.add(x, delta);
    if (!tape.value(x).allFinite())
      throw ProjectionNumericalError(
          i + 1, "training projection produced a non-finite state at iteration " +
                     std::to_string(i + 1));
  }
  Var diff = tape.sub(x, tape.leaf(target));
  return tape.col_dot(diff, diff);
}

Var chunk_baseline_sse(Tape& tape, const NetVars& vars, const NetArch& arch, const Mat& x_hat,
                       const Mat& target, const VectorXd& pins) {
  Var x = tape.leaf(x_hat);
  NetTapeForward fwd = net_forward_tape(tape, vars, arch, x);
  Var pred = tape.add(x, tape.cmul(fwd.output, pins));
  Var diff = tape.sub(pred, tape.leaf(target));
  return tape.col_dot(diff, diff);
}

using ChunkSse = Var (*)(Tape&, const NetVars&, const NetArch&, const Mat&, const Mat&,
                         const VectorXd&, int, const ProjectionConfig&);

LossResult run_loss(const ConstraintNet& net, const TrajectoryDataset& dataset,
                    const std::vector<Triple>& triples, const TrainConfig& cfg, bool with_grad,
                    bool baseline) {
  net.validate();
  if (triples.empty()) throw std::invalid_argument("loss: empty batch");
  const auto& first = dataset.samples.front().frames.front();
  const int dim = first.dim;
  const Eigen::Index width = first.positions.size();
  if (net.arch.input_width() != static_cast<int>(width))
    throw std::invalid_argument("loss: net input width does not match observed state width");
  const VectorXd pins = pin_vector(first);
  const Vector2d gravity = cfg.effective_gravity();
  const double total = static_cast<double>(triples.size());
  const double norm = 1.0 / (total * static_cast<double>(width));

  const std::size_t n_chunks = (triples.size() + kChunk - 1) / kChunk;
  std::vector<ChunkGrads> chunks(n_chunks);

  std::atomic<std::size_t> cursor{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;

  auto worker = [&]() {
    try {
      for (;;) {
        const std::size_t c = cursor.fetch_add(1);
        if (c >= n_chunks) break;
        const std::size_t begin = c * kChunk;
        const std::size_t end = std::min(begin + kChunk, triples.size());
        Mat x_hat, target;
        build_chunk(dataset, triples, begin, end, gravity, x_hat, target);

        Tape tape;
        NetVars vars = net_to_tape(tape, net, with_grad);
        Var sse = baseline
                      ? chunk_baseline_sse(tape, vars, net.arch, x_hat, target, pins)
                      : chunk_projection_sse(tape, vars, net.arch, x_hat, target, pins, dim,
                                             cfg.projection);
        chunks[c].sse_sum = tape.value(sse).sum();
        if (with_grad) {
          tape.backward(sse, Mat::Constant(1, x_hat.cols(), norm));
          collect_param_grads(tape, vars, chunks[c].grad_w, chunks[c].grad_b);
        }
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!first_error) first_error = std::current_exception();
    }
  };

  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t n_threads =
      std::min<std::size_t>(n_chunks, cfg.threads > 0 ? static_cast<unsigned>(cfg.threads) : hw);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  LossResult result;
  for (const auto& c : chunks) result.loss += c.sse_sum;
  result.loss *= norm;
  if (with_grad) {
    result.grad_w = chunks.front().grad_w;
    result.grad_b = chunks.front().grad_b;
    for (std::size_t c = 1; c < n_chunks; ++c) {
      for (std::size_t l = 0; l < result.grad_w.size(); ++l) {
        result.grad_w[l] += chunks[c].grad_w[l];
        result.grad_b[l] += chunks[c].grad_b[l];
      }
    }
  }
  return result;
}

NetArch default_arch(int input_width, int hidden, int output_width) {
  NetArch arch;
  arch.widths = {input_width, hidden, hidden, hidden, hidden, output_width};
  return arch;
}

}  // namespace

TrainConfig TrainConfig::preset(Scenario scenario) {
  TrainConfig cfg;
  cfg.scenario = scenario;
  cfg.schedule = LrSchedule{1e-3, 20, 0.8};
  switch (scenario) {
    case Scenario::rigid1:
      cfg.batch_size = 256;
      cfg.epochs = 600;
      cfg.projection.iterations = 5;
      break;
    case Scenario::rigid2:
      cfg.batch_size = 512;
      cfg.epochs = 1000;
      cfg.projection.iterations = 8;
      break;
    case Scenario::rope:
      cfg.batch_size = 256;
      cfg.epochs = 1000;
      cfg.projection.iterations = 10;
      break;
    case Scenario::articulated:
      cfg.batch_size = 512;
      cfg.epochs = 1000;
      cfg.projection.iterations = 8;
      cfg.gravity_on = true;
      break;
    case Scenario::collision:
      cfg.batch_size = 256;
      cfg.epochs = 1000;
      cfg.projection.iterations = 10;
      cfg.gravity_on = true;
      break;
  }
  return cfg;
}

std::vector<Triple> make_training_triples(const TrajectoryDataset& dataset) {
  dataset.validate();
  const int frames = dataset.frames_per_sample();
  if (frames < 3) throw std::invalid_argument("make_training_triples: need at least 3 frames");
  std::vector<Triple> triples;
  triples.reserve(dataset.samples.size() * static_cast<std::size_t>(frames - 2));
  for (std::size_t s = 0; s < dataset.samples.size(); ++s) {
    for (int f = 1; f + 1 < frames; ++f) triples.push_back({static_cast<int>(s), f});
  }
  return triples;
}

LossResult projection_loss(const ConstraintNet& net, const TrajectoryDataset& dataset,
                           const std::vector<Triple>& triples, const TrainConfig& cfg,
                           bool with_grad) {
  if (net.arch.output_width() != 1)
    throw std::invalid_argument("projection_loss: scalar constraint output expected");
  return run_loss(net, dataset, triples, cfg, with_grad, /*baseline=*/false);
}

LossResult baseline_loss(const ConstraintNet& net, const TrajectoryDataset& dataset,
                         const std::vector<Triple>& triples, const TrainConfig& cfg,
                         bool with_grad) {
  return run_loss(net, dataset, triples, cfg, with_grad, /*baseline=*/true);
}

namespace {

TrainResult train_impl(const TrajectoryDataset& full_dataset, const TrainConfig& cfg,
                       bool baseline) {
  TrajectoryDataset limited;
  const TrajectoryDataset* dataset = &full_dataset;
  if (cfg.samples_limit > 0 &&
      cfg.samples_limit < static_cast<int>(full_dataset.samples.size())) {
    limited = full_dataset;
    limited.samples.resize(static_cast<std::size_t>(cfg.samples_limit));
    dataset = &limited;
  }
  dataset->validate();
  const auto& first = dataset->samples.front().frames.front();
  const int width = static_cast<int>(first.positions.size());

  NetArch arch = cfg.arch;
  if (arch.widths.empty()) {
    const int hidden = cfg.scenario == Scenario::collision ? 512 : 256;
    arch = default_arch(width, hidden, baseline ? width : 1);
  }
  if (arch.input_width() != width)
    throw std::invalid_argument("train: arch input width " + std::to_string(arch.input_width()) +
                                " does not match observed state width " + std::to_string(width));

  ConstraintNet net = net_init(arch, cfg.seed);
  AdamState adam = AdamState::like(net);

  // Held-out split at sample granularity.
  std::vector<int> sample_order(dataset->samples.size());
  for (std::size_t i = 0; i < sample_order.size(); ++i) sample_order[i] = static_cast<int>(i);
  Rng split_rng = Rng::for_sample(cfg.seed, 0x5EEDF00Dull);
  split_rng.shuffle(sample_order);
  std::size_t val_count = 0;
  if (dataset->samples.size() >= 2 && cfg.validation_fraction > 0) {
    val_count = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(cfg.validation_fraction *
                                                 static_cast<double>(dataset->samples.size()))));
    val_count = std::min(val_count, dataset->samples.size() - 1);
  }
  std::vector<bool> is_val(dataset->samples.size(), false);
  for (std::size_t i = 0; i < val_count; ++i)
    is_val[static_cast<std::size_t>(sample_order[i])] = true;

  const int frames = dataset->frames_per_sample();
  std::vector<Triple> train_triples, val_triples;
  for (std::size_t s = 0; s < dataset->samples.size(); ++s) {
    for (int f = 1; f + 1 < frames; ++f) {
      (is_val[s] ? val_triples : train_triples).push_back({static_cast<int>(s), f});
    }
  }
  if (val_triples.empty()) val_triples = train_triples;

  auto eval_loss = [&](const std::vector<Triple>& triples) {
    return (baseline ? baseline_loss(net, *dataset, triples, cfg, false)
                     : projection_loss(net, *dataset, triples, cfg, false))
        .loss;
  };

  TrainResult result;
  result.best_val_loss = std::numeric_limits<double>::infinity();
  const auto t0 = std::chrono::steady_clock::now();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.schedule.at_epoch(epoch);
    Rng epoch_rng = Rng::for_sample(cfg.seed, 0x10000ull + static_cast<std::uint64_t>(epoch));
    epoch_rng.shuffle(train_triples);

    double epoch_sse = 0.0;
    for (std::size_t begin = 0; begin < train_triples.size(); begin += cfg.batch_size) {
      const std::size_t end =
          std::min(begin + static_cast<std::size_t>(cfg.batch_size), train_triples.size());
      std::vector<Triple> batch(train_triples.begin() + static_cast<std::ptrdiff_t>(begin),
                                train_triples.begin() + static_cast<std::ptrdiff_t>(end));
      LossResult batch_loss;
      try {
        batch_loss = baseline ? baseline_loss(net, *dataset, batch, cfg, true)
                              : projection_loss(net, *dataset, batch, cfg, true);
      } catch (const ProjectionNumericalError& err) {
        throw TrainingDiverged(std::string("training diverged: ") + err.what(),
                               result.best_epoch >= 0 ? std::optional<ConstraintNet>(result.net)
                                                      : std::nullopt);
      }
      if (!std::isfinite(batch_loss.loss)) {
        throw TrainingDiverged("training diverged: non-finite loss at epoch " +
                                   std::to_string(epoch),
                               result.best_epoch >= 0 ? std::optional<ConstraintNet>(result.net)
                                                      : std::nullopt);
      }
      epoch_sse += batch_loss.loss * static_cast<double>(batch.size());
      adam_step(net, batch_loss.grad_w, batch_loss.grad_b, adam, lr);
    }

    const double train_loss = epoch_sse / static_cast<double>(train_triples.size());
    const double val_loss = eval_loss(val_triples);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back({epoch, train_loss, val_loss, lr, wall});
    if (val_loss < result.best_val_loss) {
      result.best_val_loss = val_loss;
      result.best_epoch = epoch;
      result.net = net;
    }
  }
  if (result.best_epoch < 0) result.net = net;
  return result;
}

}  // namespace

TrainResult train(const TrajectoryDataset& dataset, const TrainConfig& cfg) {
  return train_impl(dataset, cfg, /*baseline=*/false);
}

TrainResult train_baseline_mlp(const TrajectoryDataset& dataset, const TrainConfig& cfg) {
  return train_impl(dataset, cfg, /*baseline=*/true);
}

TrajectoryDataset slice_dataset(const TrajectoryDataset& dataset, const std::vector<int>& indices) {
  TrajectoryDataset out;
  out.scenario = dataset.scenario;
  out.noise_sigma = dataset.noise_sigma;
  out.seed = dataset.seed;
  out.metadata = dataset.metadata;
  out.observation_indices.clear();
  for (int idx : indices)
    out.observation_indices.push_back(dataset.observation_indices[static_cast<std::size_t>(idx)]);
  out.samples.reserve(dataset.samples.size());
  for (const auto& sample : dataset.samples) {
    TrajectorySample sliced;
    sliced.dt = sample.dt;
    sliced.frames.reserve(sample.frames.size());
    for (const auto& frame : sample.frames) sliced.frames.push_back(state_slice(frame, indices));
    out.samples.push_back(std::move(sliced));
  }
  return out;
}

std::map<std::string, TrainResult> train_multigroup(const TrajectoryDataset& dataset,
                                                    const GroupPartition& partition,
                                                    const TrainConfig& cfg) {
  dataset.validate();
  partition.validate(dataset.observed_particles());

  // Concatenate the group-local views per module id.
  std::map<std::string, TrajectoryDataset> per_module;
  for (std::size_t g = 0; g < partition.groups.size(); ++g) {
    TrajectoryDataset view = slice_dataset(dataset, partition.groups[g]);
    auto [it, inserted] = per_module.try_emplace(partition.net_binding[g], std::move(view));
    if (!inserted) {
      auto& existing = it->second;
      if (existing.samples.front().frames.front().particle_count() !=
          view.samples.front().frames.front().particle_count())
        throw std::invalid_argument("train_multigroup: groups sharing module '" +
                                    partition.net_binding[g] + "' have different arity");
      for (auto& s : view.samples) existing.samples.push_back(std::move(s));
    }
  }

  std::map<std::string, TrainResult> results;
  for (auto& [module_id, module_data] : per_module) {
    results.emplace(module_id, train(module_data, cfg));
  }
  return results;
}

void write_training_log_csv(const std::string& path, const std::vector<EpochLog>& log) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "epoch,train_loss,val_loss,lr,wall_seconds\n";
  for (const auto& e : log) {
    os << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.lr << ','
       << e.wall_seconds << '\n';
  }
}

}  // namespace nproj
