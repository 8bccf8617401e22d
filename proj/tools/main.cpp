#include "nproj/classical_sim.hpp"
#include "nproj/dataset_io.hpp"
#include "nproj/evaluation.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using namespace nproj;

std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("bad config line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

GroupPartition read_partition_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open partition file: " + path);
  std::vector<std::vector<int>> groups;
  std::vector<std::string> bindings;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::vector<int> group;
    std::string binding = "default";
    std::string tok;
    while (ls >> tok) {
      if (tok.rfind("net=", 0) == 0) {
        binding = tok.substr(4);
      } else {
        group.push_back(std::stoi(tok));
      }
    }
    if (!group.empty()) {
      groups.push_back(std::move(group));
      bindings.push_back(binding);
    }
  }
  return GroupPartition::make(std::move(groups), std::move(bindings));
}

Vector2d gravity_for(const std::string& mode, Scenario scenario) {
  if (mode == "on") return Vector2d(0.0, -9.8);
  if (mode == "off") return Vector2d(0.0, 0.0);
  const ScenarioSpec spec = scenario_preset(scenario);
  return spec.gravity;
}

int cmd_gen(const std::string& config_path, const std::string& scenario_name_arg, int samples,
            int frames, std::uint64_t seed, double noise, bool noise_set, const std::string& out,
            bool force) {
  std::string scenario_str = scenario_name_arg;
  std::map<std::string, std::string> cfg;
  if (!config_path.empty()) cfg = read_kv_file(config_path);
  if (cfg.count("scenario") && scenario_str.empty()) scenario_str = cfg["scenario"];
  if (scenario_str.empty())
    throw std::invalid_argument("gen: --scenario or a config with scenario= is required");

  ScenarioSpec spec = scenario_preset(scenario_from_name(scenario_str));
  if (cfg.count("samples")) samples = std::stoi(cfg["samples"]);
  if (cfg.count("frames")) frames = std::stoi(cfg["frames"]);
  if (cfg.count("seed")) seed = std::stoull(cfg["seed"]);
  if (cfg.count("solver_iterations")) spec.solver_iterations = std::stoi(cfg["solver_iterations"]);
  if (cfg.count("impulse_lo")) spec.impulse_lo = std::stod(cfg["impulse_lo"]);
  if (cfg.count("impulse_hi")) spec.impulse_hi = std::stod(cfg["impulse_hi"]);
  if (cfg.count("noise_sigma") && !noise_set) {
    noise = std::stod(cfg["noise_sigma"]);
    noise_set = true;
  }
  if (!noise_set) noise = spec.default_noise_sigma;

  if (!force && std::filesystem::exists(out))
    throw std::invalid_argument("gen: " + out + " exists (use --force to overwrite)");

  TrajectoryDataset dataset = generate_dataset(spec, samples, frames, seed, noise, {});
  write_dataset(out, dataset);

  const MetricReport report = constraint_residuals(dataset.samples.front(), dataset.scenario,
                                                   dataset.observation_indices);
  std::cout << "wrote " << out << ": scenario=" << scenario_name(dataset.scenario)
            << " samples=" << samples << " frames=" << frames << " observed="
            << dataset.observed_particles() << " noise=" << noise << "\n";
  std::cout << "residual check (sample 0 means):";
  for (const auto& [family, series] : report.families)
    std::cout << ' ' << residual_family_name(family) << '=' << series.mean;
  std::cout << "\n";
  return 0;
}

int cmd_train(const std::string& data_path, const std::string& out, const std::string& config_path,
              int epochs, int batch, double lr, int lr_step, double lr_gamma, int iterations,
              double relaxation, std::uint64_t seed, bool seed_set, const std::string& arch_str,
              int samples_limit, int threads, const std::string& gravity_mode, bool baseline,
              bool center_input, const std::string& groups_path) {
  TrajectoryDataset dataset = read_dataset(data_path);
  TrainConfig cfg = TrainConfig::preset(dataset.scenario);
  if (!config_path.empty()) {
    auto kv = read_kv_file(config_path);
    if (kv.count("batch_size")) cfg.batch_size = std::stoi(kv["batch_size"]);
    if (kv.count("init_lr")) cfg.schedule.init_lr = std::stod(kv["init_lr"]);
    if (kv.count("lr_step")) cfg.schedule.step_epochs = std::stoi(kv["lr_step"]);
    if (kv.count("lr_gamma")) cfg.schedule.gamma = std::stod(kv["lr_gamma"]);
    if (kv.count("epochs")) cfg.epochs = std::stoi(kv["epochs"]);
    if (kv.count("iterations")) cfg.projection.iterations = std::stoi(kv["iterations"]);
    if (kv.count("relaxation")) cfg.projection.relaxation = std::stod(kv["relaxation"]);
    if (kv.count("seed")) cfg.seed = std::stoull(kv["seed"]);
    if (kv.count("arch")) cfg.arch = NetArch::parse(kv["arch"]);
    if (kv.count("gravity")) cfg.gravity_on = kv["gravity"] == "on";
    if (kv.count("center_input")) cfg.projection.center_input = kv["center_input"] == "on";
  }
  if (epochs > 0) cfg.epochs = epochs;
  if (batch > 0) cfg.batch_size = batch;
  if (lr > 0) cfg.schedule.init_lr = lr;
  if (lr_step > 0) cfg.schedule.step_epochs = lr_step;
  if (lr_gamma > 0) cfg.schedule.gamma = lr_gamma;
  if (iterations >= 0) cfg.projection.iterations = iterations;
  if (relaxation > 0) cfg.projection.relaxation = relaxation;
  if (seed_set) cfg.seed = seed;
  if (!arch_str.empty()) cfg.arch = NetArch::parse(arch_str);
  if (samples_limit > 0) cfg.samples_limit = samples_limit;
  if (threads > 0) cfg.threads = threads;
  if (gravity_mode == "on") cfg.gravity_on = true;
  if (gravity_mode == "off") cfg.gravity_on = false;
  if (center_input) cfg.projection.center_input = true;

  auto metadata = [&](const TrainResult& r, const std::string& module_id) {
    std::map<std::string, std::string> meta;
    meta["scenario"] = scenario_name(dataset.scenario);
    meta["seed"] = std::to_string(cfg.seed);
    meta["epochs"] = std::to_string(cfg.epochs);
    meta["batch_size"] = std::to_string(cfg.batch_size);
    meta["init_lr"] = std::to_string(cfg.schedule.init_lr);
    meta["lr_step"] = std::to_string(cfg.schedule.step_epochs);
    meta["lr_gamma"] = std::to_string(cfg.schedule.gamma);
    meta["iterations"] = std::to_string(cfg.projection.iterations);
    meta["relaxation"] = std::to_string(cfg.projection.relaxation);
    meta["center_input"] = cfg.projection.center_input ? "on" : "off";
    meta["gravity"] = cfg.gravity_on ? "on" : "off";
    meta["best_epoch"] = std::to_string(r.best_epoch);
    meta["best_val_loss"] = std::to_string(r.best_val_loss);
    meta["baseline"] = baseline ? "yes" : "no";
    if (!module_id.empty()) meta["module"] = module_id;
    return meta;
  };

  try {
    if (!groups_path.empty()) {
      const GroupPartition partition = read_partition_file(groups_path);
      auto results = train_multigroup(dataset, partition, cfg);
      for (const auto& [module_id, result] : results) {
        const std::string path = results.size() == 1 ? out : out + "." + module_id;
        write_checkpoint(path, result.net, metadata(result, module_id));
        write_training_log_csv(path + ".log.csv", result.log);
        std::cout << "module " << module_id << ": best_val_loss=" << result.best_val_loss
                  << " (epoch " << result.best_epoch << ") -> " << path << "\n";
      }
    } else {
      TrainResult result = baseline ? train_baseline_mlp(dataset, cfg) : train(dataset, cfg);
      write_checkpoint(out, result.net, metadata(result, ""));
      write_training_log_csv(out + ".log.csv", result.log);
      std::cout << "final train_loss=" << result.log.back().train_loss
                << " val_loss=" << result.log.back().val_loss
                << " best_val_loss=" << result.best_val_loss << " (epoch " << result.best_epoch
                << ")\n";
    }
  } catch (const TrainingDiverged& err) {
    std::cerr << "error: " << err.what() << "\n";
    if (err.last_good_checkpoint) {
      write_checkpoint(out, *err.last_good_checkpoint, {{"diverged", "yes"}});
      std::cerr << "last good checkpoint written to " << out << "\n";
    }
    return 3;
  }
  return 0;
}

int cmd_rollout(const std::vector<std::string>& model_args, const std::string& data_path,
                int sample_index, int frames, const std::string& out,
                const std::string& groups_path, const std::string& trace_path,
                const std::string& gravity_mode, int iterations, double relaxation,
                bool center_input) {
  TrajectoryDataset dataset = read_dataset(data_path);
  if (sample_index < 0 || sample_index >= static_cast<int>(dataset.samples.size()))
    throw std::invalid_argument("rollout: sample index out of range");
  const auto& seed_frames = dataset.samples[static_cast<std::size_t>(sample_index)].frames;
  if (seed_frames.size() < 2) throw std::invalid_argument("rollout: need two initial frames");

  std::map<std::string, ConstraintNet> nets;
  std::map<std::string, std::string> first_meta;
  for (const auto& arg : model_args) {
    const auto eq = arg.find('=');
    const std::string id = eq == std::string::npos ? "default" : arg.substr(0, eq);
    const std::string path = eq == std::string::npos ? arg : arg.substr(eq + 1);
    std::map<std::string, std::string> meta;
    nets.emplace(id, read_checkpoint(path, &meta));
    if (first_meta.empty()) first_meta = meta;
  }

  RolloutOptions opts;
  opts.dt = dataset.dt();
  opts.gravity = gravity_for(gravity_mode, dataset.scenario);
  if (gravity_mode == "auto" && first_meta.count("gravity"))
    opts.gravity = first_meta["gravity"] == "on" ? Vector2d(0.0, -9.8) : Vector2d(0.0, 0.0);
  if (first_meta.count("iterations")) opts.projection.iterations = std::stoi(first_meta["iterations"]);
  if (first_meta.count("relaxation")) opts.projection.relaxation = std::stod(first_meta["relaxation"]);
  if (first_meta.count("center_input")) opts.projection.center_input = first_meta["center_input"] == "on";
  if (iterations > 0) opts.projection.iterations = iterations;
  if (relaxation > 0) opts.projection.relaxation = relaxation;
  if (center_input) opts.projection.center_input = true;
  opts.record_traces = !trace_path.empty();

  RolloutResult result;
  if (!groups_path.empty()) {
    const GroupPartition partition = read_partition_file(groups_path);
    std::map<std::string, NetConstraint> fns;
    std::map<std::string, const ConstraintFunction*> modules;
    for (const auto& [id, net] : nets) {
      fns.emplace(id, NetConstraint(net));
      modules[id] = &fns.at(id);
    }
    result = rollout_multigroup(modules, partition, seed_frames[0], seed_frames[1], frames, opts);
  } else {
    if (nets.size() != 1)
      throw std::invalid_argument("rollout: exactly one --model required without --groups");
    NetConstraint fn(nets.begin()->second);
    result = rollout(fn, seed_frames[0], seed_frames[1], frames, opts);
  }

  TrajectoryDataset out_data;
  out_data.scenario = dataset.scenario;
  out_data.observation_indices = dataset.observation_indices;
  out_data.noise_sigma = 0.0;
  out_data.seed = dataset.seed;
  out_data.metadata["source"] = "rollout";
  out_data.samples.push_back(result.trajectory);
  write_dataset(out, out_data);

  if (!trace_path.empty() && !result.traces.empty()) {
    // Concatenate per-frame traces group-wise for the CSV.
    std::vector<ProjectionTrace> merged(result.traces.front().size());
    for (const auto& frame_traces : result.traces) {
      for (std::size_t g = 0; g < frame_traces.size(); ++g) {
        for (const auto& rec : frame_traces[g].iterations)
          merged[g].iterations.push_back(rec);
      }
    }
    write_trace_csv(trace_path, merged);
  }
  std::cout << "wrote " << out << ": " << frames << " frames\n";
  return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& truth_path,
             const std::string& scenario_str, const std::string& out_prefix) {
  if (scenario_str.empty()) throw std::invalid_argument("eval: --scenario is required");
  const Scenario scenario = scenario_from_name(scenario_str);
  TrajectoryDataset pred = read_dataset(pred_path);
  TrajectoryDataset truth = read_dataset(truth_path);
  if (pred.samples.empty() || truth.samples.empty())
    throw std::invalid_argument("eval: empty dataset");

  const std::size_t n = std::min(pred.samples.size(), truth.samples.size());
  std::vector<MetricReport> reports;
  VectorXd mse_acc;
  for (std::size_t s = 0; s < n; ++s) {
    const auto& p = pred.samples[s];
    const auto& t = truth.samples[s];
    const std::size_t frames = std::min(p.frames.size(), t.frames.size());
    TrajectorySample pc{std::vector<SystemState>(p.frames.begin(),
                                                 p.frames.begin() + static_cast<std::ptrdiff_t>(frames)),
                        p.dt};
    TrajectorySample tc{std::vector<SystemState>(t.frames.begin(),
                                                 t.frames.begin() + static_cast<std::ptrdiff_t>(frames)),
                        t.dt};
    const VectorXd mse = rollout_mse(pc, tc);
    if (mse_acc.size() == 0) mse_acc = VectorXd::Zero(mse.size());
    if (mse.size() != mse_acc.size()) throw std::invalid_argument("eval: frame counts differ");
    mse_acc += mse;
    reports.push_back(constraint_residuals(pc, scenario, pred.observation_indices));
  }
  mse_acc /= static_cast<double>(n);
  const MetricReport aggregate = aggregate_reports(reports);

  write_mse_csv(out_prefix + "_mse.csv", mse_acc);
  write_residual_csv(out_prefix + "_residuals.csv", aggregate);
  std::cout << format_summary_table({{scenario, aggregate}});
  std::cout << "mean MSE over " << n << " samples, frame " << (mse_acc.size() - 1) << ": "
            << mse_acc[mse_acc.size() - 1] << "\n";
  return 0;
}

int cmd_diag(const std::string& model_path, const std::string& data_path,
             const std::string& out_prefix, int max_frames, const std::string& gravity_mode) {
  std::map<std::string, std::string> meta;
  const ConstraintNet net = read_checkpoint(model_path, &meta);
  TrajectoryDataset dataset = read_dataset(data_path);
  ProjectionConfig cfg;
  if (meta.count("iterations")) cfg.iterations = std::stoi(meta["iterations"]);
  if (meta.count("relaxation")) cfg.relaxation = std::stod(meta["relaxation"]);
  if (meta.count("center_input")) cfg.center_input = meta["center_input"] == "on";
  Vector2d gravity = gravity_for(gravity_mode, dataset.scenario);
  if (gravity_mode == "auto" && meta.count("gravity"))
    gravity = meta["gravity"] == "on" ? Vector2d(0.0, -9.8) : Vector2d(0.0, 0.0);

  NetConstraint fn(net);
  const DiagnosticsReport report =
      constraint_diagnostics(fn, dataset, cfg, gravity, dataset.scenario, max_frames);
  write_diagnostics_csv(out_prefix, report);
  std::cout << "frames=" << report.abs_constraint.rows()
            << " improved_fraction=" << report.fraction_final_below_first << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neural projection physics pipeline"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a trajectory dataset");
  std::string gen_config, gen_scenario, gen_out;
  int gen_samples = 64, gen_frames = 20;
  std::uint64_t gen_seed = 0;
  double gen_noise = 0.0;
  bool gen_force = false;
  gen->add_option("--config", gen_config, "key=value config file");
  gen->add_option("--scenario", gen_scenario, "rigid1|rigid2|rope|articulated|collision");
  gen->add_option("--samples", gen_samples, "number of samples");
  gen->add_option("--frames", gen_frames, "frames per sample");
  gen->add_option("--seed", gen_seed, "generator seed");
  auto* noise_opt = gen->add_option("--noise", gen_noise, "observation noise sigma");
  gen->add_option("--out", gen_out, "output dataset path")->required();
  gen->add_flag("--force", gen_force, "overwrite an existing output file");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a constraint network");
  std::string tr_data, tr_out, tr_config, tr_arch, tr_gravity = "auto", tr_groups;
  int tr_epochs = 0, tr_batch = 0, tr_lr_step = 0, tr_iterations = -1, tr_samples_limit = 0,
      tr_threads = 0;
  double tr_lr = 0, tr_lr_gamma = 0, tr_relaxation = 0;
  std::uint64_t tr_seed = 0;
  bool tr_baseline = false, tr_center = false;
  train_cmd->add_option("--data", tr_data, "training dataset")->required();
  train_cmd->add_option("--out", tr_out, "checkpoint output path")->required();
  train_cmd->add_option("--config", tr_config, "key=value training config file");
  train_cmd->add_option("--epochs", tr_epochs, "override epochs");
  train_cmd->add_option("--batch", tr_batch, "override batch size");
  train_cmd->add_option("--lr", tr_lr, "override initial learning rate");
  train_cmd->add_option("--lr-step", tr_lr_step, "override lr step interval");
  train_cmd->add_option("--lr-gamma", tr_lr_gamma, "override lr decay factor");
  train_cmd->add_option("--iterations", tr_iterations, "override projection iterations");
  train_cmd->add_option("--relaxation", tr_relaxation, "override relaxation coefficient");
  auto* seed_opt = train_cmd->add_option("--seed", tr_seed, "training seed");
  train_cmd->add_option("--arch", tr_arch, "layer widths, comma separated");
  train_cmd->add_option("--samples-limit", tr_samples_limit, "use only the first N samples");
  train_cmd->add_option("--threads", tr_threads, "worker threads (1 = fully serial)");
  train_cmd->add_option("--gravity", tr_gravity, "auto|on|off");
  train_cmd->add_flag("--baseline", tr_baseline, "train the correction-MLP baseline instead");
  train_cmd->add_flag("--center-input", tr_center, "subtract the centroid from network inputs");
  train_cmd->add_option("--groups", tr_groups, "partition file for per-module training");

  // rollout
  auto* roll = app.add_subcommand("rollout", "roll a trained model forward");
  std::vector<std::string> ro_models;
  std::string ro_data, ro_out, ro_groups, ro_trace, ro_gravity = "auto";
  int ro_sample = 0, ro_frames = 50, ro_iterations = 0;
  double ro_relaxation = 0;
  bool ro_center = false;
  roll->add_option("--model", ro_models, "checkpoint path, or id=path with --groups")->required();
  roll->add_option("--data", ro_data, "dataset supplying the two initial frames")->required();
  roll->add_option("--sample", ro_sample, "sample index for the initial frames");
  roll->add_option("--frames", ro_frames, "total frames to produce");
  roll->add_option("--out", ro_out, "output trajectory path")->required();
  roll->add_option("--groups", ro_groups, "partition file for multigroup rollout");
  roll->add_option("--trace", ro_trace, "projection trace CSV path");
  roll->add_option("--gravity", ro_gravity, "auto|on|off");
  roll->add_option("--iterations", ro_iterations, "override projection iterations");
  roll->add_option("--relaxation", ro_relaxation, "override relaxation coefficient");
  roll->add_flag("--center-input", ro_center, "subtract the centroid from network inputs");

  // eval
  auto* ev = app.add_subcommand("eval", "compare a rollout against ground truth");
  std::string ev_pred, ev_truth, ev_scenario, ev_prefix = "eval";
  ev->add_option("--pred", ev_pred, "predicted trajectory dataset")->required();
  ev->add_option("--truth", ev_truth, "ground-truth dataset")->required();
  ev->add_option("--scenario", ev_scenario, "scenario for the residual definitions");
  ev->add_option("--out-prefix", ev_prefix, "prefix for the CSV outputs");

  // diag
  auto* dg = app.add_subcommand("diag", "learned-constraint diagnostics");
  std::string dg_model, dg_data, dg_prefix = "diag", dg_gravity = "auto";
  int dg_max = 200;
  dg->add_option("--model", dg_model, "checkpoint path")->required();
  dg->add_option("--data", dg_data, "held-out dataset")->required();
  dg->add_option("--out-prefix", dg_prefix, "prefix for the CSV outputs");
  dg->add_option("--max-frames", dg_max, "cap on evaluated frames");
  dg->add_option("--gravity", dg_gravity, "auto|on|off");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed())
      return cmd_gen(gen_config, gen_scenario, gen_samples, gen_frames, gen_seed, gen_noise,
                     noise_opt->count() > 0, gen_out, gen_force);
    if (train_cmd->parsed())
      return cmd_train(tr_data, tr_out, tr_config, tr_epochs, tr_batch, tr_lr, tr_lr_step,
                       tr_lr_gamma, tr_iterations, tr_relaxation, tr_seed, seed_opt->count() > 0,
                       tr_arch, tr_samples_limit, tr_threads, tr_gravity, tr_baseline, tr_center,
                       tr_groups);
    if (roll->parsed())
      return cmd_rollout(ro_models, ro_data, ro_sample, ro_frames, ro_out, ro_groups, ro_trace,
                         ro_gravity, ro_iterations, ro_relaxation, ro_center);
    if (ev->parsed()) return cmd_eval(ev_pred, ev_truth, ev_scenario, ev_prefix);
    if (dg->parsed()) return cmd_diag(dg_model, dg_data, dg_prefix, dg_max, dg_gravity);
  } catch (const ProjectionNumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const TrainingDiverged& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
