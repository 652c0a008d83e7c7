#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tacsync/bus_sim.hpp"
#include "tacsync/calib.hpp"
#include "tacsync/config.hpp"
#include "tacsync/dataset_io.hpp"
#include "tacsync/error.hpp"
#include "tacsync/experiments.hpp"
#include "tacsync/gelsim.hpp"
#include "tacsync/graspsim.hpp"
#include "tacsync/model_io.hpp"
#include "tacsync/poisson.hpp"
#include "tacsync/raster_io.hpp"

namespace tacsync::harness {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUnknownSubcommand = 2,
  kMalformedConfig = 3,
  kMissingInput = 4,
};

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"simulate-bus", "render-dataset", "calibrate",      "transfer",
                                              "reconstruct",  "grasp-demo",     "reproduce-paper"};
  return names;
}

struct RunOptions {
  std::string subcommand;
  fs::path config_path;  // empty: built-in defaults
  std::vector<std::string> overrides;
  std::optional<fs::path> output;
  std::optional<fs::path> input;
  std::optional<fs::path> model;
  std::optional<fs::path> reference;
  std::optional<fs::path> target;
  std::optional<int> sensor;  // index into config.sensors
};

struct RunResult {
  int exit_code = kOk;
  json summary;       // one line on stdout when exit_code == 0
  std::string error;  // "<Type>: message" otherwise
};

namespace detail {

inline fs::path require_input(const fs::path& p) {
  if (!fs::exists(p)) throw IoError("input not found: " + p.string());
  return p;
}

inline void write_json(const fs::path& p, const json& j) { io::write_text_atomic(p, j.dump(2) + "\n"); }

inline const SensorConfig& sensor_at(const config::ExperimentConfig& cfg, int index) {
  if (index < 0 || index >= static_cast<int>(cfg.sensors.size()))
    throw InvalidArgument("sensor index " + std::to_string(index) + " out of range");
  return cfg.sensors[static_cast<std::size_t>(index)];
}

inline gelsim::Capture load_capture(const fs::path& p) {
  const io::Raster r = io::load_raster(require_input(p));
  if (r.kind == "frame") return io::tactile_from_raster(r);
  if (r.kind == "diff") return io::diff_from_raster(r);
  throw FormatError("capture " + p.string() + " must be a frame or diff raster, got " + r.kind);
}

// One capture of `probe` on `cfg`, in the given mode.
inline gelsim::Capture capture_probe(const SensorConfig& cfg, const gelsim::Indenter& probe, std::uint64_t seed,
                                     gelsim::InputMode mode) {
  return gelsim::render_dataset(cfg, {probe}, seed, mode).entries.front().input;
}

inline void save_capture(const fs::path& p, const gelsim::Capture& c) {
  std::visit([&](const auto& f) { io::save_raster(p, f); }, c);
}

inline gelsim::InputMode mode_of(const gelsim::Capture& c) {
  return std::holds_alternative<TactileFrame>(c) ? gelsim::InputMode::Raw : gelsim::InputMode::Diff;
}

inline GradientField predict(const io::Model& m, const FrameView& v) {
  return std::visit(
      [&](const auto& model) -> GradientField {
        if constexpr (std::is_same_v<std::decay_t<decltype(model)>, calib::MlpModel>)
          return model.predict(v, true);
        else
          return model.predict(v);
      },
      m);
}

inline gelsim::InputMode mode_of(const io::Model& m) {
  return std::visit([](const auto& model) { return calib::input_mode(model); }, m);
}

// --- subcommands ---------------------------------------------------------------

inline json simulate_bus(const config::ExperimentConfig& cfg, const fs::path& out) {
  const bus::AcquisitionTrace trace = bus::simulate_rounds(cfg.bus, cfg.bus_rounds);
  json summary = trace.summary();
  io::write_text_atomic(out / "bus_trace.csv", trace.to_csv());
  write_json(out / "bus_summary.json", summary);
  summary["artifacts"] = {"bus_trace.csv", "bus_summary.json"};
  return summary;
}

inline json render_dataset(const config::ExperimentConfig& cfg, const RunOptions& opt, const fs::path& out) {
  const int index = opt.sensor.value_or(cfg.dataset.sensor);
  const SensorConfig& sensor = sensor_at(cfg, index);
  const auto mode = gelsim::mode_from_string(cfg.dataset.mode);
  const std::uint64_t seed = derive_seed(cfg.seed, "render-dataset", static_cast<std::uint64_t>(index));
  const gelsim::Dataset ds = gelsim::generate_dataset(sensor, static_cast<std::size_t>(cfg.dataset.n_captures), seed, mode);
  const fs::path dir = opt.input.value_or(out / "dataset");
  io::save_dataset(dir, ds, cfg.dataset.quantize);
  return {{"sensor_id", sensor.sensor_id},
          {"n_captures", ds.size()},
          {"input_mode", gelsim::to_string(mode)},
          {"quantized", cfg.dataset.quantize},
          {"seed", seed},
          {"dataset_dir", dir.string()}};
}

inline json calibrate(const config::ExperimentConfig& cfg, const RunOptions& opt, const fs::path& out) {
  const fs::path dir = require_input(opt.input.value_or(out / "dataset"));
  const gelsim::Dataset train = io::load_dataset(dir);
  const fs::path model_path = opt.model.value_or(out / "model.tcm");
  json j{{"dataset_dir", dir.string()}, {"n_captures", train.size()}, {"input_mode", gelsim::to_string(train.mode)},
         {"model", model_path.string()}, {"kind", cfg.calibration.model}};
  calib::Mae mae;
  if (cfg.calibration.model == "lut") {
    const calib::LookupTable t = calib::fit_lookup_table(train, cfg.calibration.lut_bins);
    mae = calib::evaluate_mae(t, train);
    io::save_model(model_path, t);
  } else {
    const std::uint64_t seed = derive_seed(cfg.seed, "calibrate");
    const calib::MlpModel m = calib::fit_mlp(train, cfg.calibration.mlp, seed);
    mae = calib::evaluate_mae(m, train);
    io::save_model(model_path, m);
    j["final_train_loss"] = m.final_train_loss;
    j["seed"] = seed;
  }
  j["train_mae"] = experiments::to_json(mae);
  return j;
}

inline json transfer(const config::ExperimentConfig& cfg, const RunOptions& opt, const fs::path& out) {
  const fs::path model_path = require_input(opt.model.value_or(out / "model.tcm"));
  const io::Model loaded = io::load_model(model_path);
  if (!std::holds_alternative<calib::MlpModel>(loaded))
    throw InvalidArgument("transfer needs an MLP model; lookup tables carry no input offsets");
  const auto& model = std::get<calib::MlpModel>(loaded);

  // Without explicit captures, image the shared stimulus on the reference
  // sensor and on the target sensor of the config.
  std::optional<gelsim::Capture> ref, tgt;
  json sources;
  if (opt.reference || opt.target) {
    if (!opt.reference || !opt.target) throw InvalidArgument("transfer needs both --reference and --target");
    ref = load_capture(*opt.reference);
    tgt = load_capture(*opt.target);
    sources = {{"reference", opt.reference->string()}, {"target", opt.target->string()}};
  } else {
    const int ri = cfg.calibration.reference_sensor;
    const int ti = opt.sensor.value_or(ri == 0 ? 1 : 0);
    const auto stim = experiments::calibration_stimulus();
    ref = capture_probe(sensor_at(cfg, ri), stim, derive_seed(cfg.seed, "transfer-reference"), model.mode);
    tgt = capture_probe(sensor_at(cfg, ti), stim, derive_seed(cfg.seed, "transfer-target"), model.mode);
    save_capture(out / "transfer_reference.tsr", *ref);
    save_capture(out / "transfer_target.tsr", *tgt);
    sources = {{"reference", "transfer_reference.tsr"}, {"target", "transfer_target.tsr"},
               {"reference_sensor", sensor_at(cfg, ri).sensor_id}, {"target_sensor", sensor_at(cfg, ti).sensor_id}};
  }
  if (mode_of(*ref) != model.mode || mode_of(*tgt) != model.mode)
    throw InvalidArgument("transfer captures must match the model's input mode");
  calib::EstimateOptions eo;
  eo.estimate_gain = cfg.calibration.estimate_gain;
  const calib::TransferOffsets offsets = std::visit(
      [&](const auto& r) {
        using F = std::decay_t<decltype(r)>;
        return calib::estimate_channel_offsets(r, std::get<F>(*tgt), eo);
      },
      *ref);
  const fs::path dest = out / "model_transferred.tcm";
  io::save_model(dest, calib::transfer_model(model, offsets));
  return {{"model", model_path.string()},
          {"transferred_model", dest.string()},
          {"captures", sources},
          {"target_captures_used", 1},
          {"offsets", config::to_json(offsets)}};
}

inline json reconstruct(const config::ExperimentConfig& cfg, const RunOptions& opt, const fs::path& out) {
  const fs::path model_path = require_input(opt.model.value_or(out / "model.tcm"));
  const io::Model model = io::load_model(model_path);
  json j{{"model", model_path.string()}};
  std::optional<gelsim::Capture> capture;
  std::optional<DepthMap> truth;
  double pitch = sensor_at(cfg, cfg.dataset.sensor).pixel_pitch_mm;
  if (opt.input) {
    capture = load_capture(*opt.input);
    j["input"] = opt.input->string();
  } else {
    // Held-out probe on the dataset sensor, so the error can be reported.
    const int index = opt.sensor.value_or(cfg.dataset.sensor);
    const SensorConfig& s = sensor_at(cfg, index);
    pitch = s.pixel_pitch_mm;
    const auto probe = experiments::held_out_sphere();
    capture = capture_probe(s, probe, derive_seed(cfg.seed, "reconstruct"), mode_of(model));
    truth = gelsim::make_indenter(probe, s.height, s.width, s.pixel_pitch_mm);
    save_capture(out / "probe_input.tsr", *capture);
    j["input"] = "probe_input.tsr";
  }
  const GradientField g = predict(model, gelsim::view_of(*capture));
  const DepthMap z = poisson::integrate_gradients(g, poisson::BoundaryCondition::DirichletZero, pitch);
  io::save_raster(out / "reconstruct_grad.tsr", g);
  io::save_raster(out / "reconstruct_depth.tsr", z);
  j["artifacts"] = {"reconstruct_grad.tsr", "reconstruct_depth.tsr"};
  j["peak_depth_mm"] = z.max();
  if (truth) {
    double s = 0.0;
    for (std::size_t i = 0; i < z.values().size(); ++i) s += std::pow(z.values()[i] - truth->values()[i], 2);
    const double rmse = std::sqrt(s / static_cast<double>(z.values().size()));
    j["true_peak_depth_mm"] = truth->max();
    j["depth_rmse_mm"] = rmse;
    j["depth_rmse_relative"] = rmse / truth->max();
  }
  return j;
}

inline json grasp_demo(const config::ExperimentConfig& cfg, const fs::path& out) {
  const std::uint64_t seed = derive_seed(cfg.seed, "grasp");
  const grasp::GraspTrace trace = grasp::run_grasp(cfg.grasp, seed);
  const experiments::OvershootSweep sweep = experiments::overshoot_sweep(cfg.grasp, cfg.grasp_delays, seed);
  json j = grasp::summary(trace, cfg.grasp);
  j["sweep"] = experiments::to_json(sweep);
  io::write_text_atomic(out / "grasp_trace.csv", trace.to_csv());
  io::write_text_atomic(out / "grasp_stages.csv", trace.stage_csv());
  write_json(out / "grasp_summary.json", j);
  j["artifacts"] = {"grasp_trace.csv", "grasp_stages.csv", "grasp_summary.json"};
  return j;
}

inline json reproduce_paper(const config::ExperimentConfig& cfg, const fs::path& out) {
  const fs::path dir = out / "reproduce";
  fs::create_directories(dir);

  const experiments::TimingReport timing = experiments::timing_sweep(cfg.bus);
  json tj = experiments::to_json(timing);
  bus::BusConfig reference_bus = cfg.bus;
  reference_bus.n_sensors = 7;
  tj["t_spi_reference_us"] = bus::spi_time(reference_bus);
  write_json(dir / "timing_report.json", tj);

  experiments::BenchmarkOptions bo;
  bo.sensors = cfg.sensors;
  bo.train_captures = cfg.calibration.train_captures;
  bo.test_captures = cfg.calibration.test_captures;
  bo.reference_sensor = cfg.calibration.reference_sensor;
  bo.hyper = cfg.calibration.mlp;
  bo.estimate.estimate_gain = cfg.calibration.estimate_gain;
  bo.seed = cfg.seed;
  const experiments::BenchmarkReport bench = experiments::calibration_benchmark(bo);
  json cj = experiments::to_json(bench);
  const calib::Mae d = bench.mlp_diff(), r = bench.mlp_raw();
  const calib::Mae ind = bench.target_individual(), zs = bench.target_zero_shot();
  const experiments::ReconstructionResult e2e = experiments::reconstruct_probe(
      bench.reference_model, bo.sensors[static_cast<std::size_t>(bo.reference_sensor)], experiments::held_out_sphere(),
      derive_seed(cfg.seed, "e2e"));
  cj["orderings"] = {{"diff_beats_raw", d.gx < r.gx && d.gy < r.gy},
                     {"zero_shot_within_1_25", zs.gx <= 1.25 * ind.gx && zs.gy <= 1.25 * ind.gy}};
  cj["end_to_end"] = {{"depth_rmse_mm", e2e.rmse_mm}, {"peak_mm", e2e.peak_mm}, {"relative", e2e.relative()}};
  write_json(dir / "calibration_report.json", cj);

  const experiments::OvershootSweep sweep =
      experiments::overshoot_sweep(cfg.grasp, cfg.grasp_delays, derive_seed(cfg.seed, "grasp"));
  write_json(dir / "overshoot_report.json", experiments::to_json(sweep));

  return {{"dir", dir.string()},
          {"artifacts", {"timing_report.json", "calibration_report.json", "overshoot_report.json"}},
          {"timing_max_rate_rel_error", timing.max_rate_rel_error()},
          {"timing_sync_within_bound", timing.sync_within_bound()},
          {"diff_beats_raw", cj["orderings"]["diff_beats_raw"]},
          {"zero_shot_ratio", cj["zero_shot_ratio"]},
          {"data_collected", cj["data_collected"]},
          {"overshoot_delayed_always_worse", sweep.delayed_always_worse()},
          {"overshoot_monotone", sweep.monotone()},
          {"end_to_end_relative_rmse", e2e.relative()}};
}

inline std::string describe(const char* type, const std::exception& e) { return std::string(type) + ": " + e.what(); }

}  // namespace detail

/// Loads the config, runs one subcommand and returns its exit status and
/// summary. Never throws for expected failures.
inline RunResult run_subcommand(const RunOptions& opt) {
  RunResult res;
  const auto& names = subcommands();
  if (std::find(names.begin(), names.end(), opt.subcommand) == names.end()) {
    res.exit_code = kUnknownSubcommand;
    res.error = "UnknownSubcommand: '" + opt.subcommand + "'";
    return res;
  }

  config::ExperimentConfig cfg;
  try {
    cfg = config::load_experiment_config(opt.config_path, opt.overrides);
  } catch (const IoError& e) {
    res.exit_code = kMissingInput;
    res.error = detail::describe("IoError", e);
    return res;
  } catch (const Error& e) {
    res.exit_code = kMalformedConfig;
    res.error = detail::describe("FormatError", e);
    return res;
  }

  const fs::path out = opt.output.value_or(fs::path(cfg.output_dir));
  try {
    fs::create_directories(out);
    json body;
    const std::string& s = opt.subcommand;
    if (s == "simulate-bus") body = detail::simulate_bus(cfg, out);
    else if (s == "render-dataset") body = detail::render_dataset(cfg, opt, out);
    else if (s == "calibrate") body = detail::calibrate(cfg, opt, out);
    else if (s == "transfer") body = detail::transfer(cfg, opt, out);
    else if (s == "reconstruct") body = detail::reconstruct(cfg, opt, out);
    else if (s == "grasp-demo") body = detail::grasp_demo(cfg, out);
    else body = detail::reproduce_paper(cfg, out);
    res.summary = {{"subcommand", s}, {"status", "ok"}, {"output_dir", out.string()}};
    res.summary.update(body);
  } catch (const IoError& e) {
    res.exit_code = kMissingInput;
    res.error = detail::describe("IoError", e);
  } catch (const FormatError& e) {
    res.exit_code = kFailure;
    res.error = detail::describe("FormatError", e);
  } catch (const Timeout& e) {
    res.exit_code = kFailure;
    res.error = detail::describe("Timeout", e);
  } catch (const Error& e) {
    res.exit_code = kFailure;
    res.error = detail::describe("Error", e);
  } catch (const std::exception& e) {
    res.exit_code = kFailure;
    res.error = detail::describe("InternalError", e);
  }
  return res;
}

}  // namespace tacsync::harness
