#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tacsync/bus_sim.hpp"
#include "tacsync/calib.hpp"
#include "tacsync/core.hpp"
#include "tacsync/gelsim.hpp"
#include "tacsync/graspsim.hpp"
#include "tacsync/poisson.hpp"
#include "tacsync/rng.hpp"

// Drivers shared by the CLI and the acceptance suite.
namespace tacsync::experiments {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Timing formulas against the simulator

struct TimingRow {
  int n_sensors = 0;
  bus::Micros t_spi_us = 0;
  double predicted_rate_hz = 0.0;
  double simulated_rate_hz = 0.0;
  bus::Micros predicted_latency_us = 0;
  bus::Micros simulated_latency_us = 0;
  bus::Micros sync_bound_us = 0;
  bus::Micros simulated_sync_us = 0;

  double rate_rel_error() const { return std::abs(simulated_rate_hz - predicted_rate_hz) / predicted_rate_hz; }
  double latency_rel_error() const {
    return std::abs(static_cast<double>(simulated_latency_us - predicted_latency_us)) /
           static_cast<double>(predicted_latency_us);
  }
};

struct TimingReport {
  std::vector<TimingRow> rows;
  int rounds = 0;
  double seconds = 0.0;

  double max_rate_rel_error() const {
    double m = 0.0;
    for (const auto& r : rows) m = std::max(m, r.rate_rel_error());
    return m;
  }
  double max_latency_rel_error() const {
    double m = 0.0;
    for (const auto& r : rows) m = std::max(m, r.latency_rel_error());
    return m;
  }
  bool sync_within_bound() const {
    for (const auto& r : rows)
      if (r.simulated_sync_us > r.sync_bound_us) return false;
    return true;
  }
};

inline TimingReport timing_sweep(bus::BusConfig base, int n_max = 16, int rounds = 100) {
  const auto t0 = Clock::now();
  TimingReport rep;
  rep.rounds = rounds;
  for (int n = 1; n <= n_max; ++n) {
    bus::BusConfig c = base;
    c.n_sensors = n;
    c.per_sensor_extra_delay_us.clear();
    const bus::AcquisitionTrace t = bus::simulate_rounds(c, rounds);
    rep.rows.push_back({n, bus::spi_time(c), bus::predicted_frame_rate(c), t.simulated_frame_rate(),
                        bus::predicted_latency(c), t.max_latency_us(), bus::predicted_sync_error(c),
                        t.max_sync_error_us()});
  }
  rep.seconds = seconds_since(t0);
  return rep;
}

inline nlohmann::json to_json(const TimingReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& x : r.rows)
    rows.push_back({{"n_sensors", x.n_sensors},
                    {"t_spi_us", x.t_spi_us},
                    {"predicted_frame_rate_hz", x.predicted_rate_hz},
                    {"simulated_frame_rate_hz", x.simulated_rate_hz},
                    {"predicted_latency_us", x.predicted_latency_us},
                    {"simulated_latency_us", x.simulated_latency_us},
                    {"sync_bound_us", x.sync_bound_us},
                    {"simulated_sync_error_us", x.simulated_sync_us}});
  return {{"rounds", r.rounds},
          {"rows", rows},
          {"max_rate_rel_error", r.max_rate_rel_error()},
          {"max_latency_rel_error", r.max_latency_rel_error()},
          {"sync_within_bound", r.sync_within_bound()}};
}

// ---------------------------------------------------------------------------
// Calibration benchmark

/// Sensor i of the synthetic benchmark. All three share the optics; they
/// differ in LED gain, channel offset and the static background pattern, as
/// separately assembled sensors do.
inline SensorConfig benchmark_sensor(int i) {
  static constexpr double kGain[3][3] = {{1.00, 1.00, 1.00}, {1.03, 0.97, 1.02}, {0.97, 1.02, 0.99}};
  static constexpr double kOffset[3][3] = {{0.00, 0.00, 0.00}, {0.02, -0.01, 0.015}, {-0.015, 0.02, -0.01}};
  SensorConfig c = default_sensor_config(i);
  c.illumination_falloff = 0.3;
  c.fixed_pattern_sigma = 0.05;
  const int k = ((i % 3) + 3) % 3;
  for (std::size_t ch = 0; ch < 3; ++ch) {
    c.channel_gain[ch] = kGain[k][ch];
    c.channel_offset[ch] = kOffset[k][ch];
  }
  return c;
}

// The probe every sensor images once for zero-shot alignment.
inline gelsim::Indenter calibration_stimulus() {
  return {gelsim::Shape::Sphere, 3.0, 120.0, 1.0, 0.6, 0.5, 0.5};
}

/// Access to one physical sensor. Every capture taken through it is counted,
/// which is how the benchmark measures how much target data a pipeline used.
class SensorRig {
 public:
  SensorRig(SensorConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) { cfg_.validate(); }

  const SensorConfig& config() const { return cfg_; }
  std::size_t captures_taken() const { return captures_; }

  gelsim::Dataset collect(const std::vector<gelsim::Indenter>& probes, gelsim::InputMode mode,
                          const std::string& purpose) {
    captures_ += probes.size();
    return gelsim::render_dataset(cfg_, probes, derive_seed(seed_, purpose), mode);
  }

  gelsim::Dataset collect_random(std::size_t n, gelsim::InputMode mode, const std::string& purpose) {
    return collect(gelsim::sample_indenters(cfg_, n, derive_seed(seed_, purpose + "-probes")), mode, purpose);
  }

 private:
  SensorConfig cfg_;
  std::uint64_t seed_;
  std::size_t captures_ = 0;
};

inline std::vector<SensorConfig> benchmark_sensors(int n = 3) {
  std::vector<SensorConfig> out;
  for (int i = 0; i < n; ++i) out.push_back(benchmark_sensor(i));
  return out;
}

struct BenchmarkOptions {
  std::vector<SensorConfig> sensors = benchmark_sensors();
  int train_captures = 50;
  int test_captures = 5;
  int reference_sensor = 0;  // index into sensors
  calib::MlpHyperparameters hyper;
  calib::EstimateOptions estimate;
  std::uint64_t seed = 2024;
};

struct SensorResult {
  int sensor_id = 0;
  calib::Mae lut_raw, lut_diff, mlp_raw, mlp_diff, zero_shot_diff;
  calib::TransferOffsets offsets;
  std::size_t individual_captures = 0;  // target captures consumed by individual fitting
  std::size_t zero_shot_captures = 0;   // target captures consumed by zero-shot transfer
};

struct BenchmarkReport {
  BenchmarkOptions options;
  std::vector<SensorResult> sensors;
  calib::MlpModel reference_model;  // individual diff model of the reference sensor
  double seconds = 0.0;

  static calib::Mae mean(const std::vector<calib::Mae>& v) {
    calib::Mae m;
    for (const auto& x : v) {
      m.gx += x.gx;
      m.gy += x.gy;
    }
    m.gx /= static_cast<double>(v.size());
    m.gy /= static_cast<double>(v.size());
    return m;
  }

  template <typename Get>
  calib::Mae mean_over(Get get, bool targets_only) const {
    std::vector<calib::Mae> v;
    for (std::size_t i = 0; i < sensors.size(); ++i)
      if (!targets_only || static_cast<int>(i) != options.reference_sensor) v.push_back(get(sensors[i]));
    return mean(v);
  }

  calib::Mae mlp_diff() const { return mean_over([](const SensorResult& s) { return s.mlp_diff; }, false); }
  calib::Mae mlp_raw() const { return mean_over([](const SensorResult& s) { return s.mlp_raw; }, false); }
  calib::Mae lut_diff() const { return mean_over([](const SensorResult& s) { return s.lut_diff; }, false); }
  calib::Mae lut_raw() const { return mean_over([](const SensorResult& s) { return s.lut_raw; }, false); }
  // Individual vs zero-shot on the sensors that were transferred to.
  calib::Mae target_individual() const {
    return mean_over([](const SensorResult& s) { return s.mlp_diff; }, true);
  }
  calib::Mae target_zero_shot() const {
    return mean_over([](const SensorResult& s) { return s.zero_shot_diff; }, true);
  }

  std::size_t total_individual_captures() const {
    std::size_t n = 0;
    for (const auto& s : sensors) n += s.individual_captures;
    return n;
  }
  std::size_t total_zero_shot_captures() const {
    std::size_t n = 0;
    for (const auto& s : sensors) n += s.zero_shot_captures;
    return n;
  }
};

/// Fits raw and diff MLPs and lookup tables per sensor, then transfers the
/// reference sensor's diff model to every other sensor from one capture each.
inline BenchmarkReport calibration_benchmark(const BenchmarkOptions& opt = {}) {
  const auto t0 = Clock::now();
  const int n_sensors = static_cast<int>(opt.sensors.size());
  if (n_sensors < 2) throw InvalidArgument("benchmark needs a reference and at least one target sensor");
  if (opt.reference_sensor < 0 || opt.reference_sensor >= n_sensors)
    throw InvalidArgument("reference sensor out of range");
  BenchmarkReport rep;
  rep.options = opt;

  std::vector<SensorRig> rigs;
  for (int i = 0; i < n_sensors; ++i)
    rigs.emplace_back(opt.sensors[static_cast<std::size_t>(i)], derive_seed(opt.seed, "bench-sensor", static_cast<std::uint64_t>(i)));

  const auto n_train = static_cast<std::size_t>(opt.train_captures);
  const auto n_test = static_cast<std::size_t>(opt.test_captures);
  std::vector<gelsim::Dataset> test_diff;
  std::vector<calib::MlpModel> diff_models;
  for (int i = 0; i < n_sensors; ++i) {
    SensorRig& rig = rigs[static_cast<std::size_t>(i)];
    SensorResult r;
    r.sensor_id = rig.config().sensor_id;
    // Raw and diff sets image the same probes with the same noise.
    const auto probes = gelsim::sample_indenters(rig.config(), n_train,
                                                 derive_seed(opt.seed, "bench-train", static_cast<std::uint64_t>(i)));
    const auto test_probes = gelsim::sample_indenters(
        rig.config(), n_test, derive_seed(opt.seed, "bench-test", static_cast<std::uint64_t>(i)));
    const std::size_t before = rig.captures_taken();
    const gelsim::Dataset train_d = rig.collect(probes, gelsim::InputMode::Diff, "train");
    r.individual_captures = rig.captures_taken() - before;
    const gelsim::Dataset train_r = gelsim::render_dataset(rig.config(), probes, train_d.seed, gelsim::InputMode::Raw);
    gelsim::Dataset test_d = gelsim::render_dataset(rig.config(), test_probes,
                                                    derive_seed(opt.seed, "bench-test-noise", static_cast<std::uint64_t>(i)),
                                                    gelsim::InputMode::Diff);
    const gelsim::Dataset test_r =
        gelsim::render_dataset(rig.config(), test_probes, test_d.seed, gelsim::InputMode::Raw);

    const std::uint64_t fit_seed = derive_seed(opt.seed, "bench-fit", static_cast<std::uint64_t>(i));
    calib::MlpModel md = calib::fit_mlp(train_d, opt.hyper, fit_seed);
    const calib::MlpModel mr = calib::fit_mlp(train_r, opt.hyper, fit_seed);
    r.mlp_diff = calib::evaluate_mae(md, test_d);
    r.mlp_raw = calib::evaluate_mae(mr, test_r);
    r.lut_diff = calib::evaluate_mae(calib::fit_lookup_table(train_d), test_d);
    r.lut_raw = calib::evaluate_mae(calib::fit_lookup_table(train_r), test_r);
    rep.sensors.push_back(r);
    test_diff.push_back(std::move(test_d));
    diff_models.push_back(std::move(md));
  }

  // Zero-shot: one capture of the shared stimulus on each target sensor.
  const auto ref = static_cast<std::size_t>(opt.reference_sensor);
  const gelsim::Dataset ref_stim = rigs[ref].collect({calibration_stimulus()}, gelsim::InputMode::Diff, "stimulus");
  const auto& ref_capture = std::get<DifferentialFrame>(ref_stim.entries.front().input);
  for (int i = 0; i < n_sensors; ++i) {
    SensorResult& r = rep.sensors[static_cast<std::size_t>(i)];
    if (i == opt.reference_sensor) {
      r.zero_shot_diff = r.mlp_diff;
      continue;
    }
    SensorRig& rig = rigs[static_cast<std::size_t>(i)];
    const std::size_t before = rig.captures_taken();
    const gelsim::Dataset stim = rig.collect({calibration_stimulus()}, gelsim::InputMode::Diff, "stimulus");
    r.zero_shot_captures = rig.captures_taken() - before;
    r.offsets = calib::estimate_channel_offsets(ref_capture, std::get<DifferentialFrame>(stim.entries.front().input),
                                                opt.estimate);
    const calib::MlpModel transferred = calib::transfer_model(diff_models[ref], r.offsets);
    r.zero_shot_diff = calib::evaluate_mae(transferred, test_diff[static_cast<std::size_t>(i)]);
  }
  // The reference sensor's own training set is the only bulk collection.
  rep.sensors[ref].zero_shot_captures = rep.sensors[ref].individual_captures;
  rep.reference_model = std::move(diff_models[ref]);
  rep.seconds = seconds_since(t0);
  return rep;
}

inline nlohmann::json to_json(const calib::Mae& m) { return {{"gx", m.gx}, {"gy", m.gy}}; }

inline nlohmann::json to_json(const BenchmarkReport& r) {
  nlohmann::json sensors = nlohmann::json::array();
  for (const auto& s : r.sensors)
    sensors.push_back({{"sensor_id", s.sensor_id},
                       {"lut_raw", to_json(s.lut_raw)},
                       {"lut_diff", to_json(s.lut_diff)},
                       {"mlp_raw", to_json(s.mlp_raw)},
                       {"mlp_diff", to_json(s.mlp_diff)},
                       {"zero_shot_diff", to_json(s.zero_shot_diff)},
                       {"offsets", s.offsets.delta},
                       {"individual_captures", s.individual_captures},
                       {"zero_shot_captures", s.zero_shot_captures}});
  const calib::Mae ind = r.target_individual(), zs = r.target_zero_shot();
  return {{"seed", r.options.seed},
          {"train_captures", r.options.train_captures},
          {"test_captures", r.options.test_captures},
          {"reference_sensor", r.options.reference_sensor},
          {"sensors", sensors},
          {"mean",
           {{"lut_raw", to_json(r.lut_raw())},
            {"lut_diff", to_json(r.lut_diff())},
            {"mlp_raw", to_json(r.mlp_raw())},
            {"mlp_diff", to_json(r.mlp_diff())}}},
          {"targets", {{"individual_diff", to_json(ind)}, {"zero_shot_diff", to_json(zs)}}},
          {"zero_shot_ratio", {{"gx", zs.gx / ind.gx}, {"gy", zs.gy / ind.gy}}},
          {"data_collected", {{"individual", r.total_individual_captures()}, {"zero_shot", r.total_zero_shot_captures()}}}};
}

// ---------------------------------------------------------------------------
// End-to-end depth reconstruction

struct ReconstructionResult {
  double rmse_mm = 0.0;
  double peak_mm = 0.0;
  double relative() const { return rmse_mm / peak_mm; }
};

template <typename Model>
ReconstructionResult reconstruct_probe(const Model& model, const SensorConfig& cfg, const gelsim::Indenter& probe,
                                       std::uint64_t noise_seed) {
  const DepthMap truth = gelsim::make_indenter(probe, cfg.height, cfg.width, cfg.pixel_pitch_mm);
  const gelsim::Dataset one = gelsim::render_dataset(cfg, {probe}, noise_seed, calib::input_mode(model));
  const GradientField g = model.predict(gelsim::view_of(one.entries.front().input));
  const DepthMap z = poisson::integrate_gradients(g, poisson::BoundaryCondition::DirichletZero, cfg.pixel_pitch_mm);
  double s = 0.0;
  for (std::size_t i = 0; i < z.values().size(); ++i) {
    const double e = z.values()[i] - truth.values()[i];
    s += e * e;
  }
  return {std::sqrt(s / static_cast<double>(z.values().size())), truth.max()};
}

// A sphere that is not part of any training draw.
inline gelsim::Indenter held_out_sphere() { return {gelsim::Shape::Sphere, 2.5, 120.0, 1.0, 0.7, 0.45, 0.55}; }

// ---------------------------------------------------------------------------
// Synchronisation overshoot sweep

struct OvershootSweep {
  std::vector<grasp::SyncComparison> runs;
  double seconds = 0.0;

  bool delayed_always_worse() const {
    for (const auto& r : runs)
      if (!(r.overshoot_delayed > r.overshoot_sync)) return false;
    return !runs.empty();
  }
  bool monotone() const {
    for (std::size_t i = 1; i < runs.size(); ++i)
      if (runs[i].overshoot_delayed < runs[i - 1].overshoot_delayed) return false;
    return true;
  }
};

inline OvershootSweep overshoot_sweep(const grasp::GraspScenario& s, std::vector<int> delays = {1, 2, 3, 4},
                                      std::uint64_t seed = 0) {
  const auto t0 = Clock::now();
  OvershootSweep out;
  for (int d : delays) out.runs.push_back(grasp::compare_sync(s, d, seed));
  out.seconds = seconds_since(t0);
  return out;
}

inline nlohmann::json to_json(const OvershootSweep& s) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& r : s.runs) runs.push_back(grasp::to_json(r));
  return {{"runs", runs}, {"delayed_always_worse", s.delayed_always_worse()}, {"monotone", s.monotone()}};
}

}  // namespace tacsync::experiments
