#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tacsync/bus_sim.hpp"
#include "tacsync/core.hpp"
#include "tacsync/error.hpp"
#include "tacsync/gelsim.hpp"
#include "tacsync/parallel.hpp"
#include "tacsync/rng.hpp"

namespace tacsync::grasp {

using bus::Micros;

/// Mean absolute value over all pixels and channels.
inline double deformation_signal(const DifferentialFrame& diff) {
  const auto v = diff.values();
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return s / static_cast<double>(v.size());
}

/// Gripper closing on a soft object. Pad i starts to indent once the closure
/// passes contact_onset_mm[i]; from there its depth grows by
/// depth_per_closure[i] mm per mm of closure, up to max_depth_mm. One control
/// tick is one bus round.
struct GraspScenario {
  int n_sensors = 7;
  std::vector<double> contact_onset_mm{0.30, 0.50, 0.45, 0.60, 0.55, 0.70, 0.48};
  std::vector<double> depth_per_closure{1.0, 0.9, 1.0, 0.8, 1.1, 0.7, 0.9};
  double closure_step_mm = 0.02;
  double max_depth_mm = 1.5;
  double threshold = 0.012;
  gelsim::Indenter probe{gelsim::Shape::Sphere, 4.0, 120.0, 1.0, 0.0, 0.5, 0.5};
  SensorConfig sensor = [] {
    SensorConfig c = default_sensor_config(0);
    c.noise_sigma = 0.0;
    return c;
  }();
  bus::BusConfig bus;
  // Sensor whose frames reach the controller delay_rounds late; -1 for none.
  int delayed_sensor = -1;
  int delay_rounds = 0;
  int tick_cap = 400;      // closing ticks before giving up
  int rest_ticks = 5;      // idle ticks before closing starts
  int hold_ticks = 20;     // ticks recorded after the stop
  int release_ticks = 20;  // opening ticks appended for the stage export

  void validate() const {
    if (n_sensors < 1) throw InvalidConfig("grasp needs at least one sensor");
    if (contact_onset_mm.size() != static_cast<std::size_t>(n_sensors) ||
        depth_per_closure.size() != static_cast<std::size_t>(n_sensors))
      throw InvalidConfig("contact_onset_mm and depth_per_closure need n_sensors entries");
    for (std::size_t i = 0; i < contact_onset_mm.size(); ++i)
      if (!(contact_onset_mm[i] >= 0.0) || !(depth_per_closure[i] > 0.0))
        throw InvalidConfig("onsets must be >= 0 and depth rates positive");
    if (!(threshold > 0.0)) throw InvalidConfig("threshold must be positive");
    if (!(closure_step_mm > 0.0)) throw InvalidConfig("closure step must be positive");
    if (!(max_depth_mm > 0.0)) throw InvalidConfig("max_depth_mm must be positive");
    if (probe.shape == gelsim::Shape::Sphere && max_depth_mm > probe.radius_mm)
      throw InvalidConfig("max_depth_mm exceeds the probe radius");
    if (bus.n_sensors != n_sensors) throw InvalidConfig("bus.n_sensors must equal the grasp sensor count");
    bus.validate();
    sensor.validate();
    if (delayed_sensor < -1 || delayed_sensor >= n_sensors) throw InvalidConfig("delayed_sensor out of range");
    if (delay_rounds < 0) throw InvalidConfig("delay_rounds must be >= 0");
    if (tick_cap < 1 || rest_ticks < 0 || hold_ticks < 0 || release_ticks < 0)
      throw InvalidConfig("tick counts must be non-negative (tick_cap >= 1)");
  }

  double depth_at(int sensor_id, double closure_mm) const {
    const auto i = static_cast<std::size_t>(sensor_id);
    const double d = depth_per_closure[i] * (closure_mm - contact_onset_mm[i]);
    return std::clamp(d, 0.0, max_depth_mm);
  }

  SensorConfig sensor_config(int sensor_id) const {
    SensorConfig c = sensor;
    c.sensor_id = sensor_id;
    c.rng_seed = derive_seed(sensor.rng_seed, "grasp-sensor", static_cast<std::uint64_t>(sensor_id));
    return c;
  }

  int delay_of(int sensor_id) const { return sensor_id == delayed_sensor ? delay_rounds : 0; }
};

// Stages of the grasp timeline: idle, closing without contact, squeezing,
// holding after the stop, releasing.
enum class Stage { Rest = 1, Approach = 2, Squeeze = 3, Hold = 4, Release = 5 };

struct GraspTick {
  int tick = 0;
  Stage stage = Stage::Rest;
  Micros time_us = 0;  // start of the bus round
  double closure_mm = 0.0;
  std::vector<double> depth_mm;
  std::vector<double> signal;     // current frame of each sensor
  std::vector<double> delivered;  // what the controller saw
};

struct GraspTrace {
  int n_sensors = 0;
  double threshold = 0.0;
  int stop_tick = -1;
  int trip_sensor = -1;
  std::vector<GraspTick> ticks;    // rest, closing, hold
  std::vector<GraspTick> release;  // opening after the hold, stage export only

  double peak_after_stop() const {
    double peak = 0.0;
    for (const auto& t : ticks)
      if (t.tick >= stop_tick)
        for (double s : t.signal) peak = std::max(peak, s);
    return peak;
  }

  double overshoot() const { return peak_after_stop() - threshold; }

  double control_period_us() const {
    if (ticks.size() < 2) return 0.0;
    return static_cast<double>(ticks.back().time_us - ticks.front().time_us) /
           static_cast<double>(ticks.size() - 1);
  }

  std::string to_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "tick,sensor_id,signal,closure,delivered_signal\n";
    for (const auto& t : ticks)
      for (int s = 0; s < n_sensors; ++s)
        os << t.tick << ',' << s << ',' << t.signal[static_cast<std::size_t>(s)] << ',' << t.closure_mm << ','
           << t.delivered[static_cast<std::size_t>(s)] << '\n';
    return os.str();
  }

  // Long format with a stage column, release ticks included.
  std::string stage_csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "tick,stage,time_us,sensor_id,signal,closure\n";
    auto emit = [&](const GraspTick& t) {
      for (int s = 0; s < n_sensors; ++s)
        os << t.tick << ',' << static_cast<int>(t.stage) << ',' << t.time_us << ',' << s << ','
           << t.signal[static_cast<std::size_t>(s)] << ',' << t.closure_mm << '\n';
    };
    for (const auto& t : ticks) emit(t);
    for (const auto& t : release) emit(t);
    return os.str();
  }
};

namespace detail {

inline std::vector<double> render_signals(const GraspScenario& s, const std::vector<TactileFrame>& refs,
                                          const bus::AcquisitionTrace& timing, int tick, double closure,
                                          std::uint64_t seed, std::vector<double>& depths) {
  const auto n = static_cast<std::size_t>(s.n_sensors);
  depths.assign(n, 0.0);
  std::vector<std::optional<TactileFrame>> frames(n);
  parallel_for(n, [&](std::size_t i) {
    const int id = static_cast<int>(i);
    const SensorConfig cfg = s.sensor_config(id);
    gelsim::Indenter probe = s.probe;
    probe.max_depth_mm = s.depth_at(id, closure);
    depths[i] = probe.max_depth_mm;
    const DepthMap depth = probe.max_depth_mm > 0.0 ? gelsim::make_indenter(probe, cfg.height, cfg.width, cfg.pixel_pitch_mm)
                                                    : DepthMap::zeros(cfg.height, cfg.width);
    const auto& row = timing.at(static_cast<std::size_t>(tick), id);
    const FrameMeta meta{id, static_cast<std::uint64_t>(tick), row.capture_done_us};
    const std::uint64_t noise_seed =
        derive_seed(seed, "grasp-capture", static_cast<std::uint64_t>(tick) * n + i);
    frames[i].emplace(gelsim::render(depth, cfg, noise_seed, meta));
  });

  // The round only counts once its full frame set has arrived.
  std::vector<TactileFrame> delivered;
  delivered.reserve(n);
  for (auto& f : frames) delivered.push_back(std::move(*f));
  const bus::Assembly assembly = bus::assemble_frame_sets(timing, std::move(delivered));
  if (assembly.complete.size() != 1) throw ProtocolViolation("grasp round did not assemble into one frame set");
  const bus::FrameSet& set = assembly.complete.front();

  std::vector<double> signal(n);
  for (std::size_t i = 0; i < n; ++i) signal[i] = deformation_signal(differential(set[i], refs[i]));
  return signal;
}

}  // namespace detail

/// Closed-loop grasp. Each tick advances the closure, renders every pad,
/// runs the frames through one bus round and stops closing at the first tick
/// whose delivered signals reach the threshold. The trace keeps the true
/// signals so overshoot is measured against what the pads really felt.
inline GraspTrace run_grasp(const GraspScenario& s, std::uint64_t seed = 0) {
  s.validate();
  const auto n = static_cast<std::size_t>(s.n_sensors);
  const int total = s.rest_ticks + s.tick_cap + s.hold_ticks + s.release_ticks;
  const bus::AcquisitionTrace timing = bus::simulate_rounds(s.bus, total);

  std::vector<TactileFrame> refs;
  refs.reserve(n);
  for (int i = 0; i < s.n_sensors; ++i) refs.push_back(gelsim::reference_frame(s.sensor_config(i)));

  GraspTrace trace;
  trace.n_sensors = s.n_sensors;
  trace.threshold = s.threshold;
  std::vector<std::vector<double>> history;  // true signals per tick

  double closure = 0.0;
  int tick = 0;
  auto step = [&](Stage stage) {
    GraspTick t;
    t.tick = tick;
    t.stage = stage;
    t.time_us = timing.rounds()[static_cast<std::size_t>(tick)].start_us;
    t.closure_mm = closure;
    t.signal = detail::render_signals(s, refs, timing, tick, closure, seed, t.depth_mm);
    history.push_back(t.signal);
    t.delivered.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const int back = std::max(0, tick - s.delay_of(static_cast<int>(i)));
      t.delivered[i] = history[static_cast<std::size_t>(back)][i];
    }
    ++tick;
    return t;
  };

  for (int k = 0; k < s.rest_ticks; ++k) trace.ticks.push_back(step(Stage::Rest));

  for (int k = 0; k < s.tick_cap && trace.stop_tick < 0; ++k) {
    closure += s.closure_step_mm;
    bool contact = false;
    for (int i = 0; i < s.n_sensors; ++i) contact = contact || s.depth_at(i, closure) > 0.0;
    GraspTick t = step(contact ? Stage::Squeeze : Stage::Approach);
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (t.delivered[i] >= s.threshold && t.delivered[i] > best) {
        best = t.delivered[i];
        trace.trip_sensor = static_cast<int>(i);
      }
    }
    if (trace.trip_sensor >= 0) trace.stop_tick = t.tick;
    trace.ticks.push_back(std::move(t));
  }
  if (trace.stop_tick < 0) {
    double peak = 0.0;
    for (const auto& h : history)
      for (double v : h) peak = std::max(peak, v);
    throw Timeout("grasp did not reach threshold " + std::to_string(s.threshold) + " within " +
                  std::to_string(s.tick_cap) + " closing ticks (peak signal " + std::to_string(peak) + ")");
  }

  for (int k = 0; k < s.hold_ticks; ++k) trace.ticks.push_back(step(Stage::Hold));

  const double held = closure;
  for (int k = 1; k <= s.release_ticks; ++k) {
    closure = held * (1.0 - static_cast<double>(k) / static_cast<double>(s.release_ticks));
    trace.release.push_back(step(Stage::Release));
  }
  return trace;
}

struct SyncComparison {
  double overshoot_sync = 0.0;
  double overshoot_delayed = 0.0;
  int delayed_sensor = -1;
  int delay_rounds = 0;
  int stop_tick_sync = -1;
  int stop_tick_delayed = -1;
};

/// Runs the scenario without delay, then again with `delay_rounds` of
/// staleness on the sensor that tripped first.
inline SyncComparison compare_sync(GraspScenario s, int delay_rounds, std::uint64_t seed = 0) {
  if (delay_rounds < 1) throw InvalidArgument("compare_sync needs delay_rounds >= 1");
  s.delayed_sensor = -1;
  s.delay_rounds = 0;
  const GraspTrace sync = run_grasp(s, seed);
  s.delayed_sensor = sync.trip_sensor;
  s.delay_rounds = delay_rounds;
  const GraspTrace late = run_grasp(s, seed);
  return {sync.overshoot(), late.overshoot(), s.delayed_sensor, delay_rounds, sync.stop_tick, late.stop_tick};
}

inline nlohmann::json to_json(const SyncComparison& c) {
  return {{"delay_rounds", c.delay_rounds},
          {"delayed_sensor", c.delayed_sensor},
          {"overshoot_sync", c.overshoot_sync},
          {"overshoot_delayed", c.overshoot_delayed},
          {"stop_tick_sync", c.stop_tick_sync},
          {"stop_tick_delayed", c.stop_tick_delayed}};
}

inline nlohmann::json summary(const GraspTrace& t, const GraspScenario& s) {
  return {{"n_sensors", t.n_sensors},
          {"threshold", t.threshold},
          {"stop_tick", t.stop_tick},
          {"trip_sensor", t.trip_sensor},
          {"peak_after_stop", t.peak_after_stop()},
          {"overshoot", t.overshoot()},
          {"control_period_us", t.control_period_us()},
          {"predicted_frame_period_us", 1e6 / bus::predicted_frame_rate(s.bus)},
          {"delayed_sensor", s.delayed_sensor},
          {"delay_rounds", s.delay_rounds}};
}

}  // namespace tacsync::grasp
