#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tacsync/core.hpp"
#include "tacsync/error.hpp"

namespace tacsync::bus {

// All times are integer microseconds.
using Micros = std::int64_t;

/// Hub plus N cascaded sensor boards. The defaults are the reference hardware
/// figures: 40 Mbit/s SPI, 1 ms image buffering, 30 us per trigger command.
struct BusConfig {
  int n_sensors = 7;
  std::int64_t frame_size_bytes = 20480;
  std::int64_t spi_bitrate_bps = 40'000'000;
  Micros i2c_cmd_time_us = 30;
  Micros t_buf_us = 1000;
  // USB link modelled as a constant bitrate; defaults to the SPI rate as a
  // floor since the host link is normally the faster one.
  std::int64_t usb_bitrate_bps = 40'000'000;
  // Fault injection: extra readiness delay per sensor. Empty means all zero.
  std::vector<Micros> per_sensor_extra_delay_us;

  void validate() const {
    if (n_sensors < 1) throw InvalidConfig("n_sensors must be >= 1");
    if (frame_size_bytes <= 0) throw InvalidConfig("frame_size_bytes must be positive");
    if (spi_bitrate_bps <= 0 || usb_bitrate_bps <= 0) throw InvalidConfig("bitrates must be positive");
    if (i2c_cmd_time_us <= 0 || t_buf_us <= 0) throw InvalidConfig("durations must be positive");
    if (!per_sensor_extra_delay_us.empty()) {
      if (per_sensor_extra_delay_us.size() != static_cast<std::size_t>(n_sensors))
        throw InvalidConfig("per_sensor_extra_delay_us must have n_sensors entries");
      for (Micros d : per_sensor_extra_delay_us)
        if (d < 0) throw InvalidConfig("per_sensor_extra_delay_us entries must be >= 0");
    }
  }

  Micros extra_delay(int sensor) const {
    return per_sensor_extra_delay_us.empty() ? 0 : per_sensor_extra_delay_us[static_cast<std::size_t>(sensor)];
  }
};

/// 8 * bytes / bitrate, rounded to the nearest microsecond (ties up).
inline Micros predicted_transfer_time(std::int64_t frame_size_bytes, std::int64_t bitrate_bps) {
  if (frame_size_bytes <= 0 || bitrate_bps <= 0)
    throw InvalidConfig("transfer time needs positive size and bitrate");
  const __int128 num = static_cast<__int128>(frame_size_bytes) * 8 * 1'000'000;
  return static_cast<Micros>((2 * num + bitrate_bps) / (2 * static_cast<__int128>(bitrate_bps)));
}

inline Micros spi_time(const BusConfig& c) { return predicted_transfer_time(c.frame_size_bytes, c.spi_bitrate_bps); }
inline Micros usb_time(const BusConfig& c) { return predicted_transfer_time(c.frame_size_bytes, c.usb_bitrate_bps); }

// f = 1 / (N t_spi + t_buf), in Hz.
inline double predicted_frame_rate(const BusConfig& c) {
  c.validate();
  return 1e6 / static_cast<double>(c.n_sensors * spi_time(c) + c.t_buf_us);
}

// latency = N t_spi + t_buf + t_usb
inline Micros predicted_latency(const BusConfig& c) {
  c.validate();
  return c.n_sensors * spi_time(c) + c.t_buf_us + usb_time(c);
}

// Upper bound on trigger spread: one command time per sensor.
inline Micros predicted_sync_error(const BusConfig& c) {
  c.validate();
  return c.i2c_cmd_time_us * c.n_sensors;
}

struct SensorTiming {
  std::uint64_t round_id = 0;
  int sensor_id = 0;
  Micros trigger_time_us = 0;
  Micros capture_done_us = 0;  // image buffered and ready for SPI transfer
  Micros spi_start_us = 0;
  Micros spi_end_us = 0;
  Micros usb_delivered_us = 0;
};

struct RoundMetrics {
  std::uint64_t round_id = 0;
  Micros start_us = 0;
  Micros frame_period_us = 0;  // until the next round's first trigger
  Micros max_latency_us = 0;   // round start to last host delivery
  Micros sync_error_us = 0;    // max - min trigger time
};

class AcquisitionTrace {
 public:
  AcquisitionTrace(BusConfig config, std::vector<SensorTiming> rows, std::vector<RoundMetrics> rounds)
      : config_(std::move(config)), rows_(std::move(rows)), rounds_(std::move(rounds)) {}

  const BusConfig& config() const { return config_; }
  std::size_t n_rounds() const { return rounds_.size(); }
  const std::vector<SensorTiming>& rows() const { return rows_; }
  const std::vector<RoundMetrics>& rounds() const { return rounds_; }

  const SensorTiming& at(std::size_t round, int sensor) const {
    return rows_[round * static_cast<std::size_t>(config_.n_sensors) + static_cast<std::size_t>(sensor)];
  }

  double mean_frame_period_us() const {
    double s = 0.0;
    for (const auto& r : rounds_) s += static_cast<double>(r.frame_period_us);
    return s / static_cast<double>(rounds_.size());
  }

  double simulated_frame_rate() const { return 1e6 / mean_frame_period_us(); }

  Micros max_latency_us() const {
    Micros m = 0;
    for (const auto& r : rounds_) m = std::max(m, r.max_latency_us);
    return m;
  }

  Micros max_sync_error_us() const {
    Micros m = 0;
    for (const auto& r : rounds_) m = std::max(m, r.sync_error_us);
    return m;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "round_id,sensor_id,trigger_time_us,capture_done_us,spi_start_us,spi_end_us,usb_delivered_us\n";
    for (const auto& r : rows_)
      os << r.round_id << ',' << r.sensor_id << ',' << r.trigger_time_us << ',' << r.capture_done_us << ','
         << r.spi_start_us << ',' << r.spi_end_us << ',' << r.usb_delivered_us << '\n';
    return os.str();
  }

  nlohmann::json summary() const {
    nlohmann::json j;
    j["n_sensors"] = config_.n_sensors;
    j["frame_size_bytes"] = config_.frame_size_bytes;
    j["n_rounds"] = rounds_.size();
    j["t_spi_us"] = spi_time(config_);
    j["t_usb_us"] = usb_time(config_);
    j["predicted"] = {{"frame_rate_hz", predicted_frame_rate(config_)},
                      {"latency_us", predicted_latency(config_)},
                      {"sync_error_us", predicted_sync_error(config_)}};
    j["simulated"] = {{"frame_rate_hz", simulated_frame_rate()},
                      {"mean_frame_period_us", mean_frame_period_us()},
                      {"latency_us", max_latency_us()},
                      {"sync_error_us", max_sync_error_us()}};
    return j;
  }

 private:
  BusConfig config_;
  std::vector<SensorTiming> rows_;
  std::vector<RoundMetrics> rounds_;
};

namespace detail {

enum class EventKind { RoundStart, Trigger, Ready, SpiDone, UsbDone };

struct Event {
  Micros time;
  std::uint64_t seq;
  EventKind kind;
  std::size_t round;
  int sensor;
};

struct Later {
  bool operator()(const Event& a, const Event& b) const {
    return a.time != b.time ? a.time > b.time : a.seq > b.seq;
  }
};

}  // namespace detail

/// Event-driven simulation of n_rounds acquisition rounds.
///
/// Per round the coordinator issues one trigger command per sensor in index
/// order (sensor i at start + i * t_cmd). A sensor buffers for t_buf (plus its
/// injected delay) and then waits for the shared SPI bus; images move strictly
/// in sensor order, each as soon as the bus is free and the sensor is ready.
/// Every image is then forwarded over USB (an independent serial resource).
/// The next round's first trigger fires when the last SPI transfer ends.
inline AcquisitionTrace simulate_rounds(const BusConfig& config, int n_rounds) {
  using namespace detail;
  config.validate();
  if (n_rounds < 1) throw InvalidArgument("n_rounds must be >= 1");

  const auto n = static_cast<std::size_t>(config.n_sensors);
  const auto rounds = static_cast<std::size_t>(n_rounds);
  const Micros t_spi = spi_time(config);
  const Micros t_usb = usb_time(config);

  std::vector<SensorTiming> rows(rounds * n);
  std::vector<RoundMetrics> metrics(rounds);
  std::vector<char> ready(rounds * n, 0);

  std::priority_queue<Event, std::vector<Event>, Later> queue;
  std::uint64_t seq = 0;
  auto schedule = [&](Micros t, EventKind k, std::size_t r, int s) { queue.push({t, seq++, k, r, s}); };

  bool bus_busy = false;
  std::size_t xfer_round = 0;
  std::size_t xfer_sensor = 0;
  Micros usb_free = 0;

  auto try_transfer = [&](Micros now) {
    if (bus_busy || xfer_round >= rounds) return;
    const std::size_t idx = xfer_round * n + xfer_sensor;
    if (!ready[idx]) return;
    bus_busy = true;
    rows[idx].spi_start_us = now;
    schedule(now + t_spi, EventKind::SpiDone, xfer_round, static_cast<int>(xfer_sensor));
  };

  schedule(0, EventKind::RoundStart, 0, 0);
  while (!queue.empty()) {
    const Event ev = queue.top();
    queue.pop();
    const std::size_t idx = ev.round * n + static_cast<std::size_t>(ev.sensor);
    switch (ev.kind) {
      case EventKind::RoundStart:
        metrics[ev.round].round_id = ev.round;
        metrics[ev.round].start_us = ev.time;
        for (std::size_t i = 0; i < n; ++i)
          schedule(ev.time + static_cast<Micros>(i) * config.i2c_cmd_time_us, EventKind::Trigger, ev.round,
                   static_cast<int>(i));
        break;
      case EventKind::Trigger: {
        auto& row = rows[idx];
        row.round_id = ev.round;
        row.sensor_id = ev.sensor;
        row.trigger_time_us = ev.time;
        row.capture_done_us = ev.time + config.t_buf_us + config.extra_delay(ev.sensor);
        schedule(row.capture_done_us, EventKind::Ready, ev.round, ev.sensor);
        break;
      }
      case EventKind::Ready:
        ready[idx] = 1;
        try_transfer(ev.time);
        break;
      case EventKind::SpiDone: {
        rows[idx].spi_end_us = ev.time;
        bus_busy = false;
        const Micros usb_start = std::max(ev.time, usb_free);
        usb_free = usb_start + t_usb;
        schedule(usb_free, EventKind::UsbDone, ev.round, ev.sensor);
        if (++xfer_sensor == n) {
          xfer_sensor = 0;
          ++xfer_round;
          if (xfer_round < rounds) schedule(ev.time, EventKind::RoundStart, xfer_round, 0);
        }
        try_transfer(ev.time);
        break;
      }
      case EventKind::UsbDone:
        rows[idx].usb_delivered_us = ev.time;
        break;
    }
  }

  for (std::size_t r = 0; r < rounds; ++r) {
    auto& m = metrics[r];
    Micros tmin = rows[r * n].trigger_time_us, tmax = tmin, last_spi = 0, last_usb = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& row = rows[r * n + i];
      tmin = std::min(tmin, row.trigger_time_us);
      tmax = std::max(tmax, row.trigger_time_us);
      last_spi = std::max(last_spi, row.spi_end_us);
      last_usb = std::max(last_usb, row.usb_delivered_us);
    }
    m.frame_period_us = last_spi - m.start_us;
    m.max_latency_us = last_usb - tmin;
    m.sync_error_us = tmax - tmin;
  }
  return AcquisitionTrace(config, std::move(rows), std::move(metrics));
}

/// The N frames of one acquisition round, ordered by sensor id.
class FrameSet {
 public:
  FrameSet(std::uint64_t round_id, std::vector<TactileFrame> frames) : round_id_(round_id), frames_(std::move(frames)) {
    std::sort(frames_.begin(), frames_.end(),
              [](const TactileFrame& a, const TactileFrame& b) { return a.sensor_id() < b.sensor_id(); });
    for (std::size_t i = 0; i < frames_.size(); ++i) {
      if (frames_[i].round_id() != round_id_) throw ProtocolViolation("frame set member has a foreign round_id");
      if (frames_[i].sensor_id() != static_cast<int>(i))
        throw ProtocolViolation("frame set sensor ids must be exactly 0..N-1");
    }
  }

  std::uint64_t round_id() const { return round_id_; }
  std::size_t size() const { return frames_.size(); }
  const TactileFrame& operator[](std::size_t sensor) const { return frames_[sensor]; }
  const std::vector<TactileFrame>& frames() const { return frames_; }

 private:
  std::uint64_t round_id_;
  std::vector<TactileFrame> frames_;
};

struct IncompleteRound {
  std::uint64_t round_id = 0;
  std::vector<int> missing_sensors;
};

struct Assembly {
  std::vector<FrameSet> complete;       // ascending round_id
  std::vector<IncompleteRound> incomplete;
};

/// Groups delivered frames into per-round frame sets. Rounds that received at
/// least one frame but not all N are listed in `incomplete`.
inline Assembly assemble_frame_sets(const AcquisitionTrace& trace, std::vector<TactileFrame> frames) {
  const int n = trace.config().n_sensors;
  std::map<std::uint64_t, std::vector<TactileFrame>> by_round;
  std::set<std::pair<std::uint64_t, int>> seen;
  for (auto& f : frames) {
    if (f.round_id() >= trace.n_rounds())
      throw ProtocolViolation("frame references round " + std::to_string(f.round_id()) + " absent from the trace");
    if (f.sensor_id() < 0 || f.sensor_id() >= n)
      throw ProtocolViolation("frame has unknown sensor id " + std::to_string(f.sensor_id()));
    if (!seen.insert({f.round_id(), f.sensor_id()}).second)
      throw ProtocolViolation("duplicate frame for sensor " + std::to_string(f.sensor_id()) + " in round " +
                              std::to_string(f.round_id()));
    by_round[f.round_id()].push_back(std::move(f));
  }
  Assembly out;
  for (auto& [round, members] : by_round) {
    if (members.size() == static_cast<std::size_t>(n)) {
      out.complete.emplace_back(round, std::move(members));
      continue;
    }
    IncompleteRound inc{round, {}};
    for (int s = 0; s < n; ++s)
      if (!seen.contains({round, s})) inc.missing_sensors.push_back(s);
    out.incomplete.push_back(std::move(inc));
  }
  return out;
}

}  // namespace tacsync::bus
