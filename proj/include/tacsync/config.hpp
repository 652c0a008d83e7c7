#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tacsync/bus_sim.hpp"
#include "tacsync/calib.hpp"
#include "tacsync/core.hpp"
#include "tacsync/error.hpp"
#include "tacsync/experiments.hpp"
#include "tacsync/gelsim.hpp"
#include "tacsync/graspsim.hpp"
#include "tacsync/raster_io.hpp"

// JSON forms of the configuration types and the experiment config document.
// Readers are strict: unknown keys and wrong types raise FormatError, missing
// keys keep their defaults.
namespace tacsync::config {

using json = nlohmann::json;

namespace detail {

// Reads j[key] into out when present.
template <typename T>
void get(const json& j, const char* key, T& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("field '") + key + "': " + e.what());
  }
}

inline void only_keys(const json& j, std::initializer_list<const char*> keys, const char* where) {
  if (!j.is_object()) throw FormatError(std::string(where) + " must be a JSON object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    if (!allowed.contains(k)) throw FormatError(std::string("unknown key '") + k + "' in " + where);
}

}  // namespace detail

// --- sensor -----------------------------------------------------------------

inline json to_json(const Light& l) { return {{"direction", l.direction}, {"intensity", l.intensity}}; }

inline Light light_from_json(const json& j) {
  detail::only_keys(j, {"direction", "intensity"}, "light");
  Light l;
  detail::get(j, "direction", l.direction);
  detail::get(j, "intensity", l.intensity);
  return l;
}

inline json to_json(const SensorConfig& c) {
  json lights = json::array();
  for (const auto& l : c.lights) lights.push_back(to_json(l));
  return {{"sensor_id", c.sensor_id},
          {"height", c.height},
          {"width", c.width},
          {"pixel_pitch_mm", c.pixel_pitch_mm},
          {"lights", lights},
          {"albedo", c.albedo},
          {"channel_offset", c.channel_offset},
          {"channel_gain", c.channel_gain},
          {"noise_sigma", c.noise_sigma},
          {"illumination_falloff", c.illumination_falloff},
          {"fixed_pattern_sigma", c.fixed_pattern_sigma},
          {"rng_seed", c.rng_seed}};
}

// Missing fields fall back to default_sensor_config(sensor_id).
inline SensorConfig sensor_from_json(const json& j) {
  detail::only_keys(j,
                    {"sensor_id", "height", "width", "pixel_pitch_mm", "lights", "albedo", "channel_offset",
                     "channel_gain", "noise_sigma", "illumination_falloff", "fixed_pattern_sigma", "rng_seed"},
                    "sensor");
  int id = 0;
  detail::get(j, "sensor_id", id);
  SensorConfig c = default_sensor_config(id);
  detail::get(j, "height", c.height);
  detail::get(j, "width", c.width);
  detail::get(j, "pixel_pitch_mm", c.pixel_pitch_mm);
  if (const auto it = j.find("lights"); it != j.end()) {
    if (!it->is_array() || it->size() != 3) throw FormatError("sensor.lights must hold exactly 3 lights");
    for (std::size_t i = 0; i < 3; ++i) c.lights[i] = light_from_json((*it)[i]);
  }
  detail::get(j, "albedo", c.albedo);
  detail::get(j, "channel_offset", c.channel_offset);
  detail::get(j, "channel_gain", c.channel_gain);
  detail::get(j, "noise_sigma", c.noise_sigma);
  detail::get(j, "illumination_falloff", c.illumination_falloff);
  detail::get(j, "fixed_pattern_sigma", c.fixed_pattern_sigma);
  detail::get(j, "rng_seed", c.rng_seed);
  return c;
}

// --- indenter ---------------------------------------------------------------

inline json to_json(const gelsim::Indenter& i) {
  return {{"shape", gelsim::to_string(i.shape)},   {"radius_mm", i.radius_mm},
          {"apex_angle_deg", i.apex_angle_deg},    {"ridge_width_mm", i.ridge_width_mm},
          {"max_depth_mm", i.max_depth_mm},        {"center_x", i.center_x},
          {"center_y", i.center_y}};
}

inline gelsim::Indenter indenter_from_json(const json& j) {
  detail::only_keys(j, {"shape", "radius_mm", "apex_angle_deg", "ridge_width_mm", "max_depth_mm", "center_x", "center_y"},
                    "indenter");
  gelsim::Indenter i;
  std::string shape = gelsim::to_string(i.shape);
  detail::get(j, "shape", shape);
  try {
    i.shape = gelsim::shape_from_string(shape);
  } catch (const Error& e) {
    throw FormatError(e.what());
  }
  detail::get(j, "radius_mm", i.radius_mm);
  detail::get(j, "apex_angle_deg", i.apex_angle_deg);
  detail::get(j, "ridge_width_mm", i.ridge_width_mm);
  detail::get(j, "max_depth_mm", i.max_depth_mm);
  detail::get(j, "center_x", i.center_x);
  detail::get(j, "center_y", i.center_y);
  return i;
}

// --- bus --------------------------------------------------------------------

inline json to_json(const bus::BusConfig& b) {
  return {{"n_sensors", b.n_sensors},
          {"frame_size_bytes", b.frame_size_bytes},
          {"spi_bitrate_bps", b.spi_bitrate_bps},
          {"usb_bitrate_bps", b.usb_bitrate_bps},
          {"i2c_cmd_time_us", b.i2c_cmd_time_us},
          {"t_buf_us", b.t_buf_us},
          {"per_sensor_extra_delay_us", b.per_sensor_extra_delay_us}};
}

inline bus::BusConfig bus_from_json(const json& j) {
  detail::only_keys(j,
                    {"n_sensors", "frame_size_bytes", "spi_bitrate_bps", "usb_bitrate_bps", "i2c_cmd_time_us",
                     "t_buf_us", "per_sensor_extra_delay_us"},
                    "bus");
  bus::BusConfig b;
  detail::get(j, "n_sensors", b.n_sensors);
  detail::get(j, "frame_size_bytes", b.frame_size_bytes);
  detail::get(j, "spi_bitrate_bps", b.spi_bitrate_bps);
  detail::get(j, "usb_bitrate_bps", b.usb_bitrate_bps);
  detail::get(j, "i2c_cmd_time_us", b.i2c_cmd_time_us);
  detail::get(j, "t_buf_us", b.t_buf_us);
  detail::get(j, "per_sensor_extra_delay_us", b.per_sensor_extra_delay_us);
  return b;
}

// --- calibration ------------------------------------------------------------

inline json to_json(const calib::MlpHyperparameters& h) {
  return {{"hidden", h.hidden},       {"dropout", h.dropout},   {"learning_rate", h.learning_rate},
          {"batch_size", h.batch_size}, {"epochs", h.epochs},   {"beta1", h.beta1},
          {"beta2", h.beta2},         {"epsilon", h.epsilon},   {"cosine_decay", h.cosine_decay}};
}

inline calib::MlpHyperparameters hyper_from_json(const json& j) {
  detail::only_keys(j,
                    {"hidden", "dropout", "learning_rate", "batch_size", "epochs", "beta1", "beta2", "epsilon",
                     "cosine_decay"},
                    "mlp hyperparameters");
  calib::MlpHyperparameters h;
  detail::get(j, "hidden", h.hidden);
  detail::get(j, "dropout", h.dropout);
  detail::get(j, "learning_rate", h.learning_rate);
  detail::get(j, "batch_size", h.batch_size);
  detail::get(j, "epochs", h.epochs);
  detail::get(j, "beta1", h.beta1);
  detail::get(j, "beta2", h.beta2);
  detail::get(j, "epsilon", h.epsilon);
  detail::get(j, "cosine_decay", h.cosine_decay);
  return h;
}

inline json to_json(const calib::TransferOffsets& o) { return {{"delta", o.delta}, {"gain", o.gain}}; }

inline calib::TransferOffsets offsets_from_json(const json& j) {
  detail::only_keys(j, {"delta", "gain"}, "offsets");
  calib::TransferOffsets o;
  detail::get(j, "delta", o.delta);
  detail::get(j, "gain", o.gain);
  for (std::size_t c = 0; c < 3; ++c)
    if (!std::isfinite(o.delta[c]) || !std::isfinite(o.gain[c])) throw FormatError("offsets must be finite");
  return o;
}

// --- grasp ------------------------------------------------------------------

inline json to_json(const grasp::GraspScenario& s) {
  return {{"n_sensors", s.n_sensors},
          {"contact_onset_mm", s.contact_onset_mm},
          {"depth_per_closure", s.depth_per_closure},
          {"closure_step_mm", s.closure_step_mm},
          {"max_depth_mm", s.max_depth_mm},
          {"threshold", s.threshold},
          {"probe", to_json(s.probe)},
          {"sensor", to_json(s.sensor)},
          {"delayed_sensor", s.delayed_sensor},
          {"delay_rounds", s.delay_rounds},
          {"tick_cap", s.tick_cap},
          {"rest_ticks", s.rest_ticks},
          {"hold_ticks", s.hold_ticks},
          {"release_ticks", s.release_ticks}};
}

// The grasp bus is not read here; the experiment config supplies it.
inline grasp::GraspScenario grasp_from_json(const json& j) {
  detail::only_keys(j,
                    {"n_sensors", "contact_onset_mm", "depth_per_closure", "closure_step_mm", "max_depth_mm",
                     "threshold", "probe", "sensor", "delayed_sensor", "delay_rounds", "tick_cap", "rest_ticks",
                     "hold_ticks", "release_ticks"},
                    "grasp");
  grasp::GraspScenario s;
  detail::get(j, "n_sensors", s.n_sensors);
  detail::get(j, "contact_onset_mm", s.contact_onset_mm);
  detail::get(j, "depth_per_closure", s.depth_per_closure);
  detail::get(j, "closure_step_mm", s.closure_step_mm);
  detail::get(j, "max_depth_mm", s.max_depth_mm);
  detail::get(j, "threshold", s.threshold);
  if (j.contains("probe")) s.probe = indenter_from_json(j["probe"]);
  if (j.contains("sensor")) s.sensor = sensor_from_json(j["sensor"]);
  detail::get(j, "delayed_sensor", s.delayed_sensor);
  detail::get(j, "delay_rounds", s.delay_rounds);
  detail::get(j, "tick_cap", s.tick_cap);
  detail::get(j, "rest_ticks", s.rest_ticks);
  detail::get(j, "hold_ticks", s.hold_ticks);
  detail::get(j, "release_ticks", s.release_ticks);
  return s;
}

// --- experiment config ------------------------------------------------------

struct CalibrationSection {
  std::string model = "mlp";  // mlp | lut
  std::string mode = "diff";  // diff | raw
  int lut_bins = 32;
  int train_captures = 50;
  int test_captures = 5;
  int reference_sensor = 0;
  bool estimate_gain = false;
  calib::MlpHyperparameters mlp;
};

struct DatasetSection {
  int sensor = 0;  // index into sensors
  int n_captures = 50;
  std::string mode = "diff";
  bool quantize = false;
};

struct ExperimentConfig {
  std::uint64_t seed = 2024;
  std::string output_dir = "out";
  bus::BusConfig bus;
  int bus_rounds = 100;
  std::vector<SensorConfig> sensors;
  CalibrationSection calibration;
  DatasetSection dataset;
  grasp::GraspScenario grasp;
  std::vector<int> grasp_delays{1, 2, 3, 4};

  void validate() const {
    std::set<int> ids;
    for (const auto& s : sensors) {
      s.validate();
      if (!ids.insert(s.sensor_id).second)
        throw InvalidConfig("duplicate sensor_id " + std::to_string(s.sensor_id));
    }
    if (sensors.empty()) throw InvalidConfig("at least one sensor is required");
    bus.validate();
    if (bus_rounds < 1) throw InvalidConfig("bus_rounds must be >= 1");
    if (calibration.model != "mlp" && calibration.model != "lut")
      throw InvalidConfig("calibration.model must be mlp or lut");
    (void)gelsim::mode_from_string(calibration.mode);
    (void)gelsim::mode_from_string(dataset.mode);
    calibration.mlp.validate();
    if (calibration.lut_bins < 1 || calibration.lut_bins > 256) throw InvalidConfig("lut_bins must lie in [1, 256]");
    if (calibration.train_captures < 1 || calibration.test_captures < 1)
      throw InvalidConfig("capture counts must be >= 1");
    if (calibration.reference_sensor < 0 || calibration.reference_sensor >= static_cast<int>(sensors.size()))
      throw InvalidConfig("calibration.reference_sensor out of range");
    if (dataset.sensor < 0 || dataset.sensor >= static_cast<int>(sensors.size()))
      throw InvalidConfig("dataset.sensor out of range");
    if (dataset.n_captures < 1) throw InvalidConfig("dataset.n_captures must be >= 1");
    grasp.validate();
    for (int d : grasp_delays)
      if (d < 1) throw InvalidConfig("grasp_delays entries must be >= 1");
  }
};

inline ExperimentConfig default_experiment_config() {
  ExperimentConfig c;
  for (int i = 0; i < 3; ++i) c.sensors.push_back(experiments::benchmark_sensor(i));
  return c;
}

inline json to_json(const ExperimentConfig& c) {
  json sensors = json::array();
  for (const auto& s : c.sensors) sensors.push_back(to_json(s));
  return {{"seed", c.seed},
          {"output_dir", c.output_dir},
          {"bus", to_json(c.bus)},
          {"bus_rounds", c.bus_rounds},
          {"sensors", sensors},
          {"calibration",
           {{"model", c.calibration.model},
            {"mode", c.calibration.mode},
            {"lut_bins", c.calibration.lut_bins},
            {"train_captures", c.calibration.train_captures},
            {"test_captures", c.calibration.test_captures},
            {"reference_sensor", c.calibration.reference_sensor},
            {"estimate_gain", c.calibration.estimate_gain},
            {"mlp", to_json(c.calibration.mlp)}}},
          {"dataset",
           {{"sensor", c.dataset.sensor},
            {"n_captures", c.dataset.n_captures},
            {"mode", c.dataset.mode},
            {"quantize", c.dataset.quantize}}},
          {"grasp", to_json(c.grasp)},
          {"grasp_delays", c.grasp_delays}};
}

/// Builds a config from a JSON document. The seed is mandatory; every other
/// field defaults to default_experiment_config(). The grasp scenario runs on
/// the top-level bus with n_sensors taken from the scenario.
inline ExperimentConfig experiment_from_json(const json& j) {
  detail::only_keys(j,
                    {"seed", "output_dir", "bus", "bus_rounds", "sensors", "calibration", "dataset", "grasp",
                     "grasp_delays"},
                    "config");
  if (!j.contains("seed")) throw FormatError("config is missing the global 'seed'");
  ExperimentConfig c = default_experiment_config();
  detail::get(j, "seed", c.seed);
  detail::get(j, "output_dir", c.output_dir);
  if (j.contains("bus")) c.bus = bus_from_json(j["bus"]);
  detail::get(j, "bus_rounds", c.bus_rounds);
  if (const auto it = j.find("sensors"); it != j.end()) {
    if (!it->is_array()) throw FormatError("sensors must be an array");
    c.sensors.clear();
    for (const auto& s : *it) c.sensors.push_back(sensor_from_json(s));
  }
  if (const auto it = j.find("calibration"); it != j.end()) {
    const json& k = *it;
    detail::only_keys(k,
                      {"model", "mode", "lut_bins", "train_captures", "test_captures", "reference_sensor",
                       "estimate_gain", "mlp"},
                      "calibration");
    detail::get(k, "model", c.calibration.model);
    detail::get(k, "mode", c.calibration.mode);
    detail::get(k, "lut_bins", c.calibration.lut_bins);
    detail::get(k, "train_captures", c.calibration.train_captures);
    detail::get(k, "test_captures", c.calibration.test_captures);
    detail::get(k, "reference_sensor", c.calibration.reference_sensor);
    detail::get(k, "estimate_gain", c.calibration.estimate_gain);
    if (k.contains("mlp")) c.calibration.mlp = hyper_from_json(k["mlp"]);
  }
  if (const auto it = j.find("dataset"); it != j.end()) {
    detail::only_keys(*it, {"sensor", "n_captures", "mode", "quantize"}, "dataset");
    detail::get(*it, "sensor", c.dataset.sensor);
    detail::get(*it, "n_captures", c.dataset.n_captures);
    detail::get(*it, "mode", c.dataset.mode);
    detail::get(*it, "quantize", c.dataset.quantize);
  }
  if (j.contains("grasp")) c.grasp = grasp_from_json(j["grasp"]);
  c.grasp.bus = c.bus;
  c.grasp.bus.n_sensors = c.grasp.n_sensors;
  c.grasp.bus.per_sensor_extra_delay_us.clear();
  detail::get(j, "grasp_delays", c.grasp_delays);
  try {
    c.validate();
  } catch (const InvalidConfig& e) {
    throw FormatError(e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(e.what());
  }
  return c;
}

/// Applies "a.b.c=value" to a JSON document. The value is parsed as JSON when
/// possible (numbers, booleans, arrays) and taken as a string otherwise.
/// Numeric path segments index arrays.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw FormatError("override '" + assignment + "' is not path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw FormatError("override path '" + path + "' has an empty segment");
    json* child = nullptr;
    if (node->is_array()) {
      std::size_t idx = 0;
      try {
        std::size_t used = 0;
        idx = std::stoul(key, &used);
        if (used != key.size()) throw std::invalid_argument(key);
      } catch (const std::exception&) {
        throw FormatError("override path '" + path + "': '" + key + "' is not an array index");
      }
      if (idx >= node->size()) throw FormatError("override path '" + path + "': index " + key + " out of range");
      child = &(*node)[idx];
    } else {
      if (node->is_null()) *node = json::object();
      if (!node->is_object()) throw FormatError("override path '" + path + "' descends into a scalar");
      child = &(*node)[key];
    }
    if (dot == std::string::npos) {
      *child = std::move(value);
      return;
    }
    node = child;
    start = dot + 1;
  }
}

/// Reads the config file (or the defaults when path is empty) and applies
/// the overrides in order.
inline ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                               const std::vector<std::string>& overrides) {
  json doc;
  if (path.empty()) {
    doc = to_json(default_experiment_config());
  } else {
    if (!std::filesystem::exists(path)) throw IoError("config file not found: " + path.string());
    const auto bytes = io::read_file(path);
    doc = json::parse(bytes.begin(), bytes.end(), nullptr, false);
    if (doc.is_discarded()) throw FormatError("config is not valid JSON: " + path.string());
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return experiment_from_json(doc);
}

}  // namespace tacsync::config
