#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tacsync/config.hpp"
#include "tacsync/error.hpp"
#include "tacsync/gelsim.hpp"
#include "tacsync/raster_io.hpp"

// Dataset directory: manifest.json plus, per entry i, NNNN_input.tsr (frame or
// diff), NNNN_grad.tsr and NNNN_depth.tsr.
namespace tacsync::io {

namespace detail {

inline std::string entry_name(std::size_t i, const char* what) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu_%s.tsr", i, what);
  return buf;
}

// 8-bit camera values: frames snap to k/255, differentials of two such frames
// to signed multiples of 1/255.
inline Raster quantized(Raster r) {
  for (float& v : r.data) {
    const double q = std::round(static_cast<double>(v) * 255.0) / 255.0;
    v = static_cast<float>(std::clamp(q, r.kind == "diff" ? -1.0 : 0.0, 1.0));
  }
  return r;
}

}  // namespace detail

inline void save_dataset(const std::filesystem::path& dir, const gelsim::Dataset& ds, bool quantize = false) {
  std::filesystem::create_directories(dir);
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.entries.size(); ++i) {
    const auto& e = ds.entries[i];
    Raster in = std::visit([](const auto& f) { return to_raster(f); }, e.input);
    if (quantize) in = detail::quantized(std::move(in));
    const std::string fin = detail::entry_name(i, "input"), fgrad = detail::entry_name(i, "grad"),
                      fdepth = detail::entry_name(i, "depth");
    save_raster(dir / fin, in);
    save_raster(dir / fgrad, to_raster(e.truth));
    save_raster(dir / fdepth, to_raster(e.depth));
    entries.push_back({{"index", i},
                       {"input", fin},
                       {"grad", fgrad},
                       {"depth", fdepth},
                       {"indenter", config::to_json(e.indenter)}});
  }
  const nlohmann::json manifest = {{"format", "tacsync-dataset"},
                                   {"version", 1},
                                   {"seed", ds.seed},
                                   {"input_mode", gelsim::to_string(ds.mode)},
                                   {"quantized", quantize},
                                   {"n_captures", ds.entries.size()},
                                   {"sensor", config::to_json(ds.config)},
                                   {"entries", entries}};
  write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline gelsim::Dataset load_dataset(const std::filesystem::path& dir) {
  const auto mpath = dir / "manifest.json";
  if (!std::filesystem::exists(mpath)) throw IoError("dataset manifest not found: " + mpath.string());
  const auto bytes = read_file(mpath);
  const auto m = nlohmann::json::parse(bytes.begin(), bytes.end(), nullptr, false);
  if (m.is_discarded() || !m.is_object()) throw FormatError("manifest.json is not a JSON object");
  gelsim::Dataset ds;
  try {
    if (m.at("format") != "tacsync-dataset") throw FormatError("manifest format tag is not tacsync-dataset");
    ds.seed = m.at("seed").get<std::uint64_t>();
    ds.mode = gelsim::mode_from_string(m.at("input_mode").get<std::string>());
    ds.config = config::sensor_from_json(m.at("sensor"));
    for (const auto& e : m.at("entries")) {
      const auto in = load_raster(dir / e.at("input").get<std::string>());
      const auto grad = load_raster(dir / e.at("grad").get<std::string>());
      const auto depth = load_raster(dir / e.at("depth").get<std::string>());
      const FrameMeta meta{ds.config.sensor_id, e.at("index").get<std::uint64_t>(), 0};
      gelsim::Capture input = ds.mode == gelsim::InputMode::Raw ? gelsim::Capture(tactile_from_raster(in, meta))
                                                                : gelsim::Capture(diff_from_raster(in, meta));
      ds.entries.push_back({std::move(input), grad_from_raster(grad), depth_from_raster(depth),
                            config::indenter_from_json(e.at("indenter"))});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed manifest.json: ") + e.what());
  }
  if (ds.entries.size() != m.value("n_captures", ds.entries.size()))
    throw FormatError("manifest n_captures disagrees with its entry list");
  return ds;
}

}  // namespace tacsync::io
