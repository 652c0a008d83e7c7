#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "tacsync/calib.hpp"
#include "tacsync/config.hpp"
#include "tacsync/error.hpp"
#include "tacsync/raster_io.hpp"

// TCM1 model files:
//   "TCM1" | header_len u32 LE | JSON header (header_len bytes) | float32 LE blob
// The header names the kind ("mlp" or "lut"), the architecture, input
// normalisation, hyperparameters and transfer offsets, plus blob_floats.
// MLP blob: per layer, weights row-major [out x in] then biases.
// LUT blob: mean_gx[B^3], mean_gy[B^3], counts[B^3] (integral values).
namespace tacsync::io {

using Model = std::variant<calib::MlpModel, calib::LookupTable>;

inline constexpr char kModelMagic[4] = {'T', 'C', 'M', '1'};

namespace detail {

inline std::vector<std::uint8_t> pack(const nlohmann::json& header, const std::vector<float>& blob) {
  const std::string h = header.dump();
  std::vector<std::uint8_t> out(kModelMagic, kModelMagic + 4);
  const auto len = static_cast<std::uint32_t>(h.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(len >> (8 * i)));
  out.insert(out.end(), h.begin(), h.end());
  out.reserve(out.size() + 4 * blob.size());
  for (float v : blob) put_f32_le(out, v);
  return out;
}

template <typename T>
T field(const nlohmann::json& h, const char* key) {
  const auto it = h.find(key);
  if (it == h.end()) throw FormatError(std::string("TCM1 header lacks '") + key + "'");
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("TCM1 header field '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_model(const calib::MlpModel& m) {
  m.validate();
  std::vector<float> blob;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    const auto& w = m.weights[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) blob.push_back(w(r, c));
    for (Eigen::Index r = 0; r < m.biases[l].size(); ++r) blob.push_back(m.biases[l](r));
  }
  const nlohmann::json header = {{"format", "TCM1"},
                                 {"kind", "mlp"},
                                 {"layer_sizes", m.layer_sizes()},
                                 {"activation", "tanh"},
                                 {"feature_mean", m.feature_mean},
                                 {"feature_std", m.feature_std},
                                 {"target_scale", m.target_scale},
                                 {"offsets", config::to_json(m.offsets)},
                                 {"hyperparameters", config::to_json(m.hyper)},
                                 {"seed", m.seed},
                                 {"final_train_loss", m.final_train_loss},
                                 {"input_mode", gelsim::to_string(m.mode)},
                                 {"train_height", m.train_height},
                                 {"train_width", m.train_width},
                                 {"blob_floats", blob.size()}};
  return detail::pack(header, blob);
}

inline std::vector<std::uint8_t> encode_model(const calib::LookupTable& t) {
  const std::size_t cells = t.counts().size();
  std::vector<float> blob;
  blob.reserve(3 * cells);
  blob.insert(blob.end(), t.mean_gx().begin(), t.mean_gx().end());
  blob.insert(blob.end(), t.mean_gy().begin(), t.mean_gy().end());
  for (std::uint32_t c : t.counts()) {
    if (c > (1u << 24)) throw FormatError("lookup table count too large for a float32 blob");
    blob.push_back(static_cast<float>(c));
  }
  const nlohmann::json header = {{"format", "TCM1"},
                                 {"kind", "lut"},
                                 {"bins", t.bins()},
                                 {"lo", t.lo()},
                                 {"hi", t.hi()},
                                 {"input_mode", gelsim::to_string(t.mode())},
                                 {"blob_floats", blob.size()}};
  return detail::pack(header, blob);
}

inline Model decode_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || !std::equal(kModelMagic, kModelMagic + 4, bytes.begin()))
    throw FormatError("not a TCM1 model (bad magic)");
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<std::uint32_t>(bytes[4 + static_cast<std::size_t>(i)]) << (8 * i);
  if (bytes.size() - 8 < len) throw FormatError("TCM1 header runs past the end of the file");
  const auto header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + len, nullptr, false);
  if (header.is_discarded() || !header.is_object()) throw FormatError("TCM1 header is not a JSON object");
  const std::size_t blob_bytes = bytes.size() - 8 - len;
  const auto n = detail::field<std::size_t>(header, "blob_floats");
  if (blob_bytes != 4 * n) throw FormatError("TCM1 blob size disagrees with the header");
  const std::uint8_t* p = bytes.data() + 8 + len;
  std::vector<float> blob(n);
  for (std::size_t i = 0; i < n; ++i) blob[i] = get_f32_le(p + 4 * i);

  const auto kind = detail::field<std::string>(header, "kind");
  gelsim::InputMode mode;
  try {
    mode = gelsim::mode_from_string(detail::field<std::string>(header, "input_mode"));
  } catch (const InvalidArgument& e) {
    throw FormatError(e.what());
  }

  if (kind == "lut") {
    const int bins = detail::field<int>(header, "bins");
    if (bins < 1 || bins > 256) throw FormatError("TCM1 lut bins out of range");
    const auto cells = static_cast<std::size_t>(bins) * bins * bins;
    if (n != 3 * cells) throw FormatError("TCM1 lut blob does not hold 3 * bins^3 floats");
    std::vector<float> gx(blob.begin(), blob.begin() + static_cast<long>(cells));
    std::vector<float> gy(blob.begin() + static_cast<long>(cells), blob.begin() + static_cast<long>(2 * cells));
    std::vector<std::uint32_t> counts(cells);
    for (std::size_t i = 0; i < cells; ++i) {
      const float c = blob[2 * cells + i];
      if (!(c >= 0.0f) || c != std::floor(c)) throw FormatError("TCM1 lut count is not a non-negative integer");
      counts[i] = static_cast<std::uint32_t>(c);
    }
    try {
      return calib::LookupTable(bins, detail::field<Vec3>(header, "lo"), detail::field<Vec3>(header, "hi"),
                                std::move(gx), std::move(gy), std::move(counts), mode);
    } catch (const InvalidArgument& e) {
      throw FormatError(e.what());
    }
  }
  if (kind != "mlp") throw FormatError("unknown TCM1 model kind '" + kind + "'");

  calib::MlpModel m;
  const auto sizes = detail::field<std::vector<int>>(header, "layer_sizes");
  if (sizes.size() != 5) throw FormatError("TCM1 mlp needs 5 layer sizes");
  for (int s : sizes)
    if (s < 1) throw FormatError("TCM1 mlp layer sizes must be positive");
  std::size_t need = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
    need += static_cast<std::size_t>(sizes[l + 1]) * (static_cast<std::size_t>(sizes[l]) + 1);
  if (need != n) throw FormatError("TCM1 mlp blob does not match the layer sizes");
  std::size_t at = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    Eigen::MatrixXf w(sizes[l + 1], sizes[l]);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = blob[at++];
    Eigen::VectorXf b(sizes[l + 1]);
    for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = blob[at++];
    m.weights.push_back(std::move(w));
    m.biases.push_back(std::move(b));
  }
  if (detail::field<std::string>(header, "activation") != "tanh") throw FormatError("TCM1 mlp activation must be tanh");
  m.feature_mean = detail::field<std::array<double, calib::kMlpInputs>>(header, "feature_mean");
  m.feature_std = detail::field<std::array<double, calib::kMlpInputs>>(header, "feature_std");
  m.target_scale = detail::field<std::array<double, calib::kMlpOutputs>>(header, "target_scale");
  m.offsets = config::offsets_from_json(detail::field<nlohmann::json>(header, "offsets"));
  m.hyper = config::hyper_from_json(detail::field<nlohmann::json>(header, "hyperparameters"));
  m.seed = detail::field<std::uint64_t>(header, "seed");
  m.final_train_loss = detail::field<double>(header, "final_train_loss");
  m.mode = mode;
  m.train_height = detail::field<std::size_t>(header, "train_height");
  m.train_width = detail::field<std::size_t>(header, "train_width");
  for (const auto& w : m.weights)
    if (!w.allFinite()) throw FormatError("TCM1 mlp weights are not finite");
  try {
    m.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(e.what());
  }
  return m;
}

template <typename M>
void save_model(const std::filesystem::path& path, const M& model) {
  const auto bytes = encode_model(model);
  write_file_atomic(path, bytes);
}

inline Model load_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }

}  // namespace tacsync::io
