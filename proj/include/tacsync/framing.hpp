#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tacsync/error.hpp"

namespace tacsync::framing {

using Bytes = std::vector<std::uint8_t>;
using ByteSpan = std::span<const std::uint8_t>;

inline constexpr std::size_t kMaxCobsInput = std::size_t{1} << 24;

namespace detail {

constexpr std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> t{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1u) ? (0xEDB88320u ^ (c >> 1)) : (c >> 1);
    t[i] = c;
  }
  return t;
}

inline constexpr auto kCrcTable = make_crc_table();

}  // namespace detail

// CRC-32/IEEE: polynomial 0x04C11DB7 (reflected 0xEDB88320), init and final
// xor 0xFFFFFFFF.
inline std::uint32_t crc32(ByteSpan data) {
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::uint8_t b : data) c = detail::kCrcTable[(c ^ b) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

/// Consistent Overhead Byte Stuffing. The result holds no zero byte except
/// the single trailing 0x00 delimiter.
inline Bytes cobs_encode(ByteSpan data) {
  if (data.size() > kMaxCobsInput)
    throw LengthError("cobs_encode input of " + std::to_string(data.size()) + " bytes exceeds the 2^24 cap");
  Bytes out;
  out.reserve(data.size() + data.size() / 254 + 2);
  std::size_t code_pos = 0;
  out.push_back(0);
  std::uint8_t code = 1;
  auto close_group = [&] {
    out[code_pos] = code;
    code_pos = out.size();
    out.push_back(0);
    code = 1;
  };
  for (std::uint8_t b : data) {
    // A full group is closed only when more input follows it.
    if (code == 0xFF) close_group();
    if (b == 0) {
      close_group();
      continue;
    }
    out.push_back(b);
    ++code;
  }
  out[code_pos] = code;
  out.push_back(0);
  return out;
}

/// Inverse of cobs_encode. Expects exactly one frame: a trailing 0x00 and no
/// interior zero. Errors carry the offending byte offset.
inline Bytes cobs_decode(ByteSpan framed) {
  if (framed.empty() || framed.back() != 0) throw FramingError("missing 0x00 frame delimiter", framed.size());
  const std::size_t end = framed.size() - 1;
  if (end == 0) throw FramingError("empty frame", 0);
  Bytes out;
  out.reserve(end);
  std::size_t i = 0;
  while (i < end) {
    const std::uint8_t code = framed[i];
    if (code == 0) throw FramingError("interior zero byte", i);
    const std::size_t group_end = i + code;
    if (group_end > end) throw FramingError("truncated group", i);
    for (std::size_t k = i + 1; k < group_end; ++k) {
      if (framed[k] == 0) throw FramingError("interior zero byte", k);
      out.push_back(framed[k]);
    }
    i = group_end;
    if (code != 0xFF && i < end) out.push_back(0);
  }
  return out;
}

inline constexpr std::uint8_t kPacketVersion = 1;
inline constexpr std::size_t kHeaderSize = 1 + 1 + 4 + 8 + 4;
inline constexpr std::size_t kCrcSize = 4;

/// Wire message. Layout (little-endian):
///   version u8 | sensor_id u8 | round_id u32 | capture_time_us u64 |
///   payload_len u32 | payload | crc32(header + payload) u32
/// and the whole record is COBS-framed.
struct Packet {
  std::uint8_t version = kPacketVersion;
  std::uint8_t sensor_id = 0;
  std::uint32_t round_id = 0;
  std::uint64_t capture_time_us = 0;
  Bytes payload;

  friend bool operator==(const Packet&, const Packet&) = default;
};

namespace detail {

template <typename T>
void put_le(Bytes& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
T get_le(ByteSpan in, std::size_t at) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(in[at + i]) << (8 * i));
  return v;
}

}  // namespace detail

// Header + payload + CRC, before COBS framing.
inline Bytes packet_record(const Packet& p) {
  if (p.payload.size() > 0xFFFFFFFFu) throw LengthError("payload does not fit a u32 length");
  Bytes rec;
  rec.reserve(kHeaderSize + p.payload.size() + kCrcSize);
  rec.push_back(p.version);
  rec.push_back(p.sensor_id);
  detail::put_le(rec, p.round_id);
  detail::put_le(rec, p.capture_time_us);
  detail::put_le(rec, static_cast<std::uint32_t>(p.payload.size()));
  rec.insert(rec.end(), p.payload.begin(), p.payload.end());
  detail::put_le(rec, crc32(rec));
  return rec;
}

inline Bytes packet_serialize(const Packet& p) {
  if (p.version != kPacketVersion) throw UnsupportedVersion(p.version);
  return cobs_encode(packet_record(p));
}

/// Parses an unframed record. Checks run in order: size (framing), CRC,
/// version, declared length (framing).
inline Packet packet_from_record(ByteSpan rec) {
  if (rec.size() < kHeaderSize + kCrcSize) throw FramingError("record shorter than header and CRC", rec.size());
  const std::size_t body = rec.size() - kCrcSize;
  const auto stored = detail::get_le<std::uint32_t>(rec, body);
  const auto computed = crc32(rec.first(body));
  if (stored != computed) throw CrcMismatch("packet CRC mismatch");
  if (rec[0] != kPacketVersion) throw UnsupportedVersion(rec[0]);
  Packet p;
  p.version = rec[0];
  p.sensor_id = rec[1];
  p.round_id = detail::get_le<std::uint32_t>(rec, 2);
  p.capture_time_us = detail::get_le<std::uint64_t>(rec, 6);
  const auto len = detail::get_le<std::uint32_t>(rec, 14);
  if (len != body - kHeaderSize) throw FramingError("payload_len disagrees with record size", 14);
  p.payload.assign(rec.begin() + kHeaderSize, rec.begin() + static_cast<std::ptrdiff_t>(body));
  return p;
}

inline Packet packet_parse(ByteSpan framed) { return packet_from_record(cobs_decode(framed)); }

}  // namespace tacsync::framing
