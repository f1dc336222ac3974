#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedbench/core/error.hpp"
#include "fedbench/core/model.hpp"

namespace fedbench {

enum class MessageKind : std::uint16_t {
  init = 1,
  train_request = 2,
  weight_upload = 3,
  weight_broadcast = 4,
  val_request = 5,
  val_result = 6,
};

inline std::string_view to_string(MessageKind k) {
  switch (k) {
    case MessageKind::init: return "init";
    case MessageKind::train_request: return "train_request";
    case MessageKind::weight_upload: return "weight_upload";
    case MessageKind::weight_broadcast: return "weight_broadcast";
    case MessageKind::val_request: return "val_request";
    case MessageKind::val_result: return "val_result";
  }
  return "?";
}

// Bytes per value on the wire. f32 is the default; f64 exists for lossless
// equivalence experiments.
enum class WirePrecision : std::uint16_t { f32 = 4, f64 = 8 };

inline constexpr std::uint32_t kWireMagic = 0x3146424eu;  // "NBF1" little-endian
inline constexpr std::uint32_t kServerId = 0xffffffffu;
inline constexpr std::size_t kHeaderBytes = 24;

// Header layout (little-endian):
//   u32 magic | u16 kind | u16 bytes-per-value | u32 round | u32 sender |
//   u32 receiver | u32 value count
struct Message {
  MessageKind kind = MessageKind::init;
  std::uint32_t round = 0;
  std::uint32_t sender = 0;
  std::uint32_t receiver = 0;
  std::vector<double> values;
};

inline std::size_t wire_size(std::size_t n_values, WirePrecision p = WirePrecision::f32) {
  return kHeaderBytes + n_values * static_cast<std::size_t>(p);
}

namespace detail {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
  std::uint8_t b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.insert(out.end(), b, b + sizeof(T));
}

template <typename T>
T get_le(std::span<const std::uint8_t> in, std::size_t off) {
  std::uint8_t b[sizeof(T)];
  std::memcpy(b, in.data() + off, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode(const Message& m, WirePrecision p = WirePrecision::f32) {
  std::vector<std::uint8_t> out;
  out.reserve(wire_size(m.values.size(), p));
  detail::put_le<std::uint32_t>(out, kWireMagic);
  detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(m.kind));
  detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(p));
  detail::put_le<std::uint32_t>(out, m.round);
  detail::put_le<std::uint32_t>(out, m.sender);
  detail::put_le<std::uint32_t>(out, m.receiver);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.values.size()));
  if (p == WirePrecision::f32) {
    for (double v : m.values) detail::put_le<float>(out, static_cast<float>(v));
  } else {
    for (double v : m.values) detail::put_le<double>(out, v);
  }
  return out;
}

inline Message decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) throw ProtocolError("message shorter than header");
  if (detail::get_le<std::uint32_t>(bytes, 0) != kWireMagic) throw ProtocolError("bad message magic");
  Message m;
  const auto kind = detail::get_le<std::uint16_t>(bytes, 4);
  if (kind < 1 || kind > 6) throw ProtocolError("unknown message kind " + std::to_string(kind));
  m.kind = static_cast<MessageKind>(kind);
  const auto width = detail::get_le<std::uint16_t>(bytes, 6);
  if (width != 4 && width != 8) throw ProtocolError("bad value width " + std::to_string(width));
  m.round = detail::get_le<std::uint32_t>(bytes, 8);
  m.sender = detail::get_le<std::uint32_t>(bytes, 12);
  m.receiver = detail::get_le<std::uint32_t>(bytes, 16);
  const std::size_t n = detail::get_le<std::uint32_t>(bytes, 20);
  if (bytes.size() != kHeaderBytes + n * width)
    throw ProtocolError("message length " + std::to_string(bytes.size()) + " does not match header (" +
                        std::to_string(n) + " values)");
  m.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = kHeaderBytes + i * width;
    m.values[i] = width == 4 ? static_cast<double>(detail::get_le<float>(bytes, off)) : detail::get_le<double>(bytes, off);
  }
  return m;
}

// ParamVector <-> weight payload.
inline std::vector<std::uint8_t> serialize_params(const ParamVector& params, MessageKind kind = MessageKind::weight_upload,
                                                  std::uint32_t round = 0, std::uint32_t sender = 0,
                                                  std::uint32_t receiver = kServerId,
                                                  WirePrecision p = WirePrecision::f32) {
  return encode(Message{kind, round, sender, receiver, params.raw()}, p);
}

inline ParamVector deserialize_params(std::span<const std::uint8_t> bytes,
                                      const std::shared_ptr<const ParamLayout>& layout) {
  Message m = decode(bytes);
  if (m.values.size() != layout->total())
    throw ProtocolError("payload carries " + std::to_string(m.values.size()) + " values, layout needs " +
                        std::to_string(layout->total()));
  return ParamVector(layout, std::move(m.values));
}

}  // namespace fedbench
