#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>

#include "fedbench/core/error.hpp"
#include "fedbench/protocol/wire.hpp"

namespace fedbench {

// Simulated clock unit. Durations are integer nanoseconds so sums are exact.
using Nanos = std::int64_t;

inline Nanos to_nanos(double seconds) { return static_cast<Nanos>(std::llround(seconds * 1e9)); }
inline double to_seconds(Nanos ns) { return static_cast<double>(ns) * 1e-9; }

struct NetworkModel {
  double client_bandwidth_bps = 100e6;
  std::optional<double> server_bandwidth_bps;  // nullopt = unlimited
  double latency_s = 0.005;
  WirePrecision precision = WirePrecision::f32;

  void validate() const {
    if (!(client_bandwidth_bps > 0.0)) throw ConfigError("network.client_bandwidth_bps must be positive");
    if (server_bandwidth_bps && !(*server_bandwidth_bps > 0.0))
      throw ConfigError("network.server_bandwidth_bps must be positive");
    if (!(latency_s >= 0.0)) throw ConfigError("network.latency_s must be >= 0");
  }
};

// latency + bytes * 8 / bandwidth; no bandwidth means latency only.
inline double transfer_time(std::size_t bytes, std::optional<double> bandwidth_bps, double latency_s) {
  if (!bandwidth_bps) return latency_s;
  return latency_s + static_cast<double>(bytes) * 8.0 / *bandwidth_bps;
}

// One client <-> server hop: limited by the slower end.
inline double link_time(const NetworkModel& net, std::size_t bytes) {
  double bw = net.client_bandwidth_bps;
  if (net.server_bandwidth_bps) bw = std::min(bw, *net.server_bandwidth_bps);
  return transfer_time(bytes, bw, net.latency_s);
}

// Server -> many clients. Clients receive concurrently; a finite server
// uplink additionally serializes the total volume.
inline Nanos fan_out_time(const NetworkModel& net, std::span<const std::size_t> bytes) {
  if (bytes.empty()) return 0;
  double slowest = 0.0;
  std::size_t total = 0;
  for (std::size_t b : bytes) {
    slowest = std::max(slowest, transfer_time(b, net.client_bandwidth_bps, net.latency_s));
    total += b;
  }
  if (net.server_bandwidth_bps)
    slowest = std::max(slowest, transfer_time(total, net.server_bandwidth_bps, net.latency_s));
  return to_nanos(slowest);
}

// Many clients -> server. The server ingests uploads one after another, each
// at the client's link speed.
inline Nanos fan_in_time(const NetworkModel& net, std::span<const std::size_t> bytes) {
  Nanos total = 0;
  for (std::size_t b : bytes) total += to_nanos(link_time(net, b));
  return total;
}

}  // namespace fedbench
