#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cansim/codec.hpp"
#include "cansim/fault.hpp"

namespace cansim {

enum class TraceKind : std::uint8_t {
  frame_tx_start,
  frame_delivered,
  frame_killed,
  error_flag,
  arbitration_loss,
  state_change,
  bit_sample,
};

std::string_view to_string(TraceKind k);

/// Annotation attached to bit samples. The simulator itself is purely logical.
std::string_view voltage_label(Level level);

struct TraceRecord {
  std::int64_t time_us = 0;
  TraceKind kind = TraceKind::bit_sample;
  std::string node;  // reporting node

  // Frame events.
  std::optional<Frame> frame;
  std::string frame_name;
  std::string source;  // transmitting node
  std::string channel;

  // error_flag: cause and flag type; frame_killed: cause; state_change: reason.
  std::string detail;
  std::optional<NodeState> state;

  // bit_sample: resolved level, per-participant outputs in bus order, and
  // whether the bus was inside a frame, error frame or intermission.
  std::optional<Level> level;
  std::vector<Level> drivers;
  bool busy = false;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

using Trace = std::vector<TraceRecord>;

inline bool is_frame_event(const TraceRecord& r) {
  return r.kind == TraceKind::frame_tx_start || r.kind == TraceKind::frame_delivered ||
         r.kind == TraceKind::frame_killed;
}

/// The trace without bit_sample records.
Trace without_bit_samples(const Trace& trace);

/// Only frame_tx_start, frame_delivered and frame_killed records.
Trace frame_events(const Trace& trace);

}  // namespace cansim
