#pragma once

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cansim/rational.hpp"
#include "cansim/trace.hpp"

namespace cansim {

struct BusOffEvent {
  std::string node;
  std::int64_t time_us = 0;
  friend bool operator==(const BusOffEvent&, const BusOffEvent&) = default;
};

struct ScenarioSummary {
  std::uint64_t frames_offered = 0;    // transmission attempts
  std::uint64_t frames_delivered = 0;  // frames that completed EOF, once per frame
  std::uint64_t frames_killed = 0;     // aborted attempts
  std::vector<BusOffEvent> bus_off_events;
  Rational busload_pct{0};
  Rational rbt_added_busload_pct{0};

  friend bool operator==(const ScenarioSummary&, const ScenarioSummary&) = default;
};

class EmptyWindow : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Percentage of bit times in [start_us, start_us + length_us) during which
/// the bus was occupied (frame, error frame or intermission). Throws
/// EmptyWindow when the window holds no bit time, std::out_of_range when it
/// extends past the sampled part of the trace.
Rational busload(const Trace& trace, std::int64_t start_us, std::int64_t length_us,
                 std::int64_t bit_time_us);

/// Busload over every bit_sample in the trace; 0 for a trace without samples.
Rational busload(const Trace& trace);

enum class OverheadScheme : std::uint8_t { rbt, mac_in_payload, mac_separate_frame };

/// Share of the payload (or, for a separate MAC frame, extra frames per data
/// frame) a security scheme consumes, in percent. Throws std::invalid_argument
/// when mac_bytes exceeds the payload size.
Rational payload_overhead_comparison(OverheadScheme scheme, unsigned mac_bytes = 0,
                                     unsigned payload_bytes = 8);

/// Running totals for summarize, fed one record at a time. Records must
/// arrive in trace order.
class SummaryBuilder {
 public:
  void add(const TraceRecord& r);
  void add(const Trace& t) {
    for (const auto& r : t) add(r);
  }
  /// With `without_rbt`, the busload difference is filled in.
  ScenarioSummary result(const SummaryBuilder* without_rbt = nullptr) const;

 private:
  ScenarioSummary s_;
  std::int64_t delivered_time_ = -1;
  std::set<std::string> delivered_sources_;  // transmitters delivered at delivered_time_
  std::int64_t bits_ = 0;
  std::int64_t busy_bits_ = 0;
};

/// Summarizes a run. With `without_rbt`, rbt_added_busload_pct is the busload
/// difference between the two runs.
ScenarioSummary summarize(const Trace& trace, const Trace* without_rbt = nullptr);

// CSV export in the frame-table layout:
//   index,time,channel,id,name,direction,data
// Direction is TX for frame_tx_start, RX for frame_delivered (both seen from
// the reporting node) and KILLED for an aborted attempt.

struct CsvRow {
  std::uint64_t index = 0;
  std::int64_t time_us = 0;
  std::string channel;
  FrameId id;
  std::string name;
  std::string direction;
  bool rtr = false;
  std::uint8_t dlc = 0;
  std::vector<std::uint8_t> data;

  friend bool operator==(const CsvRow&, const CsvRow&) = default;
};

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kCsvHeader = "index,time,channel,id,name,direction,data";

/// The CSV projection of a trace's frame events. With a perspective, only
/// records reported by that node are kept.
std::vector<CsvRow> csv_rows(const Trace& trace, std::string_view perspective = {});
std::string export_csv(const Trace& trace, std::string_view perspective = {});
std::string export_csv(const std::vector<CsvRow>& rows);
/// Throws CsvError with the offending line number.
std::vector<CsvRow> parse_csv(std::string_view text);

/// One candump-style line per transmission, stamped at its start of frame:
///   (seconds.micros) channel id#data
/// Aborted attempts carry a trailing " KILLED". RX rows are logged only for
/// frames whose TX row is absent, once however many nodes received them.
std::string export_log(const Trace& trace);
std::string export_log(const std::vector<CsvRow>& rows);

// Formatting helpers shared with the gateway.
std::string format_seconds(std::int64_t time_us);  // 3..6 fraction digits
std::string format_hex_id(const FrameId& id);       // lowercase, 4 or 8 digits
std::string format_data(const std::vector<std::uint8_t>& data, std::string_view sep);
std::vector<std::uint8_t> parse_hex_data(std::string_view text);  // throws std::invalid_argument

}  // namespace cansim
