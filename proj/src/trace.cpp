#include "cansim/trace.hpp"

#include <algorithm>

namespace cansim {

std::string_view to_string(TraceKind k) {
  switch (k) {
    case TraceKind::frame_tx_start: return "frame_tx_start";
    case TraceKind::frame_delivered: return "frame_delivered";
    case TraceKind::frame_killed: return "frame_killed";
    case TraceKind::error_flag: return "error_flag";
    case TraceKind::arbitration_loss: return "arbitration_loss";
    case TraceKind::state_change: return "state_change";
    case TraceKind::bit_sample: return "bit_sample";
  }
  return "?";
}

std::string_view voltage_label(Level level) {
  return level == Level::dominant ? "CANH 3.5V / CANL 1.5V" : "both 2.5V";
}

Trace without_bit_samples(const Trace& trace) {
  Trace out;
  std::copy_if(trace.begin(), trace.end(), std::back_inserter(out),
               [](const TraceRecord& r) { return r.kind != TraceKind::bit_sample; });
  return out;
}

Trace frame_events(const Trace& trace) {
  Trace out;
  std::copy_if(trace.begin(), trace.end(), std::back_inserter(out), is_frame_event);
  return out;
}

}  // namespace cansim
