#include "cansim/fault.hpp"

namespace cansim {

std::string_view to_string(ErrorMode m) {
  switch (m) {
    case ErrorMode::error_active: return "error_active";
    case ErrorMode::error_passive: return "error_passive";
    case ErrorMode::bus_off: return "bus_off";
  }
  return "?";
}

NodeState fault_confinement_update(NodeState s, FaultEvent event) {
  switch (event) {
    case FaultEvent::tx_error: s.tec += kTxErrorIncrement; break;
    case FaultEvent::rx_error: s.rec += 1; break;
    case FaultEvent::tx_success: s.tec = s.tec > 0 ? s.tec - 1 : 0; break;
    case FaultEvent::rx_success: s.rec = s.rec > 0 ? s.rec - 1 : 0; break;
  }
  if (s.mode == ErrorMode::bus_off || s.tec > kBusOffThreshold) {
    s.mode = ErrorMode::bus_off;
  } else if (s.tec >= kErrorPassiveThreshold || s.rec >= kErrorPassiveThreshold) {
    s.mode = ErrorMode::error_passive;
  } else {
    s.mode = ErrorMode::error_active;
  }
  return s;
}

}  // namespace cansim
