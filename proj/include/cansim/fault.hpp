#pragma once

#include <cstdint>
#include <string_view>

namespace cansim {

enum class ErrorMode : std::uint8_t { error_active, error_passive, bus_off };

std::string_view to_string(ErrorMode m);

/// Fault-confinement counters of one controller.
struct NodeState {
  std::uint32_t tec = 0;
  std::uint32_t rec = 0;
  ErrorMode mode = ErrorMode::error_active;

  friend bool operator==(const NodeState&, const NodeState&) = default;
};

enum class FaultEvent : std::uint8_t { tx_error, rx_error, tx_success, rx_success };

constexpr std::uint32_t kErrorPassiveThreshold = 128;
constexpr std::uint32_t kBusOffThreshold = 255;  // bus-off once tec exceeds this
constexpr std::uint32_t kTxErrorIncrement = 8;

/// Applies one counter event. Bus-off is sticky: only a reset leaves it.
NodeState fault_confinement_update(NodeState state, FaultEvent event);

}  // namespace cansim
