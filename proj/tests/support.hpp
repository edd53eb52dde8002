#pragma once

// Shared test helpers and the independent oracles the suites check against.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cansim/bus.hpp"
#include "cansim/codec.hpp"
#include "cansim/fault.hpp"

namespace testing {

using namespace cansim;

// CRC-15 by polynomial long division: append 15 zero bits, then XOR the
// 16-bit generator in wherever the leading bit is 1.
inline std::uint16_t crc15_long_division(const BitSeq& bits) {
  std::vector<int> r;
  for (auto b : bits) r.push_back(b == Level::recessive ? 1 : 0);
  r.insert(r.end(), 15, 0);
  const int gen[16] = {1, 1, 0, 0, 0, 1, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1};  // x^15 + 0x4599
  for (std::size_t i = 0; i + 15 < r.size(); ++i) {
    if (!r[i]) continue;
    for (int k = 0; k < 16; ++k) r[i + k] ^= gen[k];
  }
  std::uint16_t out = 0;
  for (std::size_t i = r.size() - 15; i < r.size(); ++i) out = static_cast<std::uint16_t>((out << 1) | r[i]);
  return out;
}

// CRC-15 with the 15-stage shift register from the CAN bit-serial description.
inline std::uint16_t crc15_shift_register(const BitSeq& bits) {
  int reg[15] = {};
  for (auto b : bits) {
    const int next = (b == Level::recessive ? 1 : 0) ^ reg[14];
    for (int k = 14; k > 0; --k) reg[k] = reg[k - 1];
    reg[0] = 0;
    if (next) {
      for (int k = 0; k < 15; ++k) reg[k] ^= (0x4599 >> k) & 1;
    }
  }
  std::uint16_t out = 0;
  for (int k = 14; k >= 0; --k) out = static_cast<std::uint16_t>((out << 1) | reg[k]);
  return out;
}

// Fault confinement written out directly from the counter rules. The counters
// keep their arithmetic in every mode; only bus-off itself is sticky.
struct CounterOracle {
  long tec = 0;
  long rec = 0;
  bool off = false;

  void apply(FaultEvent e) {
    switch (e) {
      case FaultEvent::tx_error: tec += 8; break;
      case FaultEvent::rx_error: rec += 1; break;
      case FaultEvent::tx_success: if (tec > 0) tec -= 1; break;
      case FaultEvent::rx_success: if (rec > 0) rec -= 1; break;
    }
    if (tec > 255) off = true;
  }
  ErrorMode mode() const {
    if (off) return ErrorMode::bus_off;
    if (tec >= 128 || rec >= 128) return ErrorMode::error_passive;
    return ErrorMode::error_active;
  }
};

inline BitSeq random_bits(std::mt19937_64& rng, std::size_t n) {
  BitSeq out(n);
  for (auto& b : out) b = (rng() & 1) ? Level::recessive : Level::dominant;
  return out;
}

inline Frame random_frame(std::mt19937_64& rng, bool allow_extended = true, bool allow_remote = true) {
  const bool ext = allow_extended && (rng() % 4 == 0);
  const FrameId id = ext ? FrameId::extended(static_cast<std::uint32_t>(rng() % (kMaxExtendedId + 1)))
                         : FrameId::standard(static_cast<std::uint32_t>(rng() % (kMaxStandardId + 1)));
  const auto dlc = static_cast<std::uint8_t>(rng() % 9);
  if (allow_remote && rng() % 8 == 0) return Frame::remote_frame(id, dlc);
  std::vector<std::uint8_t> data(dlc);
  // skew toward 0x00/0xFF so long runs (and stuff bits) are common
  for (auto& b : data) {
    const auto r = rng() % 4;
    b = r == 0 ? 0x00 : r == 1 ? 0xFF : static_cast<std::uint8_t>(rng());
  }
  return Frame::data_frame(id, std::move(data));
}

inline NodeSpec node(std::string name, NodeRole role = NodeRole::receiver) {
  NodeSpec n;
  n.name = std::move(name);
  n.role = role;
  return n;
}

inline NodeSpec sender(std::string name, std::vector<ScheduledFrame> frames) {
  NodeSpec n = node(std::move(name), NodeRole::sender);
  for (const auto& f : frames) n.registered_ids.push_back(f.frame.id);
  n.tx_queue = std::move(frames);
  return n;
}

inline Frame data(std::uint32_t id, std::vector<std::uint8_t> bytes) {
  return Frame::data_frame(FrameId::standard(id), std::move(bytes));
}

inline std::vector<const TraceRecord*> of_kind(const Trace& t, TraceKind k) {
  std::vector<const TraceRecord*> out;
  for (const auto& r : t) {
    if (r.kind == k) out.push_back(&r);
  }
  return out;
}

}  // namespace testing
