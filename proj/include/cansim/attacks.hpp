#pragma once

// Frame generators for legitimate periodic traffic and for the three attack
// behaviors (spoof, fuzz, replay). All of them are deterministic functions of
// their parameters; attackers rely on the controller's normal retransmission
// and fault confinement, so a killed frame is retried until bus-off.

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "cansim/bus.hpp"
#include "cansim/codec.hpp"
#include "cansim/trace.hpp"

namespace cansim {

/// 64-bit LCG with Knuth's MMIX constants; outputs are the high 32 bits.
class FuzzRng {
 public:
  explicit FuzzRng(std::uint64_t seed) : engine_(seed) {}
  std::uint32_t next_u32() { return static_cast<std::uint32_t>(engine_() >> 32); }
  /// Uniform in [0, bound) by multiply-shift; bound > 0.
  std::uint32_t below(std::uint32_t bound) {
    return static_cast<std::uint32_t>((static_cast<std::uint64_t>(next_u32()) * bound) >> 32);
  }

 private:
  std::linear_congruential_engine<std::uint64_t, 6364136223846793005ULL, 1442695040888963407ULL, 0>
      engine_;
};

/// Emits the same frame at start, start + period, ... When pulled late the
/// missed slots are dropped rather than sent back to back. Period 0 means
/// the next frame is due as soon as the previous one is done.
class PeriodicSource final : public FrameSource {
 public:
  PeriodicSource(ScheduledFrame first, std::int64_t period_us, std::optional<std::uint64_t> count);
  std::optional<ScheduledFrame> next(std::int64_t now_us) override;

 private:
  ScheduledFrame frame_;
  std::int64_t period_us_;
  std::optional<std::uint64_t> count_;
  std::uint64_t k_ = 0;
};

/// Takes frames from several sources in time order.
class MergedSource final : public FrameSource {
 public:
  explicit MergedSource(std::vector<std::unique_ptr<FrameSource>> sources);
  std::optional<ScheduledFrame> next(std::int64_t now_us) override;

 private:
  std::vector<std::unique_ptr<FrameSource>> sources_;
  std::vector<std::optional<ScheduledFrame>> heads_;
  std::vector<bool> primed_;
};

FrameSourceFactory merge_sources(std::vector<FrameSourceFactory> factories);

struct SpoofAttack {
  Frame frame;
  std::int64_t period_us = 0;
  std::optional<std::uint64_t> count;  // unbounded when empty
};

struct IdRange {
  std::uint32_t min = 0;
  std::uint32_t max = kMaxStandardId;
  IdKind kind = IdKind::standard;
};

struct FuzzAttack {
  std::uint64_t seed = 0;
  std::uint32_t frames_per_second = 10;
  IdRange id_range;
  std::vector<FrameId> id_set;  // when non-empty, ids are drawn from this set instead
  std::optional<std::uint64_t> count;
};

struct ReplayAttack {
  Trace slice;
};

using AttackSpec = std::variant<SpoofAttack, FuzzAttack, ReplayAttack>;

class EmptySlice : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

FrameSourceFactory spoof_attacker(const SpoofAttack& spec, std::int64_t start_time_us,
                                  std::string name = {});

/// Throws std::invalid_argument if the id range is out of bounds or the rate is zero.
FrameSourceFactory fuzz_attacker(const FuzzAttack& spec, std::int64_t start_time_us,
                                 std::string name = {});

/// Re-sends the frame_tx_start frames of `spec.slice` keeping their original
/// spacing, the first one at start_time_us. Throws EmptySlice.
FrameSourceFactory replay_attacker(const ReplayAttack& spec, std::int64_t start_time_us);

FrameSourceFactory attack_source(const AttackSpec& spec, std::int64_t start_time_us);

/// The fuzz sequence itself, for inspection and tests.
std::vector<Frame> fuzz_frames(const FuzzAttack& spec, std::size_t n);

}  // namespace cansim
