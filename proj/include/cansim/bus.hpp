#pragma once

// Bit-time simulation of a CAN bus. Every participant drives a level each bit,
// the bus resolves them wired-AND (dominant wins), and every participant then
// samples the resolved level. Controllers implement framing, arbitration,
// acknowledgment, error signaling, retransmission and fault confinement.

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cansim/codec.hpp"
#include "cansim/fault.hpp"
#include "cansim/trace.hpp"

namespace cansim {

enum class NodeRole : std::uint8_t { sender, receiver, attacker, rbt };

std::string_view to_string(NodeRole r);
std::optional<NodeRole> parse_role(std::string_view s);

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class UnknownNode : public std::out_of_range {
 public:
  explicit UnknownNode(const std::string& name) : std::out_of_range("unknown node '" + name + "'") {}
};

struct ScheduledFrame {
  std::int64_t time_us = 0;
  Frame frame;
  std::string name;  // label shown in exports; defaults to the node name

  friend bool operator==(const ScheduledFrame&, const ScheduledFrame&) = default;
};

/// Supplies a node's frames in time order. `next` is called whenever the
/// controller has nothing pending; `now_us` is the simulation time of the call.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual std::optional<ScheduledFrame> next(std::int64_t now_us) = 0;
};

using FrameSourceFactory = std::function<std::unique_ptr<FrameSource>()>;

struct NodeSpec {
  std::string name;
  NodeRole role = NodeRole::receiver;
  std::vector<ScheduledFrame> tx_queue;
  std::vector<FrameId> registered_ids;
  FrameSourceFactory behavior;  // optional generator, merged with tx_queue by time
};

struct BusConfig {
  std::uint32_t bitrate = 10000;
  std::vector<NodeSpec> nodes;
  std::uint64_t seed = 0;
  std::int64_t max_time_us = 0;  // 0: unbounded
  std::string channel = "CAN1";
  bool record_bit_samples = true;
};

struct BitContext {
  std::uint64_t bit_index = 0;
  std::int64_t time_us = 0;
  std::int64_t bit_time_us = 0;
  std::string_view channel;
};

/// Anything attached to the bus.
class Participant {
 public:
  virtual ~Participant() = default;
  virtual const std::string& name() const = 0;
  virtual NodeRole role() const = 0;
  virtual Level drive(const BitContext& ctx) = 0;
  virtual void sample(Level bus, const BitContext& ctx, Trace& out) = 0;
  virtual NodeState state() const { return {}; }
  /// Hardware reset. Appends a state_change record.
  virtual void reset(const BitContext& ctx, Trace& out) = 0;
  /// True while this participant considers the bus occupied.
  virtual bool busy() const { return false; }
};

/// A CAN controller with a transmit queue.
class Controller final : public Participant {
 public:
  enum class Phase : std::uint8_t {
    integrating,  // after reset: waiting for 11 recessive bits
    idle,
    in_frame,
    error_flag,
    error_delimiter,
    intermission,
    bus_off,
  };

  explicit Controller(NodeSpec spec);

  const std::string& name() const override { return spec_.name; }
  NodeRole role() const override { return spec_.role; }
  const NodeSpec& spec() const { return spec_; }
  Level drive(const BitContext& ctx) override;
  void sample(Level bus, const BitContext& ctx, Trace& out) override;
  NodeState state() const override { return state_; }
  void reset(const BitContext& ctx, Trace& out) override;
  bool busy() const override;

  Phase phase() const { return phase_; }
  void enqueue(ScheduledFrame f);
  /// The frame on the wire while this node is still transmitting it.
  const ScheduledFrame* transmission() const;
  std::size_t queued() const { return queue_.size() + (current_ ? 1 : 0); }

 private:
  void pull_next(std::int64_t now_us);
  void frame_bit(Level bus, const BitContext& ctx, Trace& out);
  void signal_error(std::string_view cause, bool as_transmitter, const BitContext& ctx, Trace& out);
  void apply(FaultEvent event, const BitContext& ctx, Trace& out);
  TraceRecord frame_record(TraceKind kind, const BitContext& ctx) const;

  NodeSpec spec_;
  NodeState state_;
  Phase phase_ = Phase::idle;
  int counter_ = 0;

  std::deque<ScheduledFrame> queue_;
  std::unique_ptr<FrameSource> source_;
  std::optional<ScheduledFrame> source_peek_;
  std::optional<ScheduledFrame> current_;  // retransmitted until it succeeds

  EncodedFrame enc_;
  std::vector<Field> enc_fields_;  // field per stuffed bit
  bool transmitting_ = false;
  bool started_now_ = false;
  std::size_t tx_pos_ = 0;

  FrameDecoder dec_;
  bool crc_error_pending_ = false;
  ErrorFlagMode flag_mode_ = ErrorFlagMode::active;
};

std::string_view to_string(Controller::Phase p);

struct StopCondition {
  std::optional<std::int64_t> until_us;  // stop once time reaches this
  std::function<bool(const TraceRecord&)> predicate;  // stop after the bit that emitted a match
};

class Bus {
 public:
  /// Throws ConfigError on duplicate names, zero bitrate, a bitrate whose
  /// bit time is not a whole number of microseconds, or rbt-role nodes
  /// (those are attached with rbt_attach).
  explicit Bus(const BusConfig& config);

  Bus(Bus&&) noexcept = default;
  Bus& operator=(Bus&&) noexcept = default;

  std::uint32_t bitrate() const { return bitrate_; }
  std::int64_t bit_time_us() const { return bit_time_us_; }
  std::int64_t now_us() const { return static_cast<std::int64_t>(bit_index_) * bit_time_us_; }
  std::uint64_t bit_index() const { return bit_index_; }
  const std::string& channel() const { return channel_; }
  std::int64_t max_time_us() const { return max_time_us_; }
  bool finished() const { return max_time_us_ > 0 && now_us() >= max_time_us_; }

  /// Advances one bit time and returns the records it produced.
  Trace step_bit();
  Trace run_until(const StopCondition& stop);

  /// Resets a node's controller; the state_change record is also returned
  /// from the next step_bit.
  TraceRecord reset_node(const std::string& name);

  void attach(std::unique_ptr<Participant> p);
  Participant* find(std::string_view name);
  const Participant* find(std::string_view name) const;
  Controller& controller(std::string_view name);
  NodeState node_state(std::string_view name) const;

  std::vector<const Participant*> participants() const;
  std::vector<std::string> participant_names() const;

 private:
  std::uint32_t bitrate_ = 0;
  std::int64_t bit_time_us_ = 0;
  std::int64_t max_time_us_ = 0;
  std::string channel_;
  bool record_bits_ = true;
  std::uint64_t bit_index_ = 0;
  std::vector<std::unique_ptr<Participant>> parts_;
  Trace pending_;
};

Bus build_bus(const BusConfig& config);

/// Free-function form of Bus::step_bit / Bus::run_until.
Trace step_bit(Bus& bus);
Trace run_until(Bus& bus, const StopCondition& stop);

}  // namespace cansim
