#pragma once

// Rule-based transceiver: a firewall node that watches the bus bit by bit,
// destuffs and parses each frame while it is still on the wire, and kills
// frames whose identifier is not registered by driving an active error flag
// before the ACK slot.

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "cansim/bus.hpp"
#include "cansim/codec.hpp"
#include "cansim/rational.hpp"

namespace cansim {

enum class DecisionPoint : std::uint8_t { after_id, after_data, after_crc };

std::string_view to_string(DecisionPoint p);
std::optional<DecisionPoint> parse_decision_point(std::string_view s);

struct RuleSet {
  std::set<FrameId> registered_ids;
  DecisionPoint decision_point = DecisionPoint::after_id;
  Rational processing_budget_us{0};

  bool is_registered(const FrameId& id) const { return registered_ids.count(id) != 0; }
};

/// A completed field, reported by observe_bit.
struct FieldEvent {
  Field field;
  std::uint32_t value = 0;  // ID, RTR, IDE, R0, DLC, CRC
  IdKind kind = IdKind::standard;  // ID events only
  std::vector<std::uint8_t> data;  // DATA events only

  friend bool operator==(const FieldEvent&, const FieldEvent&) = default;
};

struct ParserState {
  enum class Phase : std::uint8_t { idle, in_field, done, error };

  Phase phase = Phase::idle;
  Field field = Field::sof;
  std::size_t bits_consumed = 0;  // within `field`
  std::size_t field_length = 0;

  int run_length = 0;  // equal consecutive bits, for destuffing
  Level last = Level::recessive;
  bool stuff_expected = false;
  std::vector<FieldEvent> deferred;  // waiting for a trailing stuff bit

  BitSeq collected;  // destuffed bits of the current frame
  std::int64_t stuffed_index = -1;  // stuffed index (SOF = 0) of the last bit seen
  int recessive_run = 0;  // re-arms the parser after done/error

  // Fields seen so far.
  std::uint32_t accum = 0;
  std::uint32_t base_id = 0;
  bool ide_seen = false;
  bool extended = false;
  std::optional<FrameId> id;
  bool rtr = false;
  std::uint8_t dlc = 0;
  std::vector<std::uint8_t> data;
  std::uint16_t crc = 0;
};

/// Consumes one sampled bus bit and returns the fields it completed (usually
/// none, at most two when a zero-length DATA field follows DLC). A stuff
/// violation moves the parser to the error phase.
std::vector<FieldEvent> observe_bit(ParserState& state, Level level);

struct Verdict {
  enum class Decision : std::uint8_t { pass, kill };

  Decision decision = Decision::pass;
  FrameId id;
  std::int64_t decided_at_bit = 0;
  /// Earliest index the ACK slot can have given the fields decoded so far.
  std::int64_t deadline_bit = 0;
  Rational slack_us{0};
  Rational processing_budget_us{0};
};

/// Bits between the decision bit and the ACK slot the flag must precede.
constexpr std::int64_t kInjectionLead = 1;

/// Returns a verdict when `event` is the configured decision point. The rule
/// is always the registered-ID check; the decision point only moves it in time.
std::optional<Verdict> classify(const RuleSet& rules, const FieldEvent& event,
                                const ParserState& state, Rational bit_time_us);

class DeadlineMiss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct InjectionPlan {
  std::int64_t start_bit = 0;  // stuffed index of the first dominant flag bit
  BitSeq bits;                 // error_frame_bits(active)
};

/// Kill verdicts get a plan starting at the first bit boundary once the
/// budget has elapsed. Throws DeadlineMiss when that is not before the ACK slot.
std::optional<InjectionPlan> injection_plan(const Verdict& verdict, Rational bit_time_us);

struct SlackReport {
  struct Point {
    DecisionPoint point;
    std::int64_t bits_before_ack = 0;  // bit times between decision and the flag deadline
    Rational available_us{0};  // the slack: time left for the decision
    Rational margin_us{0};     // available minus compute time
    bool feasible = false;     // compute finishes strictly inside the window
  };

  Rational bit_time_us{0};
  Rational compute_time_us{0};
  Rational sample_compute_us{0};
  Rational sampling_overhead_pct{0};
  DecisionPoint configured = DecisionPoint::after_id;
  std::vector<Point> points;  // after_id, after_data, after_crc

  const Point& at(DecisionPoint p) const;
};

/// Timing budget per decision point. `cycles_per_sample` is the per-bit
/// sampling cost; zero means the same as cycles_per_decision. Throws
/// std::invalid_argument on nonpositive rates or cycle counts.
SlackReport slack_report(const RuleSet& rules, std::uint32_t bitrate, std::uint64_t cpu_freq_hz,
                         std::uint64_t cycles_per_decision, std::uint64_t cycles_per_sample = 0);

class DuplicateRbt : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// The firewall as a bus participant. It never transmits data frames, never
/// acknowledges, and keeps no error counters of its own.
class RbtNode final : public Participant {
 public:
  struct Decision {
    std::int64_t time_us = 0;
    Verdict verdict;
    std::optional<InjectionPlan> plan;
    bool deadline_miss = false;
  };

  RbtNode(std::string name, RuleSet rules, std::int64_t bit_time_us);

  const std::string& name() const override { return name_; }
  NodeRole role() const override { return NodeRole::rbt; }
  Level drive(const BitContext& ctx) override;
  void sample(Level bus, const BitContext& ctx, Trace& out) override;
  void reset(const BitContext& ctx, Trace& out) override;

  const RuleSet& rules() const { return rules_; }
  void set_rules(RuleSet rules) { rules_ = std::move(rules); }
  bool register_id(const FrameId& id) { return rules_.registered_ids.insert(id).second; }
  bool unregister_id(const FrameId& id) { return rules_.registered_ids.erase(id) != 0; }

  const ParserState& parser() const { return parser_; }
  const std::vector<Decision>& decisions() const { return decisions_; }
  std::size_t kills() const { return kills_; }
  std::size_t deadline_misses() const { return deadline_misses_; }

 private:
  std::string name_;
  RuleSet rules_;
  Rational bit_time_us_;
  ParserState parser_;
  std::optional<InjectionPlan> plan_;
  bool frame_decided_kill_ = false;
  std::vector<Decision> decisions_;
  std::size_t kills_ = 0;
  std::size_t deadline_misses_ = 0;
};

/// Adds an RbT node to the bus. Throws DuplicateRbt if one is attached.
RbtNode& rbt_attach(Bus& bus, RuleSet rules, std::string name = "rbt");

/// The attached RbT node, or nullptr.
RbtNode* find_rbt(Bus& bus);

}  // namespace cansim
