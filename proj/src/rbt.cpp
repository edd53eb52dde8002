#include "cansim/rbt.hpp"

#include <algorithm>

namespace cansim {

namespace {

constexpr int kRearmRecessiveBits = 11;

// Unstuffed bits still to come before the ACK slot, counted from the end of
// the field that produced the event. Unknown lengths are taken at their
// minimum, so the deadline is the earliest the ACK slot can occur.
constexpr std::int64_t kBitsToAckAfterId = 1 + 1 + 1 + 4 + 15 + 1;         // RTR IDE r0 DLC CRC DEL
constexpr std::int64_t kBitsToAckAfterExtId = 1 + 1 + 1 + 4 + 15 + 1;      // RTR r1 r0 DLC CRC DEL
constexpr std::int64_t kBitsToAckAfterIde = 1 + 4 + 15 + 1;                // r0 DLC CRC DEL
constexpr std::int64_t kBitsToAckAfterData = 15 + 1;                       // CRC DEL
constexpr std::int64_t kBitsToAckAfterCrc = 1;                             // DEL

void begin_field(ParserState& s, Field f, std::size_t length) {
  s.field = f;
  s.field_length = length;
  s.bits_consumed = 0;
  s.accum = 0;
}

// Advances past a completed field; returns the events it produces.
std::vector<FieldEvent> complete_field(ParserState& s) {
  std::vector<FieldEvent> ev;
  const std::uint32_t v = s.accum;
  switch (s.field) {
    case Field::id:
      s.base_id = v;
      ev.push_back({Field::id, v, IdKind::standard, {}});
      begin_field(s, Field::rtr, 1);
      break;
    case Field::rtr:
      ev.push_back({Field::rtr, v, IdKind::standard, {}});
      if (s.ide_seen) {
        s.rtr = v != 0;
        begin_field(s, Field::r1, 1);
      } else {
        s.rtr = v != 0;  // provisional: SRR if IDE turns out recessive
        begin_field(s, Field::ide, 1);
      }
      break;
    case Field::ide:
      s.ide_seen = true;
      ev.push_back({Field::ide, v, IdKind::standard, {}});
      if (v == 0) {
        s.id = FrameId{s.base_id, IdKind::standard};
        begin_field(s, Field::r0, 1);
      } else {
        s.extended = true;
        s.rtr = false;
        begin_field(s, Field::id_ext, 18);
      }
      break;
    case Field::id_ext:
      s.id = FrameId{(s.base_id << 18) | v, IdKind::extended};
      ev.push_back({Field::id, s.id->value, IdKind::extended, {}});
      begin_field(s, Field::rtr, 1);
      break;
    case Field::r1:
      begin_field(s, Field::r0, 1);
      break;
    case Field::r0:
      ev.push_back({Field::r0, v, IdKind::standard, {}});
      begin_field(s, Field::dlc, 4);
      break;
    case Field::dlc: {
      s.dlc = static_cast<std::uint8_t>(std::min<std::uint32_t>(v, 8));
      ev.push_back({Field::dlc, v, IdKind::standard, {}});
      const std::size_t bytes = s.rtr ? 0 : s.dlc;
      if (bytes == 0) {
        ev.push_back({Field::data, 0, IdKind::standard, {}});
        begin_field(s, Field::crc, 15);
      } else {
        begin_field(s, Field::data, bytes * 8);
      }
      break;
    }
    case Field::data:
      ev.push_back({Field::data, 0, IdKind::standard, s.data});
      begin_field(s, Field::crc, 15);
      break;
    case Field::crc:
      s.crc = static_cast<std::uint16_t>(v);
      ev.push_back({Field::crc, v, IdKind::standard, {}});
      begin_field(s, Field::crc_del, 1);
      break;
    default:
      break;
  }
  return ev;
}

FrameId id_of(const ParserState& s) {
  return s.id.value_or(FrameId{s.base_id, IdKind::standard});
}

bool extended_prefix_registered(const RuleSet& rules, std::uint32_t base) {
  return std::any_of(rules.registered_ids.begin(), rules.registered_ids.end(),
                     [&](const FrameId& id) { return id.is_extended() && (id.value >> 18) == base; });
}

}  // namespace

std::string_view to_string(DecisionPoint p) {
  switch (p) {
    case DecisionPoint::after_id: return "after_id";
    case DecisionPoint::after_data: return "after_data";
    case DecisionPoint::after_crc: return "after_crc";
  }
  return "?";
}

std::optional<DecisionPoint> parse_decision_point(std::string_view s) {
  if (s == "after_id") return DecisionPoint::after_id;
  if (s == "after_data") return DecisionPoint::after_data;
  if (s == "after_crc") return DecisionPoint::after_crc;
  return std::nullopt;
}

std::vector<FieldEvent> observe_bit(ParserState& s, Level level) {
  using Phase = ParserState::Phase;
  switch (s.phase) {
    case Phase::idle:
      if (level == Level::dominant) {
        s = ParserState{};
        s.phase = Phase::in_field;
        s.stuffed_index = 0;
        s.run_length = 1;
        s.last = level;
        s.collected.push_back(level);
        begin_field(s, Field::id, 11);
      }
      return {};
    case Phase::done:
    case Phase::error:
      ++s.stuffed_index;
      s.recessive_run = level == Level::recessive ? s.recessive_run + 1 : 0;
      if (s.recessive_run >= kRearmRecessiveBits) {
        s.phase = Phase::idle;
        s.recessive_run = 0;
      }
      return {};
    case Phase::in_field:
      break;
  }

  ++s.stuffed_index;
  if (s.stuff_expected) {
    s.stuff_expected = false;
    if (level == s.last) {
      s.phase = Phase::error;
      s.recessive_run = 0;
      s.deferred.clear();
      return {};
    }
    s.last = level;
    s.run_length = 1;
    auto events = std::move(s.deferred);
    s.deferred.clear();
    if (s.field == Field::crc_del) {
      s.phase = Phase::done;
      s.recessive_run = level == Level::recessive ? 1 : 0;
    }
    return events;
  }

  if (level == s.last) {
    ++s.run_length;
  } else {
    s.last = level;
    s.run_length = 1;
  }
  s.collected.push_back(level);
  const std::uint32_t bit = level == Level::recessive ? 1u : 0u;
  s.accum = (s.accum << 1) | bit;
  ++s.bits_consumed;
  if (s.field == Field::data && s.bits_consumed % 8 == 0) {
    s.data.push_back(static_cast<std::uint8_t>(s.accum & 0xFFu));
  }

  std::vector<FieldEvent> events;
  if (s.bits_consumed == s.field_length) events = complete_field(s);

  if (s.run_length == 5) {
    s.stuff_expected = true;
    s.deferred.insert(s.deferred.end(), events.begin(), events.end());
    return {};
  }
  if (s.field == Field::crc_del) {
    s.phase = Phase::done;
    s.recessive_run = 0;
  }
  return events;
}

std::optional<Verdict> classify(const RuleSet& rules, const FieldEvent& event,
                                const ParserState& state, Rational bit_time_us) {
  auto make = [&](FrameId id, std::int64_t bits_to_ack) {
    Verdict v;
    v.id = id;
    v.decision = rules.is_registered(id) ? Verdict::Decision::pass : Verdict::Decision::kill;
    v.decided_at_bit = state.stuffed_index;
    v.deadline_bit = state.stuffed_index + bits_to_ack + 1;
    v.processing_budget_us = rules.processing_budget_us;
    v.slack_us = Rational(v.deadline_bit - v.decided_at_bit - kInjectionLead) * bit_time_us -
                 rules.processing_budget_us;
    return v;
  };

  switch (rules.decision_point) {
    case DecisionPoint::after_id:
      if (event.field == Field::id) {
        if (event.kind == IdKind::extended) {
          return make(FrameId{event.value, IdKind::extended}, kBitsToAckAfterExtId);
        }
        // Wait for IDE when an extended registration shares this base ID.
        if (extended_prefix_registered(rules, event.value)) return std::nullopt;
        return make(FrameId{event.value, IdKind::standard}, kBitsToAckAfterId);
      }
      if (event.field == Field::ide && event.value == 0 &&
          extended_prefix_registered(rules, state.base_id)) {
        return make(FrameId{state.base_id, IdKind::standard}, kBitsToAckAfterIde);
      }
      return std::nullopt;
    case DecisionPoint::after_data:
      if (event.field == Field::data) return make(id_of(state), kBitsToAckAfterData);
      return std::nullopt;
    case DecisionPoint::after_crc:
      if (event.field == Field::crc) return make(id_of(state), kBitsToAckAfterCrc);
      return std::nullopt;
  }
  return std::nullopt;
}

std::optional<InjectionPlan> injection_plan(const Verdict& verdict, Rational bit_time_us) {
  if (verdict.decision == Verdict::Decision::pass) return std::nullopt;
  const std::int64_t wait_bits =
      std::max<std::int64_t>(1, ceil_div(verdict.processing_budget_us / bit_time_us));
  const std::int64_t start = verdict.decided_at_bit + wait_bits;
  if (start >= verdict.deadline_bit) {
    throw DeadlineMiss("error flag would start at bit " + std::to_string(start) +
                       ", ACK slot is at bit " + std::to_string(verdict.deadline_bit));
  }
  return InjectionPlan{start, error_frame_bits(ErrorFlagMode::active)};
}

const SlackReport::Point& SlackReport::at(DecisionPoint p) const {
  for (const auto& pt : points) {
    if (pt.point == p) return pt;
  }
  throw std::out_of_range("no such decision point");
}

SlackReport slack_report(const RuleSet& rules, std::uint32_t bitrate, std::uint64_t cpu_freq_hz,
                         std::uint64_t cycles_per_decision, std::uint64_t cycles_per_sample) {
  if (bitrate == 0 || cpu_freq_hz == 0 || cycles_per_decision == 0) {
    throw std::invalid_argument("bitrate, cpu frequency and cycles must be positive");
  }
  if (cycles_per_sample == 0) cycles_per_sample = cycles_per_decision;
  const auto cpu = static_cast<std::int64_t>(cpu_freq_hz);

  SlackReport r;
  r.configured = rules.decision_point;
  r.bit_time_us = Rational(1'000'000, static_cast<std::int64_t>(bitrate));
  r.compute_time_us = Rational(1'000'000 * static_cast<std::int64_t>(cycles_per_decision), cpu);
  r.sample_compute_us = Rational(1'000'000 * static_cast<std::int64_t>(cycles_per_sample), cpu);
  r.sampling_overhead_pct = r.sample_compute_us / r.bit_time_us * 100;

  const std::pair<DecisionPoint, std::int64_t> points[] = {
      {DecisionPoint::after_id, kBitsToAckAfterId},
      {DecisionPoint::after_data, kBitsToAckAfterData},
      {DecisionPoint::after_crc, kBitsToAckAfterCrc},
  };
  for (const auto& [point, bits_to_ack] : points) {
    SlackReport::Point p;
    p.point = point;
    // deadline - decided - lead, with deadline = decided + bits_to_ack + 1
    p.bits_before_ack = bits_to_ack + 1 - kInjectionLead;
    p.available_us = Rational(p.bits_before_ack) * r.bit_time_us;
    p.margin_us = p.available_us - r.compute_time_us;
    p.feasible = p.margin_us > 0;
    r.points.push_back(p);
  }
  return r;
}

// RbtNode

RbtNode::RbtNode(std::string name, RuleSet rules, std::int64_t bit_time_us)
    : name_(std::move(name)), rules_(std::move(rules)), bit_time_us_(bit_time_us) {}

Level RbtNode::drive(const BitContext&) {
  if (!plan_ || parser_.phase == ParserState::Phase::idle) return Level::recessive;
  const std::int64_t next = parser_.stuffed_index + 1;
  if (next >= plan_->start_bit && next < plan_->start_bit + kErrorFlagBits) return Level::dominant;
  return Level::recessive;
}

void RbtNode::sample(Level bus, const BitContext& ctx, Trace& out) {
  const bool was_idle = parser_.phase == ParserState::Phase::idle;
  auto events = observe_bit(parser_, bus);
  if (was_idle && parser_.phase != ParserState::Phase::idle) {
    plan_.reset();
    frame_decided_kill_ = false;
  }

  if (plan_ && parser_.stuffed_index == plan_->start_bit) {
    TraceRecord r;
    r.time_us = ctx.time_us;
    r.kind = TraceKind::error_flag;
    r.node = name_;
    r.channel = std::string(ctx.channel);
    r.detail = "rbt active";
    out.push_back(std::move(r));
  }

  for (const auto& ev : events) {
    if (frame_decided_kill_) break;
    auto verdict = classify(rules_, ev, parser_, bit_time_us_);
    if (!verdict) continue;
    Decision d{ctx.time_us, *verdict, std::nullopt, false};
    if (verdict->decision == Verdict::Decision::kill) {
      frame_decided_kill_ = true;
      try {
        d.plan = injection_plan(*verdict, bit_time_us_);
        plan_ = d.plan;
        ++kills_;
      } catch (const DeadlineMiss&) {
        d.deadline_miss = true;
        ++deadline_misses_;
      }
    }
    decisions_.push_back(std::move(d));
  }
}

void RbtNode::reset(const BitContext& ctx, Trace& out) {
  parser_ = ParserState{};
  plan_.reset();
  frame_decided_kill_ = false;
  TraceRecord r;
  r.time_us = ctx.time_us;
  r.kind = TraceKind::state_change;
  r.node = name_;
  r.channel = std::string(ctx.channel);
  r.state = NodeState{};
  r.detail = "reset";
  out.push_back(std::move(r));
}

RbtNode* find_rbt(Bus& bus) {
  for (const auto& name : bus.participant_names()) {
    if (auto* r = dynamic_cast<RbtNode*>(bus.find(name))) return r;
  }
  return nullptr;
}

RbtNode& rbt_attach(Bus& bus, RuleSet rules, std::string name) {
  if (find_rbt(bus)) throw DuplicateRbt("bus already has an RbT node");
  auto node = std::make_unique<RbtNode>(std::move(name), std::move(rules), bus.bit_time_us());
  auto& ref = *node;
  bus.attach(std::move(node));
  return ref;
}

}  // namespace cansim
