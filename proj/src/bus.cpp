#include "cansim/bus.hpp"

#include <algorithm>
#include <set>
#include <utility>

namespace cansim {

namespace {

constexpr int kIntegrationBits = 11;

bool arbitration_field(Field f) {
  return f == Field::id || f == Field::srr || f == Field::ide || f == Field::id_ext ||
         f == Field::rtr;
}

// Serves a fixed frame list, used when a node has a tx_queue but no behavior.
class ListSource final : public FrameSource {
 public:
  explicit ListSource(std::vector<ScheduledFrame> frames) : frames_(std::move(frames)) {
    std::stable_sort(frames_.begin(), frames_.end(),
                     [](const auto& a, const auto& b) { return a.time_us < b.time_us; });
  }
  std::optional<ScheduledFrame> next(std::int64_t) override {
    if (pos_ >= frames_.size()) return std::nullopt;
    return frames_[pos_++];
  }

 private:
  std::vector<ScheduledFrame> frames_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string_view to_string(NodeRole r) {
  switch (r) {
    case NodeRole::sender: return "sender";
    case NodeRole::receiver: return "receiver";
    case NodeRole::attacker: return "attacker";
    case NodeRole::rbt: return "rbt";
  }
  return "?";
}

std::optional<NodeRole> parse_role(std::string_view s) {
  if (s == "sender") return NodeRole::sender;
  if (s == "receiver") return NodeRole::receiver;
  if (s == "attacker") return NodeRole::attacker;
  if (s == "rbt") return NodeRole::rbt;
  return std::nullopt;
}

std::string_view to_string(Controller::Phase p) {
  switch (p) {
    case Controller::Phase::integrating: return "integrating";
    case Controller::Phase::idle: return "idle";
    case Controller::Phase::in_frame: return "in_frame";
    case Controller::Phase::error_flag: return "error_flag";
    case Controller::Phase::error_delimiter: return "error_delimiter";
    case Controller::Phase::intermission: return "intermission";
    case Controller::Phase::bus_off: return "bus_off";
  }
  return "?";
}

// Controller

Controller::Controller(NodeSpec spec) : spec_(std::move(spec)) {
  for (auto& f : spec_.tx_queue) {
    if (f.name.empty()) f.name = spec_.name;
  }
  if (spec_.behavior) {
    source_ = spec_.behavior();
    for (auto& f : spec_.tx_queue) queue_.push_back(f);
    std::stable_sort(queue_.begin(), queue_.end(),
                     [](const auto& a, const auto& b) { return a.time_us < b.time_us; });
  } else if (!spec_.tx_queue.empty()) {
    source_ = std::make_unique<ListSource>(spec_.tx_queue);
  }
}

void Controller::enqueue(ScheduledFrame f) {
  f.frame.validate();
  if (f.name.empty()) f.name = spec_.name;
  queue_.push_back(std::move(f));
}

const ScheduledFrame* Controller::transmission() const {
  return (phase_ == Phase::in_frame && transmitting_ && current_) ? &*current_ : nullptr;
}

bool Controller::busy() const {
  return phase_ == Phase::in_frame || phase_ == Phase::error_flag ||
         phase_ == Phase::error_delimiter || phase_ == Phase::intermission;
}

void Controller::pull_next(std::int64_t now_us) {
  if (current_) return;
  if (!source_peek_ && source_) {
    source_peek_ = source_->next(now_us);
    if (source_peek_ && source_peek_->name.empty()) source_peek_->name = spec_.name;
  }
  const bool have_queue = !queue_.empty();
  if (have_queue && (!source_peek_ || queue_.front().time_us <= source_peek_->time_us)) {
    current_ = std::move(queue_.front());
    queue_.pop_front();
  } else if (source_peek_) {
    current_ = std::move(source_peek_);
    source_peek_.reset();
  }
}

Level Controller::drive(const BitContext& ctx) {
  switch (phase_) {
    case Phase::idle:
      pull_next(ctx.time_us);
      if (current_ && current_->time_us <= ctx.time_us) {
        enc_ = encode_frame(current_->frame);
        enc_fields_.assign(enc_.bits.size(), Field::sof);
        for (const auto& r : enc_.fields) {
          std::fill_n(enc_fields_.begin() + static_cast<std::ptrdiff_t>(r.start), r.length, r.field);
        }
        transmitting_ = true;
        started_now_ = true;
        tx_pos_ = 0;
        dec_ = FrameDecoder{};
        crc_error_pending_ = false;
        phase_ = Phase::in_frame;
        return enc_.bits[0];
      }
      return Level::recessive;
    case Phase::in_frame:
      if (transmitting_) return tx_pos_ < enc_.bits.size() ? enc_.bits[tx_pos_] : Level::recessive;
      if (dec_.next_field() == Field::ack_slot && !dec_.next_is_stuff() && dec_.crc_checked() &&
          !dec_.crc_error()) {
        return Level::dominant;
      }
      return Level::recessive;
    case Phase::error_flag:
      return flag_mode_ == ErrorFlagMode::active ? Level::dominant : Level::recessive;
    case Phase::integrating:
    case Phase::error_delimiter:
    case Phase::intermission:
    case Phase::bus_off:
      return Level::recessive;
  }
  return Level::recessive;
}

void Controller::sample(Level bus, const BitContext& ctx, Trace& out) {
  switch (phase_) {
    case Phase::bus_off:
      return;
    case Phase::integrating:
      counter_ = bus == Level::recessive ? counter_ + 1 : 0;
      if (counter_ >= kIntegrationBits) {
        phase_ = Phase::idle;
        counter_ = 0;
      }
      return;
    case Phase::intermission:
    case Phase::idle:
      if (bus == Level::dominant) {
        // Start of frame from another node. A dominant bit inside
        // intermission is taken as SOF too; overload frames are never sent.
        phase_ = Phase::in_frame;
        transmitting_ = false;
        dec_ = FrameDecoder{};
        crc_error_pending_ = false;
        frame_bit(bus, ctx, out);
        return;
      }
      if (phase_ == Phase::intermission && ++counter_ >= kIntermissionBits) {
        phase_ = Phase::idle;
        counter_ = 0;
      }
      return;
    case Phase::in_frame:
      frame_bit(bus, ctx, out);
      return;
    case Phase::error_flag:
      if (++counter_ >= kErrorFlagBits) {
        phase_ = Phase::error_delimiter;
        counter_ = 0;
      }
      return;
    case Phase::error_delimiter:
      // The delimiter starts counting at the first recessive bit, which
      // lines up all nodes whose superimposed flags ended at different bits.
      counter_ = bus == Level::recessive ? counter_ + 1 : 0;
      if (counter_ >= kErrorDelimiterBits) {
        phase_ = Phase::intermission;
        counter_ = 0;
      }
      return;
  }
}

TraceRecord Controller::frame_record(TraceKind kind, const BitContext& ctx) const {
  TraceRecord r;
  r.time_us = ctx.time_us;
  r.kind = kind;
  r.node = spec_.name;
  r.channel = std::string(ctx.channel);
  if (current_ && (kind == TraceKind::frame_tx_start || kind == TraceKind::frame_killed)) {
    r.frame = current_->frame;
    r.frame_name = current_->name;
    r.source = spec_.name;
  }
  return r;
}

void Controller::frame_bit(Level bus, const BitContext& ctx, Trace& out) {
  if (started_now_) {
    started_now_ = false;
    out.push_back(frame_record(TraceKind::frame_tx_start, ctx));
  }
  const auto step = dec_.feed(bus);

  if (transmitting_) {
    const Level sent = enc_.bits[tx_pos_];
    const Field field = enc_fields_[tx_pos_];
    const bool stuff_bit = enc_.stuff_mask[tx_pos_];
    ++tx_pos_;
    if (field == Field::ack_slot) {
      if (bus == Level::recessive) return signal_error("ack", true, ctx, out);
    } else if (sent != bus) {
      if (sent == Level::recessive && !stuff_bit && arbitration_field(field)) {
        transmitting_ = false;
        TraceRecord r = frame_record(TraceKind::arbitration_loss, ctx);
        r.frame = current_->frame;
        r.frame_name = current_->name;
        r.detail = std::string(field_name(field));
        out.push_back(std::move(r));
      } else {
        return signal_error("bit", true, ctx, out);
      }
    }
    if (transmitting_) {
      if (step.error != DecodeError::none) return signal_error(to_string(step.error), true, ctx, out);
      if (dec_.status() == FrameDecoder::Status::complete) {
        apply(FaultEvent::tx_success, ctx, out);
        current_.reset();
        transmitting_ = false;
        phase_ = Phase::intermission;
        counter_ = 0;
      }
      return;
    }
  }

  // Receiver path (including a transmitter that just lost arbitration).
  if (step.error == DecodeError::stuff || step.error == DecodeError::form) {
    return signal_error(to_string(step.error), false, ctx, out);
  }
  if (step.error == DecodeError::crc) crc_error_pending_ = true;
  if (crc_error_pending_ && step.field == Field::ack_del) {
    return signal_error("crc", false, ctx, out);
  }
  if (dec_.status() == FrameDecoder::Status::complete) {
    apply(FaultEvent::rx_success, ctx, out);
    TraceRecord r;
    r.time_us = ctx.time_us;
    r.kind = TraceKind::frame_delivered;
    r.node = spec_.name;
    r.channel = std::string(ctx.channel);
    r.frame = dec_.frame();
    out.push_back(std::move(r));
    phase_ = Phase::intermission;
    counter_ = 0;
  }
}

void Controller::signal_error(std::string_view cause, bool as_transmitter, const BitContext& ctx,
                              Trace& out) {
  const ErrorMode mode_at_detection = state_.mode;
  if (as_transmitter) {
    TraceRecord killed = frame_record(TraceKind::frame_killed, ctx);
    killed.detail = std::string(cause);
    out.push_back(std::move(killed));
    transmitting_ = false;
    apply(FaultEvent::tx_error, ctx, out);
  } else {
    apply(FaultEvent::rx_error, ctx, out);
  }
  if (state_.mode == ErrorMode::bus_off) return;

  flag_mode_ = mode_at_detection == ErrorMode::error_active ? ErrorFlagMode::active
                                                            : ErrorFlagMode::passive;
  TraceRecord r;
  r.time_us = ctx.time_us;
  r.kind = TraceKind::error_flag;
  r.node = spec_.name;
  r.channel = std::string(ctx.channel);
  r.detail = std::string(cause) + (flag_mode_ == ErrorFlagMode::active ? " active" : " passive");
  out.push_back(std::move(r));
  phase_ = Phase::error_flag;
  counter_ = 0;
}

void Controller::apply(FaultEvent event, const BitContext& ctx, Trace& out) {
  const ErrorMode before = state_.mode;
  state_ = fault_confinement_update(state_, event);
  if (state_.mode == before) return;

  TraceRecord r;
  r.time_us = ctx.time_us;
  r.kind = TraceKind::state_change;
  r.node = spec_.name;
  r.channel = std::string(ctx.channel);
  r.state = state_;
  r.detail = std::string(to_string(state_.mode));
  out.push_back(std::move(r));

  if (state_.mode == ErrorMode::bus_off) {
    phase_ = Phase::bus_off;
    transmitting_ = false;
    current_.reset();
  }
}

void Controller::reset(const BitContext& ctx, Trace& out) {
  state_ = NodeState{};
  phase_ = Phase::integrating;
  counter_ = 0;
  current_.reset();
  queue_.clear();
  transmitting_ = false;
  started_now_ = false;
  crc_error_pending_ = false;

  TraceRecord r;
  r.time_us = ctx.time_us;
  r.kind = TraceKind::state_change;
  r.node = spec_.name;
  r.channel = std::string(ctx.channel);
  r.state = state_;
  r.detail = "reset";
  out.push_back(std::move(r));
}

// Bus

Bus::Bus(const BusConfig& config)
    : bitrate_(config.bitrate),
      max_time_us_(config.max_time_us),
      channel_(config.channel),
      record_bits_(config.record_bit_samples) {
  if (config.bitrate == 0) throw ConfigError("bitrate must be positive");
  if (1'000'000 % config.bitrate != 0) {
    throw ConfigError("bitrate " + std::to_string(config.bitrate) +
                      " does not give a whole-microsecond bit time");
  }
  bit_time_us_ = 1'000'000 / config.bitrate;
  std::set<std::string> names;
  for (const auto& n : config.nodes) {
    if (n.name.empty()) throw ConfigError("node name must not be empty");
    if (!names.insert(n.name).second) throw ConfigError("duplicate node name '" + n.name + "'");
    if (n.role == NodeRole::rbt) {
      throw ConfigError("node '" + n.name + "' has role rbt; attach it with rbt_attach");
    }
    parts_.push_back(std::make_unique<Controller>(n));
  }
}

Bus build_bus(const BusConfig& config) { return Bus(config); }

void Bus::attach(std::unique_ptr<Participant> p) {
  if (find(p->name())) throw ConfigError("duplicate node name '" + p->name() + "'");
  parts_.push_back(std::move(p));
}

Participant* Bus::find(std::string_view name) {
  for (auto& p : parts_) {
    if (p->name() == name) return p.get();
  }
  return nullptr;
}

const Participant* Bus::find(std::string_view name) const {
  for (const auto& p : parts_) {
    if (p->name() == name) return p.get();
  }
  return nullptr;
}

Controller& Bus::controller(std::string_view name) {
  auto* c = dynamic_cast<Controller*>(find(name));
  if (!c) throw UnknownNode(std::string(name));
  return *c;
}

NodeState Bus::node_state(std::string_view name) const {
  const auto* p = find(name);
  if (!p) throw UnknownNode(std::string(name));
  return p->state();
}

std::vector<const Participant*> Bus::participants() const {
  std::vector<const Participant*> out;
  for (const auto& p : parts_) out.push_back(p.get());
  return out;
}

std::vector<std::string> Bus::participant_names() const {
  std::vector<std::string> out;
  for (const auto& p : parts_) out.push_back(p->name());
  return out;
}

TraceRecord Bus::reset_node(const std::string& name) {
  auto* p = find(name);
  if (!p) throw UnknownNode(name);
  const BitContext ctx{bit_index_, now_us(), bit_time_us_, channel_};
  Trace out;
  p->reset(ctx, out);
  pending_.insert(pending_.end(), out.begin(), out.end());
  return out.back();
}

Trace Bus::step_bit() {
  if (finished()) throw std::logic_error("bus is past max_time");
  const BitContext ctx{bit_index_, now_us(), bit_time_us_, channel_};
  Trace out = std::move(pending_);
  pending_.clear();

  std::vector<Level> drivers;
  drivers.reserve(parts_.size());
  Level level = Level::recessive;
  const ScheduledFrame* tx = nullptr;
  std::string tx_name;
  for (auto& p : parts_) {
    const Level l = p->drive(ctx);
    drivers.push_back(l);
    if (l == Level::dominant) level = Level::dominant;
    if (auto* c = dynamic_cast<const Controller*>(p.get()); c && !tx && c->transmission()) {
      tx = c->transmission();
      tx_name = c->name();
    }
  }
  // Copy before sampling: a successful transmitter drops its frame this bit.
  std::optional<ScheduledFrame> tx_frame = tx ? std::optional<ScheduledFrame>(*tx) : std::nullopt;

  if (record_bits_) {
    TraceRecord r;
    r.time_us = ctx.time_us;
    r.kind = TraceKind::bit_sample;
    r.channel = channel_;
    r.level = level;
    r.busy = level == Level::dominant ||
             std::any_of(parts_.begin(), parts_.end(), [](const auto& p) { return p->busy(); });
    r.drivers = std::move(drivers);
    out.push_back(std::move(r));
  }

  const std::size_t first_event = out.size();
  for (auto& p : parts_) p->sample(level, ctx, out);

  for (std::size_t i = first_event; i < out.size(); ++i) {
    auto& r = out[i];
    if (r.kind == TraceKind::frame_delivered && tx_frame) {
      r.source = tx_name;
      r.frame_name = tx_frame->name;
    }
  }
  ++bit_index_;
  return out;
}

Trace Bus::run_until(const StopCondition& stop) {
  Trace trace;
  while (!finished()) {
    if (stop.until_us && now_us() >= *stop.until_us) break;
    Trace bit = step_bit();
    bool hit = false;
    if (stop.predicate) {
      hit = std::any_of(bit.begin(), bit.end(), stop.predicate);
    }
    trace.insert(trace.end(), std::make_move_iterator(bit.begin()),
                 std::make_move_iterator(bit.end()));
    if (hit) break;
  }
  return trace;
}

Trace step_bit(Bus& bus) { return bus.step_bit(); }
Trace run_until(Bus& bus, const StopCondition& stop) { return bus.run_until(stop); }

}  // namespace cansim
