#include "cansim/codec.hpp"

#include <algorithm>
#include <utility>

namespace cansim {

namespace {

struct Segment {
  Field field;
  BitSeq bits;
};

void append_value(BitSeq& out, std::uint32_t value, int width) {
  for (int i = width - 1; i >= 0; --i) {
    out.push_back(((value >> i) & 1u) ? Level::recessive : Level::dominant);
  }
}

BitSeq value_bits(std::uint32_t value, int width) {
  BitSeq out;
  out.reserve(static_cast<std::size_t>(width));
  append_value(out, value, width);
  return out;
}

const BitSeq kDominant{Level::dominant};
const BitSeq kRecessive{Level::recessive};

// Fields SOF..CRC are the stuffed region; the trailer is fixed-form.
std::vector<Segment> frame_segments(const Frame& f) {
  std::vector<Segment> segs;
  const Level rtr = f.rtr ? Level::recessive : Level::dominant;
  segs.push_back({Field::sof, kDominant});
  if (f.id.is_extended()) {
    segs.push_back({Field::id, value_bits(f.id.value >> 18, 11)});
    segs.push_back({Field::srr, kRecessive});
    segs.push_back({Field::ide, kRecessive});
    segs.push_back({Field::id_ext, value_bits(f.id.value & 0x3FFFFu, 18)});
    segs.push_back({Field::rtr, BitSeq{rtr}});
    segs.push_back({Field::r1, kDominant});
    segs.push_back({Field::r0, kDominant});
  } else {
    segs.push_back({Field::id, value_bits(f.id.value, 11)});
    segs.push_back({Field::rtr, BitSeq{rtr}});
    segs.push_back({Field::ide, kDominant});
    segs.push_back({Field::r0, kDominant});
  }
  segs.push_back({Field::dlc, value_bits(f.dlc, 4)});
  BitSeq data;
  for (std::uint8_t byte : f.data) append_value(data, byte, 8);
  segs.push_back({Field::data, std::move(data)});

  BitSeq covered;
  for (const auto& s : segs) covered.insert(covered.end(), s.bits.begin(), s.bits.end());
  segs.push_back({Field::crc, value_bits(crc15(covered), 15)});

  segs.push_back({Field::crc_del, kRecessive});
  segs.push_back({Field::ack_slot, kRecessive});
  segs.push_back({Field::ack_del, kRecessive});
  segs.push_back({Field::eof, BitSeq(kEofBits, Level::recessive)});
  return segs;
}

bool stuffed_field(Field f) { return f <= Field::crc; }

std::uint16_t crc_step(std::uint16_t crc, Level bit) {
  const bool next = (bit == Level::recessive) != (((crc >> 14) & 1u) != 0);
  crc = static_cast<std::uint16_t>((crc << 1) & 0x7FFFu);
  if (next) crc ^= kCrc15Polynomial;
  return crc;
}

}  // namespace

BitSeq bits_from_string(std::string_view s) {
  BitSeq out;
  for (char c : s) {
    if (c == '0') out.push_back(Level::dominant);
    if (c == '1') out.push_back(Level::recessive);
  }
  return out;
}

std::string to_string(const BitSeq& bits) {
  std::string s;
  s.reserve(bits.size());
  for (Level b : bits) s.push_back(b == Level::dominant ? '0' : '1');
  return s;
}

FrameId FrameId::make(std::uint32_t value, IdKind kind) {
  const std::uint32_t max = kind == IdKind::standard ? kMaxStandardId : kMaxExtendedId;
  if (value > max) {
    throw InvalidFrame("identifier 0x" + [&] {
      static constexpr char digits[] = "0123456789ABCDEF";
      std::string h;
      for (std::uint32_t v = value; v; v >>= 4) h.insert(h.begin(), digits[v & 0xF]);
      return h.empty() ? std::string("0") : h;
    }() + (kind == IdKind::standard ? " exceeds 11 bits" : " exceeds 29 bits"));
  }
  return FrameId{value, kind};
}

Frame Frame::data_frame(FrameId id, std::vector<std::uint8_t> data) {
  if (data.size() > 8) throw InvalidFrame("data longer than 8 bytes");
  Frame f{id, false, static_cast<std::uint8_t>(data.size()), std::move(data)};
  f.validate();
  return f;
}

Frame Frame::remote_frame(FrameId id, std::uint8_t dlc) {
  Frame f{id, true, dlc, {}};
  f.validate();
  return f;
}

void Frame::validate() const {
  FrameId::make(id.value, id.kind);
  if (dlc > 8) throw InvalidFrame("dlc must be 0..8");
  if (rtr) {
    if (!data.empty()) throw InvalidFrame("remote frame carries no data");
  } else if (data.size() != dlc) {
    throw InvalidFrame("data length does not match dlc");
  }
}

std::string_view field_name(Field f) {
  switch (f) {
    case Field::sof: return "SOF";
    case Field::id: return "ID";
    case Field::srr: return "SRR";
    case Field::ide: return "IDE";
    case Field::id_ext: return "ID_EXT";
    case Field::rtr: return "RTR";
    case Field::r1: return "R1";
    case Field::r0: return "R0";
    case Field::dlc: return "DLC";
    case Field::data: return "DATA";
    case Field::crc: return "CRC";
    case Field::crc_del: return "CRC_DEL";
    case Field::ack_slot: return "ACK_SLOT";
    case Field::ack_del: return "ACK_DEL";
    case Field::eof: return "EOF";
  }
  return "?";
}

std::optional<FieldRange> find_field(const FieldMap& map, Field f) {
  for (const auto& r : map) {
    if (r.field == f) return r;
  }
  return std::nullopt;
}

std::size_t EncodedFrame::ack_slot() const {
  return find_field(fields, Field::ack_slot).value().start;
}

std::uint16_t crc15(const BitSeq& payload) {
  std::uint16_t crc = 0;
  for (Level b : payload) crc = crc_step(crc, b);
  return crc;
}

BitSeq stuff(const BitSeq& raw) {
  BitSeq out;
  out.reserve(raw.size() + raw.size() / 4 + 1);
  int run = 0;
  Level last = Level::recessive;
  for (Level b : raw) {
    out.push_back(b);
    if (run > 0 && b == last) {
      ++run;
    } else {
      last = b;
      run = 1;
    }
    if (run == 5) {
      out.push_back(!b);
      last = !b;
      run = 1;
    }
  }
  return out;
}

BitSeq destuff(const BitSeq& stuffed) {
  BitSeq out;
  out.reserve(stuffed.size());
  int run = 0;
  Level last = Level::recessive;
  for (std::size_t i = 0; i < stuffed.size(); ++i) {
    const Level b = stuffed[i];
    if (run == 5) {
      if (b == last) throw StuffViolation("six equal bits ending at index " + std::to_string(i));
      last = b;
      run = 1;
      continue;
    }
    out.push_back(b);
    if (run > 0 && b == last) {
      ++run;
    } else {
      last = b;
      run = 1;
    }
  }
  return out;
}

BitSeq raw_frame_bits(const Frame& frame) {
  frame.validate();
  BitSeq out;
  for (const auto& s : frame_segments(frame)) out.insert(out.end(), s.bits.begin(), s.bits.end());
  return out;
}

EncodedFrame encode_frame(const Frame& frame) {
  frame.validate();
  EncodedFrame enc;
  int run = 0;
  Level last = Level::recessive;
  for (const auto& seg : frame_segments(frame)) {
    const std::size_t start = enc.bits.size();
    const bool stuffed = stuffed_field(seg.field);
    for (Level b : seg.bits) {
      enc.bits.push_back(b);
      enc.stuff_mask.push_back(false);
      if (!stuffed) continue;
      if (run > 0 && b == last) {
        ++run;
      } else {
        last = b;
        run = 1;
      }
      if (run == 5) {
        enc.bits.push_back(!b);
        enc.stuff_mask.push_back(true);
        last = !b;
        run = 1;
      }
    }
    enc.fields.push_back({seg.field, start, enc.bits.size() - start});
  }
  return enc;
}

Frame decode_frame(const BitSeq& bits) {
  FrameDecoder dec;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (dec.status() != FrameDecoder::Status::in_progress) {
      throw FormError("bits after end of frame at index " + std::to_string(i));
    }
    const auto step = dec.feed(bits[i]);
    const std::string where = " at index " + std::to_string(i) + " (" +
                              std::string(field_name(step.field)) + ")";
    switch (step.error) {
      case DecodeError::none: break;
      case DecodeError::stuff: throw StuffViolation("stuff error" + where);
      case DecodeError::form: throw FormError("form error" + where);
      case DecodeError::crc: throw CrcMismatch("CRC mismatch" + where);
    }
  }
  if (dec.status() != FrameDecoder::Status::complete) throw FormError("truncated frame");
  return dec.frame();
}

BitSeq error_frame_bits(ErrorFlagMode mode) {
  const Level flag = mode == ErrorFlagMode::active ? Level::dominant : Level::recessive;
  BitSeq out(kErrorFlagBits + kErrorDelimiterBits, Level::recessive);
  std::fill_n(out.begin(), kErrorFlagBits, flag);
  return out;
}

std::string_view to_string(DecodeError e) {
  switch (e) {
    case DecodeError::none: return "none";
    case DecodeError::stuff: return "stuff";
    case DecodeError::form: return "form";
    case DecodeError::crc: return "crc";
  }
  return "?";
}

// FrameDecoder

bool FrameDecoder::in_stuff_region() const { return stuffed_field(field_); }

Field FrameDecoder::next_field() const {
  return pending_stuff_ ? owner_ : field_;
}

void FrameDecoder::enter(Field f, std::size_t length) {
  field_ = f;
  remaining_ = length;
  accum_ = 0;
}

void FrameDecoder::finish_field() {
  switch (field_) {
    case Field::sof:
      enter(Field::id, 11);
      break;
    case Field::id:
      base_id_ = accum_;
      enter(Field::rtr, 1);
      break;
    case Field::srr:
      enter(Field::ide, 1);
      break;
    case Field::rtr:
      if (!ide_seen_) {
        bit_after_base_ = accum_ != 0;
        enter(Field::ide, 1);
      } else {
        frame_.rtr = accum_ != 0;
        enter(Field::r1, 1);
      }
      break;
    case Field::ide:
      ide_seen_ = true;
      if (accum_ == 0) {
        frame_.id = FrameId{base_id_, IdKind::standard};
        frame_.rtr = bit_after_base_;
        enter(Field::r0, 1);
      } else {
        enter(Field::id_ext, 18);
      }
      break;
    case Field::id_ext:
      frame_.id = FrameId{(base_id_ << 18) | accum_, IdKind::extended};
      enter(Field::rtr, 1);
      break;
    case Field::r1:
      enter(Field::r0, 1);
      break;
    case Field::r0:
      enter(Field::dlc, 4);
      break;
    case Field::dlc: {
      // DLC 9..15 means eight bytes on classic CAN.
      frame_.dlc = static_cast<std::uint8_t>(std::min<std::uint32_t>(accum_, 8));
      const std::size_t bytes = frame_.rtr ? 0 : frame_.dlc;
      if (bytes == 0) {
        enter(Field::crc, 15);
      } else {
        enter(Field::data, bytes * 8);
      }
      break;
    }
    case Field::data:
      enter(Field::crc, 15);
      break;
    case Field::crc:
      received_crc_ = static_cast<std::uint16_t>(accum_);
      crc_checked_ = true;
      crc_error_ = received_crc_ != crc_;
      enter(Field::crc_del, 1);
      break;
    case Field::crc_del:
      enter(Field::ack_slot, 1);
      break;
    case Field::ack_slot:
      enter(Field::ack_del, 1);
      break;
    case Field::ack_del:
      enter(Field::eof, kEofBits);
      break;
    case Field::eof:
      status_ = Status::complete;
      break;
  }
}

FrameDecoder::Step FrameDecoder::feed(Level level) {
  Step step{next_field(), pending_stuff_, DecodeError::none};
  if (status_ != Status::in_progress) {
    step.error = DecodeError::form;
    return step;
  }
  ++position_;

  if (pending_stuff_) {
    pending_stuff_ = false;
    if (level == last_) {
      status_ = Status::failed;
      step.error = DecodeError::stuff;
      return step;
    }
    last_ = level;
    run_length_ = 1;
    return step;
  }

  const Field field = field_;
  const bool stuffed = in_stuff_region();
  if (stuffed) {
    if (run_length_ > 0 && level == last_) {
      ++run_length_;
    } else {
      last_ = level;
      run_length_ = 1;
    }
    if (field != Field::crc) crc_ = crc_step(crc_, level);
  }

  if (field == Field::sof && level != Level::dominant) {
    status_ = Status::failed;
    step.error = DecodeError::form;
    return step;
  }
  if ((field == Field::crc_del || field == Field::ack_del || field == Field::eof) &&
      level != Level::recessive) {
    status_ = Status::failed;
    step.error = DecodeError::form;
    return step;
  }

  const std::uint32_t bit = level == Level::recessive ? 1u : 0u;
  if (field == Field::data) {
    accum_ = (accum_ << 1) | bit;
    if (++data_bits_seen_ % 8 == 0) {
      frame_.data.push_back(static_cast<std::uint8_t>(accum_ & 0xFFu));
      accum_ = 0;
    }
  } else {
    accum_ = (accum_ << 1) | bit;
  }
  --remaining_;
  if (remaining_ == 0) {
    finish_field();
    if (field == Field::crc && crc_error_) step.error = DecodeError::crc;
  }

  if (stuffed && run_length_ == 5) {
    pending_stuff_ = true;
    owner_ = field;
  }
  return step;
}

}  // namespace cansim
