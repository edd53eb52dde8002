#pragma once

// CAN 2.0 frame serialization: field layout, bit stuffing, CRC-15 and
// error-flag patterns. Everything here is a pure function of its inputs
// except FrameDecoder, which is a plain value type advanced one bit at a time.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cansim {

/// Logical bus level. Dominant is logical 0 and wins on the wire.
enum class Level : std::uint8_t { dominant = 0, recessive = 1 };

constexpr Level operator!(Level l) {
  return l == Level::dominant ? Level::recessive : Level::dominant;
}

using BitSeq = std::vector<Level>;

/// Parses "0"/"1" characters (anything else is skipped) into a BitSeq.
BitSeq bits_from_string(std::string_view s);
std::string to_string(const BitSeq& bits);

enum class IdKind : std::uint8_t { standard, extended };

class InvalidFrame : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct FrameId {
  std::uint32_t value = 0;
  IdKind kind = IdKind::standard;

  /// Throws InvalidFrame when value does not fit the kind.
  static FrameId make(std::uint32_t value, IdKind kind = IdKind::standard);
  static FrameId standard(std::uint32_t value) { return make(value, IdKind::standard); }
  static FrameId extended(std::uint32_t value) { return make(value, IdKind::extended); }

  bool is_extended() const { return kind == IdKind::extended; }

  friend bool operator==(const FrameId&, const FrameId&) = default;
  friend auto operator<=>(const FrameId&, const FrameId&) = default;
};

constexpr std::uint32_t kMaxStandardId = (1u << 11) - 1;
constexpr std::uint32_t kMaxExtendedId = (1u << 29) - 1;

/// A data or remote frame. For remote frames `data` is empty and `dlc` is
/// the requested length.
struct Frame {
  FrameId id;
  bool rtr = false;
  std::uint8_t dlc = 0;
  std::vector<std::uint8_t> data;

  /// Builds a data frame; dlc is data.size(). Throws InvalidFrame.
  static Frame data_frame(FrameId id, std::vector<std::uint8_t> data);
  static Frame remote_frame(FrameId id, std::uint8_t dlc);

  /// Throws InvalidFrame if the invariants do not hold.
  void validate() const;

  friend bool operator==(const Frame&, const Frame&) = default;
};

enum class Field : std::uint8_t {
  sof,
  id,
  srr,     // extended only
  ide,
  id_ext,  // extended only: 18-bit identifier extension
  rtr,
  r1,      // extended only
  r0,
  dlc,
  data,
  crc,
  crc_del,
  ack_slot,
  ack_del,
  eof,
};

std::string_view field_name(Field f);

struct FieldRange {
  Field field;
  std::size_t start;
  std::size_t length;

  std::size_t end() const { return start + length; }
  friend bool operator==(const FieldRange&, const FieldRange&) = default;
};

/// Field positions over the stuffed bitstream, in wire order. A stuff bit
/// belongs to the field whose bit precedes it.
using FieldMap = std::vector<FieldRange>;

/// Returns the range for `f`, or nullopt when the frame has no such field.
std::optional<FieldRange> find_field(const FieldMap& map, Field f);

struct EncodedFrame {
  BitSeq bits;
  FieldMap fields;
  std::vector<bool> stuff_mask;  // true where bits[i] is a stuff bit

  /// Stuffed-stream index of the ACK slot.
  std::size_t ack_slot() const;
};

// Errors raised by destuff/decode_frame. The bus simulator turns the same
// conditions into error flags instead of exceptions.
class CodecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class StuffViolation : public CodecError {
 public:
  using CodecError::CodecError;
};
class FormError : public CodecError {
 public:
  using CodecError::CodecError;
};
class CrcMismatch : public CodecError {
 public:
  using CodecError::CodecError;
};

constexpr std::uint16_t kCrc15Polynomial = 0x4599;

/// CRC-15/CAN of `payload` with zero initial remainder.
std::uint16_t crc15(const BitSeq& payload);

/// Inserts a complement bit after every five equal consecutive bits.
BitSeq stuff(const BitSeq& raw);

/// Removes stuff bits. Throws StuffViolation on six equal consecutive bits.
BitSeq destuff(const BitSeq& stuffed);

/// Unstuffed wire bits of the frame from SOF through EOF, with the CRC filled in.
BitSeq raw_frame_bits(const Frame& frame);

EncodedFrame encode_frame(const Frame& frame);

/// Decodes a complete stuffed frame (SOF through EOF). The ACK slot value
/// is ignored. Throws StuffViolation, FormError or CrcMismatch.
Frame decode_frame(const BitSeq& bits);

enum class ErrorFlagMode : std::uint8_t { active, passive };

/// Error flag (6 bits) followed by the 8-bit recessive error delimiter.
BitSeq error_frame_bits(ErrorFlagMode mode);

constexpr int kErrorFlagBits = 6;
constexpr int kErrorDelimiterBits = 8;
constexpr int kEofBits = 7;
constexpr int kIntermissionBits = 3;

enum class DecodeError : std::uint8_t { none, stuff, form, crc };

std::string_view to_string(DecodeError e);

/// Incremental receiver for one frame, fed sampled bus levels starting with
/// SOF. It keeps going after a CRC mismatch (so the caller can place the
/// error flag after the ACK delimiter) but stops at stuff and form errors.
class FrameDecoder {
 public:
  enum class Status : std::uint8_t { in_progress, complete, failed };

  struct Step {
    Field field;
    bool stuff_bit = false;
    DecodeError error = DecodeError::none;
  };

  /// Field the next sampled bit belongs to. Before the IDE bit is seen, the
  /// bit after the base identifier is reported as rtr.
  Field next_field() const;
  bool next_is_stuff() const { return pending_stuff_; }

  Step feed(Level level);

  Status status() const { return status_; }
  bool crc_error() const { return crc_error_; }
  bool crc_checked() const { return crc_checked_; }
  /// Stuffed bits consumed so far.
  std::size_t position() const { return position_; }
  /// Fields decoded so far; complete once status() == complete.
  const Frame& frame() const { return frame_; }

 private:
  bool in_stuff_region() const;
  void enter(Field f, std::size_t length);
  void finish_field();

  Status status_ = Status::in_progress;
  Field field_ = Field::sof;
  std::size_t remaining_ = 1;
  std::uint32_t accum_ = 0;
  std::size_t position_ = 0;

  int run_length_ = 0;
  Level last_ = Level::recessive;

  std::uint16_t crc_ = 0;
  std::uint16_t received_crc_ = 0;
  bool crc_checked_ = false;
  bool crc_error_ = false;

  bool pending_stuff_ = false;
  Field owner_ = Field::sof;  // field the pending stuff bit belongs to

  std::uint32_t base_id_ = 0;
  bool ide_seen_ = false;
  bool bit_after_base_ = false;  // SRR or RTR, resolved by IDE
  std::size_t data_bits_seen_ = 0;
  Frame frame_;
};

}  // namespace cansim
