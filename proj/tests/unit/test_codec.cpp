#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "cansim/codec.hpp"
#include "support.hpp"

using namespace cansim;
using testing::crc15_long_division;

namespace {

BitSeq B(const char* s) { return bits_from_string(s); }

int longest_run(const BitSeq& bits) {
  int best = 0, run = 0;
  for (std::size_t i = 0; i < bits.size(); ++i) {
    run = (i && bits[i] == bits[i - 1]) ? run + 1 : 1;
    best = std::max(best, run);
  }
  return best;
}

}  // namespace

TEST_CASE("crc15 of nothing is zero") { CHECK(crc15({}) == 0); }

TEST_CASE("crc15 of 44 dominant bits matches long division") {
  const BitSeq zeros(44, Level::dominant);
  CHECK(crc15(zeros) == crc15_long_division(zeros));
  CHECK(crc15(zeros) == 0);  // zero remainder for a zero message
}

TEST_CASE("crc15 agrees with the long-division oracle") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 10000; ++i) {
    const auto bits = testing::random_bits(rng, 1 + rng() % 120);
    REQUIRE(crc15(bits) == crc15_long_division(bits));
    REQUIRE(crc15(bits) == testing::crc15_shift_register(bits));
  }
  // "123456789" as ASCII bits: the published CRC-15/CAN check value is 0x059E
  BitSeq ascii;
  for (char c : std::string("123456789")) {
    for (int k = 7; k >= 0; --k) ascii.push_back((c >> k) & 1 ? Level::recessive : Level::dominant);
  }
  CHECK(crc15(ascii) == 0x059E);
}

TEST_CASE("a single flipped bit changes the crc") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    auto bits = testing::random_bits(rng, 1 + rng() % 100);
    const auto before = crc15(bits);
    const auto k = rng() % bits.size();
    bits[k] = !bits[k];
    REQUIRE(crc15(bits) != before);
  }
}

TEST_CASE("stuffing examples") {
  CHECK(stuff(B("11111")) == B("111110"));
  CHECK(stuff(B("101010")) == B("101010"));
  CHECK(stuff(B("1111100000")) == B("111110000010"));
  CHECK(stuff({}).empty());
}

TEST_CASE("destuffing examples") {
  CHECK_THROWS_AS(destuff(B("111111")), StuffViolation);
  CHECK(destuff(B("111110")) == B("11111"));
  CHECK(destuff(B("111110000010")) == B("1111100000"));
}

TEST_CASE("stuffing properties over random sequences") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 5000; ++i) {
    BitSeq x = testing::random_bits(rng, rng() % 200);
    if (i % 3 == 0) {
      // long constant stretches
      for (auto& b : x) b = (rng() % 10 == 0) ? !b : Level::dominant;
    }
    const auto s = stuff(x);
    REQUIRE(destuff(s) == x);
    REQUIRE(longest_run(s) <= 5);
    REQUIRE(s.size() <= x.size() + (x.size() + 3) / 4);
  }
}

TEST_CASE("frame lengths before stuffing") {
  CHECK(raw_frame_bits(Frame::data_frame(FrameId::standard(0x123), {})).size() ==
        1 + 11 + 1 + 1 + 1 + 4 + 0 + 15 + 1 + 1 + 1 + 7);
  CHECK(raw_frame_bits(Frame::data_frame(FrameId::standard(0x123), std::vector<std::uint8_t>(8, 0x55))).size() ==
        44 + 64);
  // extended: SRR, IDE, 18 more id bits, RTR, r1, r0
  CHECK(raw_frame_bits(Frame::data_frame(FrameId::extended(0x1ABCDEF), {})).size() == 44 + 20);
}

TEST_CASE("msg1 round-trips") {
  const Frame msg1 = Frame::data_frame(FrameId::standard(0x199), {0x0A});
  const auto enc = encode_frame(msg1);
  CHECK(decode_frame(enc.bits) == msg1);
}

TEST_CASE("field layout of a standard frame") {
  const auto enc = encode_frame(Frame::data_frame(FrameId::standard(0x199), {0x0A}));
  const Field order[] = {Field::sof, Field::id, Field::rtr, Field::ide, Field::r0, Field::dlc, Field::data,
                         Field::crc, Field::crc_del, Field::ack_slot, Field::ack_del, Field::eof};
  REQUIRE(enc.fields.size() == std::size(order));
  std::size_t pos = 0;
  for (std::size_t i = 0; i < enc.fields.size(); ++i) {
    CHECK(enc.fields[i].field == order[i]);
    CHECK(enc.fields[i].start == pos);
    pos = enc.fields[i].end();
  }
  CHECK(pos == enc.bits.size());
  CHECK(enc.ack_slot() == find_field(enc.fields, Field::ack_slot)->start);
  CHECK(find_field(enc.fields, Field::eof)->length == 7);
  CHECK(!find_field(enc.fields, Field::srr));
}

TEST_CASE("the fixed-form tail is not stuffed") {
  const auto enc = encode_frame(Frame::data_frame(FrameId::standard(0x000), {}));
  const auto del = find_field(enc.fields, Field::crc_del)->start;
  for (std::size_t i = del; i < enc.bits.size(); ++i) CHECK(enc.bits[i] == Level::recessive);
  for (std::size_t i = del; i < enc.bits.size(); ++i) CHECK(!enc.stuff_mask[i]);
}

TEST_CASE("encode and decode over random frames") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 3000; ++i) {
    const Frame f = testing::random_frame(rng);
    const auto enc = encode_frame(f);
    REQUIRE(decode_frame(enc.bits) == f);
    const auto raw = raw_frame_bits(f);
    const auto del = static_cast<long>(find_field(enc.fields, Field::crc_del)->start);
    REQUIRE(destuff(BitSeq(enc.bits.begin(), enc.bits.begin() + del)) ==
            BitSeq(raw.begin(), raw.end() - 10));
    // ranges tile the stream
    std::size_t pos = 0;
    for (const auto& r : enc.fields) {
      REQUIRE(r.start == pos);
      pos = r.end();
    }
    REQUIRE(pos == enc.bits.size());
  }
}

TEST_CASE("a flipped data bit is caught") {
  std::mt19937_64 rng(9);
  int crc_hits = 0;
  for (int i = 0; i < 2000; ++i) {
    std::vector<std::uint8_t> bytes(1 + rng() % 8);
    for (auto& b : bytes) b = static_cast<std::uint8_t>(rng());
    const auto enc = encode_frame(Frame::data_frame(FrameId::standard(rng() % 0x800), bytes));
    const auto data = *find_field(enc.fields, Field::data);
    const auto k = data.start + rng() % data.length;
    auto bits = enc.bits;
    bits[k] = !bits[k];
    try {
      decode_frame(bits);
      FAIL("silent acceptance");
    } catch (const CrcMismatch&) {
      ++crc_hits;
    } catch (const StuffViolation&) {
    } catch (const FormError&) {
      // a flipped stuff bit can shift the tail
    }
  }
  CHECK(crc_hits > 1000);
}

TEST_CASE("a dominant EOF bit is a form error") {
  const auto enc = encode_frame(Frame::data_frame(FrameId::standard(0x199), {0x0A}));
  auto bits = enc.bits;
  bits[find_field(enc.fields, Field::eof)->start + 3] = Level::dominant;
  CHECK_THROWS_AS(decode_frame(bits), FormError);
  auto del = enc.bits;
  del[find_field(enc.fields, Field::crc_del)->start] = Level::dominant;
  CHECK_THROWS_AS(decode_frame(del), FormError);
}

TEST_CASE("truncated or padded frames are form errors") {
  auto bits = encode_frame(Frame::data_frame(FrameId::standard(0x199), {})).bits;
  auto shorter = bits;
  shorter.pop_back();
  CHECK_THROWS_AS(decode_frame(shorter), FormError);
  bits.push_back(Level::recessive);
  CHECK_THROWS_AS(decode_frame(bits), FormError);
}

TEST_CASE("error frame bit patterns") {
  const auto active = error_frame_bits(ErrorFlagMode::active);
  REQUIRE(active.size() == 14);
  for (int i = 0; i < 6; ++i) CHECK(active[i] == Level::dominant);
  for (int i = 6; i < 14; ++i) CHECK(active[i] == Level::recessive);
  const auto passive = error_frame_bits(ErrorFlagMode::passive);
  REQUIRE(passive.size() == 14);
  for (auto b : passive) CHECK(b == Level::recessive);
}

TEST_CASE("an active flag anywhere in the stuffed region is a stuff violation") {
  std::mt19937_64 rng(13);
  for (int i = 0; i < 500; ++i) {
    const auto enc = encode_frame(testing::random_frame(rng));
    const auto stuffed_end = find_field(enc.fields, Field::crc)->end();
    const auto at = 1 + rng() % (stuffed_end - 1);
    auto bits = enc.bits;
    for (std::size_t k = at; k < at + 6 && k < bits.size(); ++k) bits[k] = Level::dominant;
    if (at + 6 > stuffed_end) continue;  // the flag must lie inside the stuffed region
    CHECK_THROWS_AS(decode_frame(bits), StuffViolation);
  }
}

TEST_CASE("identifier bounds") {
  CHECK_THROWS_AS(FrameId::standard(0x800), InvalidFrame);
  CHECK_THROWS_AS(FrameId::extended(1u << 29), InvalidFrame);
  CHECK_NOTHROW(FrameId::extended(kMaxExtendedId));
  CHECK_THROWS_AS(Frame::data_frame(FrameId::standard(1), std::vector<std::uint8_t>(9)), InvalidFrame);
  CHECK_THROWS_AS(Frame::remote_frame(FrameId::standard(1), 9), InvalidFrame);
}

TEST_CASE("extended field layout") {
  const auto enc = encode_frame(Frame::data_frame(FrameId::extended(0x12345678 & kMaxExtendedId), {1, 2}));
  REQUIRE(find_field(enc.fields, Field::srr));
  CHECK(find_field(enc.fields, Field::id_ext));
  CHECK(find_field(enc.fields, Field::r1));
  CHECK(decode_frame(enc.bits).id.is_extended());
}

TEST_CASE("streaming decoder reports fields and stuff bits") {
  const Frame f = Frame::data_frame(FrameId::standard(0x000), {0x00});
  const auto enc = encode_frame(f);
  FrameDecoder dec;
  for (std::size_t i = 0; i < enc.bits.size(); ++i) {
    const auto step = dec.feed(enc.bits[i]);
    REQUIRE(step.error == DecodeError::none);
    CHECK(step.stuff_bit == enc.stuff_mask[i]);
  }
  CHECK(dec.status() == FrameDecoder::Status::complete);
  CHECK(dec.frame() == f);
  CHECK(!dec.crc_error());
}
