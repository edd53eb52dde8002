#include "cansim/rational.hpp"

#include <cctype>
#include <charconv>
#include <stdexcept>

namespace cansim {

namespace {

std::int64_t parse_int(std::string_view s) {
  std::int64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || ptr != end || s.empty()) {
    throw std::invalid_argument("not a number: '" + std::string(s) + "'");
  }
  return v;
}

std::string render(Rational value, int digits, bool trim) {
  const bool negative = value < 0;
  if (negative) value = -value;
  std::int64_t scale = 1;
  for (int i = 0; i < digits; ++i) scale *= 10;
  const Rational scaled = value * scale;
  // round half up on the magnitude
  std::int64_t q = scaled.numerator() / scaled.denominator();
  const std::int64_t r = scaled.numerator() % scaled.denominator();
  if (2 * r >= scaled.denominator()) ++q;

  std::string whole = std::to_string(q / scale);
  std::string frac = std::to_string(q % scale);
  frac.insert(frac.begin(), static_cast<std::size_t>(digits) - frac.size(), '0');
  if (trim) {
    while (!frac.empty() && frac.back() == '0') frac.pop_back();
  }
  std::string out = (negative && q != 0) ? "-" : "";
  out += whole;
  if (!frac.empty()) out += "." + frac;
  return out;
}

}  // namespace

Rational parse_rational(std::string_view text) {
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
  if (auto slash = text.find('/'); slash != std::string_view::npos) {
    const auto den = parse_int(text.substr(slash + 1));
    if (den == 0) throw std::invalid_argument("zero denominator");
    return Rational(parse_int(text.substr(0, slash)), den);
  }
  const auto dot = text.find('.');
  if (dot == std::string_view::npos) return Rational(parse_int(text));

  std::string_view whole = text.substr(0, dot);
  std::string_view frac = text.substr(dot + 1);
  bool negative = false;
  if (!whole.empty() && (whole.front() == '-' || whole.front() == '+')) {
    negative = whole.front() == '-';
    whole.remove_prefix(1);
  }
  if (frac.size() > 15) throw std::invalid_argument("too many decimal digits");
  std::int64_t den = 1;
  for (std::size_t i = 0; i < frac.size(); ++i) den *= 10;
  const std::int64_t w = whole.empty() ? 0 : parse_int(whole);
  const std::int64_t f = frac.empty() ? 0 : parse_int(frac);
  if (w < 0 || f < 0) throw std::invalid_argument("malformed number: '" + std::string(text) + "'");
  Rational r = Rational(w) + Rational(f, den);
  return negative ? -r : r;
}

std::string to_decimal(Rational value, int max_fraction_digits) {
  return render(value, max_fraction_digits, true);
}

std::string to_fixed(Rational value, int digits) { return render(value, digits, false); }

}  // namespace cansim
