#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <boost/rational.hpp>

// Boost 1.74's mixed rational/integer operator== recurses forever under
// C++20 reversed-operator lookup. Exact-match overloads take precedence.
namespace boost {
inline bool operator==(const rational<std::int64_t>& a, std::int64_t b) {
  return a.denominator() == 1 && a.numerator() == b;
}
inline bool operator==(const rational<std::int64_t>& a, int b) {
  return a == static_cast<std::int64_t>(b);
}
}  // namespace boost

namespace cansim {

/// Exact arithmetic for timing budgets and percentages.
using Rational = boost::rational<std::int64_t>;

/// Accepts integers, decimals ("1.6", "-0.25") and fractions ("8/5").
/// Throws std::invalid_argument.
Rational parse_rational(std::string_view text);

/// Decimal rendering, exact when the expansion terminates within
/// `max_fraction_digits`, otherwise rounded half away from zero.
std::string to_decimal(Rational value, int max_fraction_digits = 6);

/// Same as to_decimal but always prints exactly `digits` fraction digits.
std::string to_fixed(Rational value, int digits);

inline std::int64_t ceil_div(Rational value) {
  const auto n = value.numerator();
  const auto d = value.denominator();
  return n >= 0 ? (n + d - 1) / d : -((-n) / d);
}

}  // namespace cansim
