#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace debias {

/// Base exception for every recoverable failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Calendar month key, ordered chronologically.
struct YearMonth {
  int year = 1970;
  int month = 1;  // 1..12

  auto operator<=>(const YearMonth&) const = default;

  /// "YYYY-MM"
  std::string str() const;
  static YearMonth parse(std::string_view text);
};

struct CivilTime {
  int year;
  int month;
  int day;
  int hour;
};

/// Broken-down UTC time for seconds since the epoch (proleptic Gregorian).
CivilTime civil_from_epoch(std::int64_t seconds);

/// Seconds since the epoch for 00:00:00 UTC on the given date.
std::int64_t epoch_from_civil(int year, int month, int day);

/// Shortest decimal form that parses back to the identical double.
std::string format_double(double value);

std::optional<double> try_parse_double(std::string_view text);
std::optional<std::int64_t> try_parse_int(std::string_view text);

std::string to_lower(std::string_view text);
std::string_view trim(std::string_view text);

}  // namespace debias
