#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "debias/common.hpp"

namespace debias {

/// Whether the client OS performs TCP receive-window auto-tuning.
enum class OsClass : std::uint8_t { ModernAutotuning = 0, LegacyNoAutotuning = 1, Other = 2 };

std::string_view to_string(OsClass os);
/// Accepts "modern", "legacy", "other" (case-insensitive).
OsClass parse_os_class(std::string_view text);

/// Peak hours are the half-open local interval [19:00, 23:00).
constexpr bool is_peak(int local_hour) { return local_hour >= 19 && local_hour < 23; }

/// One normalized speed-test observation.
struct TestRecord {
  std::string client_ip;
  std::int64_t timestamp_utc = 0;
  int utc_offset_minutes = 0;
  int local_hour = 0;
  std::string isp;
  std::string country;
  double download_mbps = 0.0;
  double min_rtt_ms = 0.0;
  std::int64_t mss_bytes = 0;
  std::int64_t rwnd_bytes = 0;
  OsClass os_class = OsClass::Other;
  std::int64_t congestion_count = 0;
  double client_limited_frac = 0.0;

  bool operator==(const TestRecord&) const = default;

  std::int64_t local_time() const { return timestamp_utc + std::int64_t{utc_offset_minutes} * 60; }
  YearMonth year_month() const;
  int day_of_month() const;
  bool peak() const { return is_peak(local_hour); }
};

/// Local hour for a UTC timestamp under a fixed offset.
int local_hour_of(std::int64_t timestamp_utc, int utc_offset_minutes);

struct IpAddress {
  bool v6 = false;
  std::array<std::uint8_t, 16> bytes{};

  static std::optional<IpAddress> parse(std::string_view text);
  int bit_width() const { return v6 ? 128 : 32; }
};

/// Static longest-prefix-wins CIDR map standing in for a Whois lookup.
class IspPrefixMap {
 public:
  struct Entry {
    std::string isp;
    std::string country;
  };

  /// Throws debias::Error on a malformed CIDR.
  void add(std::string_view cidr, std::string isp, std::string country);
  std::optional<Entry> resolve(std::string_view ip) const;
  std::optional<Entry> resolve(const IpAddress& ip) const;
  std::size_t size() const { return count_; }

  /// CSV with header `cidr,isp,country`.
  static IspPrefixMap load(const std::string& path);
  static IspPrefixMap read(std::istream& in);

 private:
  // [family][prefix length] -> masked address bytes -> entry
  std::array<std::map<int, std::unordered_map<std::string, Entry>, std::greater<>>, 2> tables_;
  std::size_t count_ = 0;
};

/// Flat region -> UTC offset table (no daylight saving).
class TimezoneTable {
 public:
  void add(std::string region, int utc_offset_minutes);
  std::optional<int> offset(std::string_view region) const;

  /// CSV with header `region,utc_offset_minutes`.
  static TimezoneTable load(const std::string& path);
  static TimezoneTable read(std::istream& in);

 private:
  std::map<std::string, int, std::less<>> offsets_;
};

/// Ordered OS-string rules; the first matching pattern wins, unmatched strings are Other.
class OsRules {
 public:
  static OsRules defaults();
  /// CSV with header `pattern,os_class`; patterns are case-insensitive ECMAScript regexes.
  static OsRules load(const std::string& path);

  void add(const std::string& pattern, OsClass os);
  OsClass classify(std::string_view os_string) const;

 private:
  struct Rule {
    std::string pattern;
    std::regex re;
    OsClass os;
  };
  std::vector<Rule> rules_;
};

/// Classification under the built-in rule table.
OsClass classify_os(std::string_view os_string);

struct RejectEntry {
  std::size_t row = 0;  // 1-based data row (header excluded)
  std::string reason;
};

struct ParseResult {
  std::vector<TestRecord> records;
  std::vector<RejectEntry> rejects;
  std::size_t rows = 0;
};

struct IngestContext {
  const IspPrefixMap& prefixes;
  const TimezoneTable& timezones;
  const OsRules& os_rules;
};

/// Raw export as headered CSV. Rows that violate the record invariants are rejected, not thrown.
ParseResult parse_csv_records(std::istream& in, const IngestContext& ctx);
/// Raw export as one JSON object per line.
ParseResult parse_jsonl_records(std::istream& in, const IngestContext& ctx);
/// Dispatches on extension (.jsonl/.ndjson/.json) or on a leading '{'.
ParseResult parse_records(const std::string& path, const IngestContext& ctx);

void write_rejects(std::ostream& out, std::span<const RejectEntry> rejects);

/// Normalized record files written by `ingest` and `synth`; fields round-trip bit-exactly.
inline constexpr std::string_view kRecordHeader =
    "ip,timestamp_utc,utc_offset_minutes,local_hour,isp,country,download_mbps,min_rtt_ms,"
    "mss_bytes,rwnd_bytes,os_class,congestion_count,client_limited_frac";

void write_records(std::ostream& out, std::span<const TestRecord> records);
void write_records_file(const std::string& path, std::span<const TestRecord> records);
std::vector<TestRecord> read_records(std::istream& in);
std::vector<TestRecord> read_records_file(const std::string& path);

}  // namespace debias
