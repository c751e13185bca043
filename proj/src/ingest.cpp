#include "debias/ingest.hpp"

#include <arpa/inet.h>

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <variant>

#include "debias/csv.hpp"
#include "json.hpp"

namespace debias {

std::string_view to_string(OsClass os) {
  switch (os) {
    case OsClass::ModernAutotuning: return "modern";
    case OsClass::LegacyNoAutotuning: return "legacy";
    case OsClass::Other: return "other";
  }
  return "other";
}

OsClass parse_os_class(std::string_view text) {
  const auto t = to_lower(trim(text));
  if (t == "modern" || t == "modernautotuning") return OsClass::ModernAutotuning;
  if (t == "legacy" || t == "legacynoautotuning") return OsClass::LegacyNoAutotuning;
  if (t == "other") return OsClass::Other;
  throw Error("unknown os_class '" + std::string(text) + "'");
}

YearMonth TestRecord::year_month() const {
  const auto c = civil_from_epoch(local_time());
  return YearMonth{c.year, c.month};
}

int TestRecord::day_of_month() const { return civil_from_epoch(local_time()).day; }

int local_hour_of(std::int64_t timestamp_utc, int utc_offset_minutes) {
  return civil_from_epoch(timestamp_utc + std::int64_t{utc_offset_minutes} * 60).hour;
}

// ---------------------------------------------------------------------------
// Prefix map

std::optional<IpAddress> IpAddress::parse(std::string_view text) {
  const std::string s(trim(text));
  IpAddress ip;
  if (s.find(':') != std::string::npos) {
    ip.v6 = true;
    if (inet_pton(AF_INET6, s.c_str(), ip.bytes.data()) != 1) return std::nullopt;
  } else {
    if (inet_pton(AF_INET, s.c_str(), ip.bytes.data()) != 1) return std::nullopt;
  }
  return ip;
}

namespace {

std::string masked_key(const IpAddress& ip, int prefix) {
  const int nbytes = ip.bit_width() / 8;
  std::string key(static_cast<std::size_t>(nbytes), '\0');
  for (int i = 0; i < nbytes; ++i) {
    const int bits = std::clamp(prefix - i * 8, 0, 8);
    const auto mask = static_cast<std::uint8_t>(bits == 0 ? 0 : (0xFF << (8 - bits)) & 0xFF);
    key[static_cast<std::size_t>(i)] = static_cast<char>(ip.bytes[static_cast<std::size_t>(i)] & mask);
  }
  return key;
}

}  // namespace

void IspPrefixMap::add(std::string_view cidr, std::string isp, std::string country) {
  cidr = trim(cidr);
  const auto slash = cidr.find('/');
  const auto ip = IpAddress::parse(cidr.substr(0, slash));
  if (!ip) throw Error("bad CIDR '" + std::string(cidr) + "'");
  int prefix = ip->bit_width();
  if (slash != std::string_view::npos) {
    const auto p = try_parse_int(cidr.substr(slash + 1));
    if (!p || *p < 0 || *p > ip->bit_width()) throw Error("bad CIDR '" + std::string(cidr) + "'");
    prefix = static_cast<int>(*p);
  }
  auto& bucket = tables_[ip->v6 ? 1 : 0][prefix];
  const auto [it, inserted] = bucket.insert_or_assign(masked_key(*ip, prefix), Entry{std::move(isp), std::move(country)});
  (void)it;
  if (inserted) ++count_;
}

std::optional<IspPrefixMap::Entry> IspPrefixMap::resolve(std::string_view ip) const {
  const auto parsed = IpAddress::parse(ip);
  if (!parsed) return std::nullopt;
  return resolve(*parsed);
}

std::optional<IspPrefixMap::Entry> IspPrefixMap::resolve(const IpAddress& ip) const {
  for (const auto& [prefix, bucket] : tables_[ip.v6 ? 1 : 0]) {
    const auto it = bucket.find(masked_key(ip, prefix));
    if (it != bucket.end()) return it->second;
  }
  return std::nullopt;
}

IspPrefixMap IspPrefixMap::read(std::istream& in) {
  const auto t = csv::read_table(in);
  const auto c_cidr = t.require("cidr"), c_isp = t.require("isp"), c_country = t.require("country");
  IspPrefixMap map;
  for (const auto& row : t.rows)
    map.add(row[c_cidr], std::string(trim(row[c_isp])), std::string(trim(row[c_country])));
  return map;
}

IspPrefixMap IspPrefixMap::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open prefix map " + path);
  return read(in);
}

// ---------------------------------------------------------------------------
// Timezones

void TimezoneTable::add(std::string region, int utc_offset_minutes) {
  offsets_.insert_or_assign(std::move(region), utc_offset_minutes);
}

std::optional<int> TimezoneTable::offset(std::string_view region) const {
  const auto it = offsets_.find(region);
  if (it == offsets_.end()) return std::nullopt;
  return it->second;
}

TimezoneTable TimezoneTable::read(std::istream& in) {
  const auto t = csv::read_table(in);
  const auto c_region = t.require("region"), c_off = t.require("utc_offset_minutes");
  TimezoneTable tz;
  for (const auto& row : t.rows) {
    const auto off = try_parse_int(row[c_off]);
    if (!off || *off < -24 * 60 || *off > 24 * 60) throw Error("bad utc offset for region " + row[c_region]);
    tz.add(std::string(trim(row[c_region])), static_cast<int>(*off));
  }
  return tz;
}

TimezoneTable TimezoneTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open timezone table " + path);
  return read(in);
}

// ---------------------------------------------------------------------------
// OS classification

OsRules OsRules::defaults() {
  OsRules r;
  r.add(R"(^\s*(microsoft\s+)?windows\b.*\b(95|98|me|2000|xp|2003|nt\s*4\.0|nt\s*5\.[0-2])\b)",
        OsClass::LegacyNoAutotuning);
  r.add(R"(^\s*(microsoft\s+)?windows\b.*\b(vista|7|8|8\.1|10|11|nt\s*6\.[0-3]|nt\s*10\.0|server\s*20(08|12|16|19|22))\b)",
        OsClass::ModernAutotuning);
  r.add(R"(^\s*(mac\s*os|macos|os\s*x|darwin))", OsClass::ModernAutotuning);
  r.add(R"(^\s*linux[\s/_-]*v?(3\.([4-9]|[1-9]\d)|[4-9]\.\d+|[1-9]\d+\.\d+))", OsClass::ModernAutotuning);
  return r;
}

OsRules OsRules::load(const std::string& path) {
  const auto t = csv::read_table_file(path);
  const auto c_pat = t.require("pattern"), c_os = t.require("os_class");
  OsRules r;
  for (const auto& row : t.rows) r.add(row[c_pat], parse_os_class(row[c_os]));
  return r;
}

void OsRules::add(const std::string& pattern, OsClass os) {
  try {
    rules_.push_back(Rule{pattern, std::regex(pattern, std::regex::ECMAScript | std::regex::icase), os});
  } catch (const std::regex_error& e) {
    throw Error("bad OS pattern '" + pattern + "': " + e.what());
  }
}

OsClass OsRules::classify(std::string_view os_string) const {
  const std::string s(os_string);
  for (const auto& rule : rules_)
    if (std::regex_search(s, rule.re)) return rule.os;
  return OsClass::Other;
}

OsClass classify_os(std::string_view os_string) {
  static const OsRules rules = OsRules::defaults();
  return rules.classify(os_string);
}

// ---------------------------------------------------------------------------
// Raw record parsing

namespace {

constexpr std::array<std::string_view, 10> kRequired = {
    "ip", "timestamp_utc", "region", "download_mbps", "min_rtt_ms",
    "mss_bytes", "rwnd_bytes", "os", "congestion_count", "client_limited_frac"};

using RawRow = std::map<std::string, std::string, std::less<>>;

class Converter {
 public:
  explicit Converter(const IngestContext& ctx) : ctx_(ctx) {}

  std::variant<TestRecord, std::string> operator()(const RawRow& raw) {
    for (auto field : kRequired) {
      const auto it = raw.find(field);
      if (it == raw.end() || trim(it->second).empty()) return "sparse record: missing " + std::string(field);
    }
    auto get = [&](std::string_view f) -> std::string_view { return trim(raw.find(f)->second); };

    TestRecord r;
    const auto ip = IpAddress::parse(get("ip"));
    if (!ip) return std::string("malformed row: bad ip");
    r.client_ip = std::string(get("ip"));

    const auto ts = try_parse_int(get("timestamp_utc"));
    if (!ts) return std::string("malformed row: bad timestamp_utc");
    r.timestamp_utc = *ts;

    const auto speed = try_parse_double(get("download_mbps"));
    if (!speed) return std::string("malformed row: bad download_mbps");
    const auto rtt = try_parse_double(get("min_rtt_ms"));
    if (!rtt) return std::string("malformed row: bad min_rtt_ms");
    const auto mss = try_parse_int(get("mss_bytes"));
    if (!mss) return std::string("malformed row: bad mss_bytes");
    const auto rwnd = try_parse_int(get("rwnd_bytes"));
    if (!rwnd) return std::string("malformed row: bad rwnd_bytes");
    const auto cong = try_parse_int(get("congestion_count"));
    if (!cong) return std::string("malformed row: bad congestion_count");
    const auto clf = try_parse_double(get("client_limited_frac"));
    if (!clf) return std::string("malformed row: bad client_limited_frac");

    if (*speed <= 0.0) return std::string("non-positive speed");
    if (*rtt < 0.0) return std::string("negative min_rtt_ms");
    if (*mss <= 0) return std::string("non-positive mss_bytes");
    if (*rwnd <= 0) return std::string("non-positive rwnd_bytes");
    if (*cong < 0) return std::string("negative congestion_count");
    if (*clf < 0.0 || *clf > 1.0) return std::string("client_limited_frac out of range");
    r.download_mbps = *speed;
    r.min_rtt_ms = *rtt;
    r.mss_bytes = *mss;
    r.rwnd_bytes = *rwnd;
    r.congestion_count = *cong;
    r.client_limited_frac = *clf;

    const auto region = get("region");
    const auto offset = ctx_.timezones.offset(region);
    if (!offset) return "unknown region " + std::string(region);
    r.utc_offset_minutes = *offset;
    r.local_hour = local_hour_of(r.timestamp_utc, r.utc_offset_minutes);

    const auto entry = ctx_.prefixes.resolve(*ip);
    if (!entry) return std::string("no ISP match");
    r.isp = entry->isp;
    r.country = entry->country;

    const std::string os(get("os"));
    auto cached = os_cache_.find(os);
    if (cached == os_cache_.end()) cached = os_cache_.emplace(os, ctx_.os_rules.classify(os)).first;
    r.os_class = cached->second;
    return r;
  }

 private:
  const IngestContext& ctx_;
  std::unordered_map<std::string, OsClass> os_cache_;
};

void accept(ParseResult& out, std::size_t row, std::variant<TestRecord, std::string>&& v) {
  if (auto* rec = std::get_if<TestRecord>(&v))
    out.records.push_back(std::move(*rec));
  else
    out.rejects.push_back(RejectEntry{row, std::get<std::string>(std::move(v))});
}

}  // namespace

ParseResult parse_csv_records(std::istream& in, const IngestContext& ctx) {
  ParseResult out;
  Converter convert(ctx);
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto fields = csv::split_line(line);
    if (header.empty()) {
      if (!fields) throw Error("unreadable CSV header");
      for (auto& f : *fields) header.push_back(std::string(trim(f)));
      for (auto req : kRequired)
        if (std::find(header.begin(), header.end(), req) == header.end())
          throw Error("input header lacks required column '" + std::string(req) + "'");
      continue;
    }
    const std::size_t row = ++out.rows;
    if (!fields) {
      out.rejects.push_back({row, "malformed row: unterminated quote"});
      continue;
    }
    if (fields->size() != header.size()) {
      out.rejects.push_back({row, "malformed row: expected " + std::to_string(header.size()) + " fields, got " +
                                      std::to_string(fields->size())});
      continue;
    }
    RawRow raw;
    for (std::size_t i = 0; i < header.size(); ++i) raw.emplace(header[i], std::move((*fields)[i]));
    accept(out, row, convert(raw));
  }
  if (header.empty()) throw Error("empty input");
  return out;
}

ParseResult parse_jsonl_records(std::istream& in, const IngestContext& ctx) {
  ParseResult out;
  Converter convert(ctx);
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const std::size_t row = ++out.rows;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      out.rejects.push_back({row, "malformed row: not a JSON object"});
      continue;
    }
    RawRow raw;
    for (const auto& [key, value] : j.items()) {
      if (value.is_null()) continue;
      raw.emplace(key, value.is_string() ? value.get<std::string>() : value.dump());
    }
    accept(out, row, convert(raw));
  }
  return out;
}

ParseResult parse_records(const std::string& path, const IngestContext& ctx) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  const auto ends_with = [&](std::string_view suffix) {
    return path.size() >= suffix.size() && path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  bool json = ends_with(".jsonl") || ends_with(".ndjson") || ends_with(".json");
  if (!json) {
    char c = 0;
    while (in.get(c) && std::isspace(static_cast<unsigned char>(c))) {
    }
    json = in && c == '{';
    in.clear();
    in.seekg(0);
  }
  return json ? parse_jsonl_records(in, ctx) : parse_csv_records(in, ctx);
}

void write_rejects(std::ostream& out, std::span<const RejectEntry> rejects) {
  out << "row,reason\n";
  for (const auto& r : rejects) csv::write_row(out, {std::to_string(r.row), r.reason});
}

// ---------------------------------------------------------------------------
// Normalized record files

void write_records(std::ostream& out, std::span<const TestRecord> records) {
  out << kRecordHeader << '\n';
  for (const auto& r : records) {
    csv::write_row(out, {r.client_ip, std::to_string(r.timestamp_utc), std::to_string(r.utc_offset_minutes),
                         std::to_string(r.local_hour), r.isp, r.country, format_double(r.download_mbps),
                         format_double(r.min_rtt_ms), std::to_string(r.mss_bytes), std::to_string(r.rwnd_bytes),
                         std::string(to_string(r.os_class)), std::to_string(r.congestion_count),
                         format_double(r.client_limited_frac)});
  }
}

void write_records_file(const std::string& path, std::span<const TestRecord> records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  write_records(out, records);
}

std::vector<TestRecord> read_records(std::istream& in) {
  const auto t = csv::read_table(in);
  const auto c_ip = t.require("ip"), c_ts = t.require("timestamp_utc"), c_off = t.require("utc_offset_minutes"),
             c_hour = t.require("local_hour"), c_isp = t.require("isp"), c_country = t.require("country"),
             c_speed = t.require("download_mbps"), c_rtt = t.require("min_rtt_ms"), c_mss = t.require("mss_bytes"),
             c_rwnd = t.require("rwnd_bytes"), c_os = t.require("os_class"), c_cong = t.require("congestion_count"),
             c_clf = t.require("client_limited_frac");
  std::vector<TestRecord> out;
  out.reserve(t.rows.size());
  std::size_t rowno = 0;
  for (const auto& row : t.rows) {
    ++rowno;
    auto fail = [&](const char* what) {
      return Error("records row " + std::to_string(rowno) + ": bad " + what);
    };
    TestRecord r;
    r.client_ip = row[c_ip];
    r.isp = row[c_isp];
    r.country = row[c_country];
    const auto ts = try_parse_int(row[c_ts]);
    const auto off = try_parse_int(row[c_off]);
    const auto hour = try_parse_int(row[c_hour]);
    const auto speed = try_parse_double(row[c_speed]);
    const auto rtt = try_parse_double(row[c_rtt]);
    const auto mss = try_parse_int(row[c_mss]);
    const auto rwnd = try_parse_int(row[c_rwnd]);
    const auto cong = try_parse_int(row[c_cong]);
    const auto clf = try_parse_double(row[c_clf]);
    if (!ts) throw fail("timestamp_utc");
    if (!off) throw fail("utc_offset_minutes");
    if (!hour || *hour < 0 || *hour > 23) throw fail("local_hour");
    if (!speed || *speed <= 0) throw fail("download_mbps");
    if (!rtt || *rtt < 0) throw fail("min_rtt_ms");
    if (!mss || *mss <= 0) throw fail("mss_bytes");
    if (!rwnd || *rwnd <= 0) throw fail("rwnd_bytes");
    if (!cong || *cong < 0) throw fail("congestion_count");
    if (!clf || *clf < 0 || *clf > 1) throw fail("client_limited_frac");
    r.timestamp_utc = *ts;
    r.utc_offset_minutes = static_cast<int>(*off);
    r.local_hour = static_cast<int>(*hour);
    r.download_mbps = *speed;
    r.min_rtt_ms = *rtt;
    r.mss_bytes = *mss;
    r.rwnd_bytes = *rwnd;
    r.os_class = parse_os_class(row[c_os]);
    r.congestion_count = *cong;
    r.client_limited_frac = *clf;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<TestRecord> read_records_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open records file " + path);
  return read_records(in);
}

}  // namespace debias
