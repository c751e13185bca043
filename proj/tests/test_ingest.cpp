#include "doctest.h"

#include <sstream>

#include "debias/ingest.hpp"

using namespace debias;

namespace {

IspPrefixMap test_prefixes() {
  std::istringstream in(
      "cidr,isp,country\n"
      "1.120.0.0/13,Telstra,AU\n"
      "1.120.128.0/17,TelstraBusiness,AU\n"
      "49.176.0.0/12,Optus,AU\n"
      "2001:db8::/32,V6Net,UK\n");
  return IspPrefixMap::read(in);
}

TimezoneTable test_tz() {
  std::istringstream in("region,utc_offset_minutes\nAU-NSW,600\nUK,0\nUS-East,-300\n");
  return TimezoneTable::read(in);
}

constexpr const char* kHeader =
    "ip,timestamp_utc,region,isp_hint,download_mbps,min_rtt_ms,mss_bytes,rwnd_bytes,os,congestion_count,"
    "client_limited_frac\n";

std::string good_row(int i) {
  // 2016-12-01 00:00 UTC plus i hours
  return "1.120.0." + std::to_string(i % 250) + "," + std::to_string(1480550400 + 3600 * i) +
         ",AU-NSW,,24.3,18.5,1460,262144,Linux 3.13," + std::to_string(i % 5) + ",0.05\n";
}

ParseResult parse(const std::string& text) {
  const auto prefixes = test_prefixes();
  const auto tz = test_tz();
  const auto rules = OsRules::defaults();
  std::istringstream in(text);
  return parse_csv_records(in, IngestContext{prefixes, tz, rules});
}

}  // namespace

TEST_CASE("a Telstra row maps onto a record") {
  const auto res = parse(std::string(kHeader) + good_row(0));
  REQUIRE(res.records.size() == 1);
  const auto& r = res.records[0];
  CHECK(r.isp == "Telstra");
  CHECK(r.country == "AU");
  CHECK(r.download_mbps == 24.3);
  CHECK(r.local_hour == 10);
  CHECK(r.os_class == OsClass::ModernAutotuning);
  CHECK(r.year_month() == YearMonth{2016, 12});
}

TEST_CASE("zero speed is rejected") {
  auto row = good_row(0);
  row.replace(row.find("24.3"), 4, "0");
  const auto res = parse(std::string(kHeader) + row);
  CHECK(res.records.empty());
  REQUIRE(res.rejects.size() == 1);
  CHECK(res.rejects[0].reason == "non-positive speed");
  CHECK(res.rejects[0].row == 1);
}

TEST_CASE("100 rows with 7 malformed give 93 records and 7 rejects") {
  std::string text = kHeader;
  const std::vector<std::pair<int, std::string>> bad = {
      {4, "1.120.0.4,1480550400,AU-NSW,,24.3,18.5,1460\n"},
      {17, "1.120.0.x,1480550400,AU-NSW,,24.3,18.5,1460,262144,Linux 3.13,1,0.05\n"},
      {30, "1.120.0.5,1480550400,AU-NSW,,fast,18.5,1460,262144,Linux 3.13,1,0.05\n"},
      {42, "1.120.0.5,1480550400,AU-NSW,,24.3,18.5,1460,262144,,1,0.05\n"},
      {55, "1.120.0.5,1480550400,AU-NSW,,24.3,18.5,1460,262144,\"Linux 3.13,1,0.05\n"},
      {71, "8.8.8.8,1480550400,AU-NSW,,24.3,18.5,1460,262144,Linux 3.13,1,0.05\n"},
      {88, "1.120.0.5,1480550400,AU-NSW,,24.3,18.5,1460,262144,Linux 3.13,1,1.5\n"},
  };
  std::size_t next = 0;
  for (int i = 1; i <= 100; ++i) {
    if (next < bad.size() && bad[next].first == i)
      text += bad[next++].second;
    else
      text += good_row(i);
  }
  const auto res = parse(text);
  CHECK(res.rows == 100);
  CHECK(res.records.size() == 93);
  REQUIRE(res.rejects.size() == 7);
  std::vector<std::size_t> rows;
  for (const auto& r : res.rejects) rows.push_back(r.row);
  CHECK(rows == std::vector<std::size_t>{4, 17, 30, 42, 55, 71, 88});
  CHECK(res.rejects[0].reason.rfind("malformed row", 0) == 0);
  CHECK(res.rejects[3].reason == "sparse record: missing os");
  CHECK(res.rejects[5].reason == "no ISP match");
  CHECK(res.rejects[6].reason == "client_limited_frac out of range");
  // input order preserved
  for (std::size_t i = 1; i < res.records.size(); ++i)
    CHECK(res.records[i - 1].timestamp_utc < res.records[i].timestamp_utc);
}

TEST_CASE("longest prefix wins and IPv6 resolves") {
  const auto m = test_prefixes();
  CHECK(m.resolve("1.120.0.9")->isp == "Telstra");
  CHECK(m.resolve("1.120.200.1")->isp == "TelstraBusiness");
  CHECK(m.resolve("49.180.3.3")->isp == "Optus");
  CHECK(m.resolve("2001:db8:1::7")->country == "UK");
  CHECK_FALSE(m.resolve("10.0.0.1").has_value());
  CHECK_FALSE(m.resolve("not-an-ip").has_value());
  IspPrefixMap bad;
  CHECK_THROWS_AS(bad.add("1.2.3.4/33", "x", "AU"), Error);
}

TEST_CASE("OS classification table") {
  CHECK(classify_os("Linux 3.13") == OsClass::ModernAutotuning);
  CHECK(classify_os("linux 3.4.0") == OsClass::ModernAutotuning);
  CHECK(classify_os("Linux 4.15") == OsClass::ModernAutotuning);
  CHECK(classify_os("Linux 3.2") == OsClass::Other);
  CHECK(classify_os("Linux 2.6.32") == OsClass::Other);
  CHECK(classify_os("Windows XP") == OsClass::LegacyNoAutotuning);
  CHECK(classify_os("WINDOWS xp") == OsClass::LegacyNoAutotuning);
  CHECK(classify_os("Windows 2000") == OsClass::LegacyNoAutotuning);
  CHECK(classify_os("Windows 7") == OsClass::ModernAutotuning);
  CHECK(classify_os("Windows Vista") == OsClass::ModernAutotuning);
  CHECK(classify_os("Mac OS X 10.11") == OsClass::ModernAutotuning);
  CHECK(classify_os("") == OsClass::Other);
  CHECK(classify_os("FreeBSD 11") == OsClass::Other);

  OsRules custom;
  custom.add("^freebsd", OsClass::ModernAutotuning);
  CHECK(custom.classify("FreeBSD 11") == OsClass::ModernAutotuning);
  CHECK(custom.classify("Linux 4.4") == OsClass::Other);
}

TEST_CASE("peak window is [19, 23)") {
  CHECK(is_peak(20));
  CHECK(is_peak(19));
  CHECK(is_peak(22));
  CHECK_FALSE(is_peak(23));
  CHECK_FALSE(is_peak(3));
  CHECK_FALSE(is_peak(18));
  CHECK(local_hour_of(0, -300) == 19);
  CHECK(local_hour_of(3600 * 23, 90) == 0);
}

TEST_CASE("normalized records round-trip bit-exactly") {
  std::string text = kHeader;
  for (int i = 0; i < 40; ++i) text += good_row(i);
  auto res = parse(text);
  res.records[3].download_mbps = 1.0 / 3.0;
  res.records[5].min_rtt_ms = 0.1 + 0.2;
  res.records[7].os_class = OsClass::LegacyNoAutotuning;
  std::stringstream buf;
  write_records(buf, res.records);
  const auto back = read_records(buf);
  CHECK(back == res.records);
}

TEST_CASE("JSON lines input matches CSV input") {
  const auto prefixes = test_prefixes();
  const auto tz = test_tz();
  const auto rules = OsRules::defaults();
  std::istringstream in(
      R"({"ip":"1.120.0.0","timestamp_utc":1480550400,"region":"AU-NSW","download_mbps":24.3,"min_rtt_ms":18.5,"mss_bytes":1460,"rwnd_bytes":262144,"os":"Linux 3.13","congestion_count":0,"client_limited_frac":0.05})"
      "\n{broken\n"
      R"({"ip":"1.120.0.1","timestamp_utc":1480550400,"region":"AU-NSW","download_mbps":24.3,"min_rtt_ms":18.5,"mss_bytes":1460,"rwnd_bytes":262144,"congestion_count":0,"client_limited_frac":0.05})"
      "\n");
  const auto res = parse_jsonl_records(in, IngestContext{prefixes, tz, rules});
  CHECK(res.rows == 3);
  REQUIRE(res.records.size() == 1);
  CHECK(res.records[0] == parse(std::string(kHeader) + good_row(0)).records[0]);
  REQUIRE(res.rejects.size() == 2);
  CHECK(res.rejects[1].reason == "sparse record: missing os");
}

TEST_CASE("unknown region is rejected") {
  auto row = good_row(1);
  row.replace(row.find("AU-NSW"), 6, "Mars");
  const auto res = parse(std::string(kHeader) + row);
  REQUIRE(res.rejects.size() == 1);
  CHECK(res.rejects[0].reason == "unknown region Mars");
}
