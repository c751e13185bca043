#include "doctest.h"

#include <random>
#include <sstream>

#include "debias/common.hpp"
#include "debias/csv.hpp"
#include "debias/stats.hpp"

using namespace debias;

TEST_CASE("year-month parse, format and order") {
  const auto ym = YearMonth::parse("2016-12");
  CHECK(ym.year == 2016);
  CHECK(ym.month == 12);
  CHECK(ym.str() == "2016-12");
  CHECK(YearMonth{2015, 12} < YearMonth{2016, 1});
  CHECK_THROWS_AS(YearMonth::parse("2016-13"), Error);
  CHECK_THROWS_AS(YearMonth::parse("2016"), Error);
  CHECK_THROWS_AS(YearMonth::parse("2016-x"), Error);
}

TEST_CASE("civil calendar conversion round-trips") {
  CHECK(epoch_from_civil(1970, 1, 1) == 0);
  CHECK(epoch_from_civil(2016, 3, 1) == 1456790400);
  const auto c = civil_from_epoch(1456790400 + 3600 * 5 + 61);
  CHECK(c.year == 2016);
  CHECK(c.month == 3);
  CHECK(c.day == 1);
  CHECK(c.hour == 5);
  const auto before = civil_from_epoch(-1);
  CHECK(before.year == 1969);
  CHECK(before.hour == 23);
}

TEST_CASE("shortest double formatting round-trips bit-exactly") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 2000; ++i) {
    const double v = u(rng) / 7.0;
    const auto back = try_parse_double(format_double(v));
    REQUIRE(back.has_value());
    CHECK(*back == v);
  }
  CHECK(format_double(0.1) == "0.1");
  CHECK_FALSE(try_parse_double("nan").has_value());
  CHECK_FALSE(try_parse_double("1.5x").has_value());
  CHECK(try_parse_int(" 42 ") == 42);
  CHECK_FALSE(try_parse_int("4.2").has_value());
}

TEST_CASE("csv quoting") {
  const auto f = csv::split_line(R"(a,"b,c","d ""q""",)");
  REQUIRE(f.has_value());
  REQUIRE(f->size() == 4);
  CHECK((*f)[1] == "b,c");
  CHECK((*f)[2] == "d \"q\"");
  CHECK((*f)[3].empty());
  CHECK_FALSE(csv::split_line("\"open").has_value());
  CHECK(csv::escape("x,y") == "\"x,y\"");

  std::istringstream in("h1,h2\n1,2\n\n3,4\r\n");
  const auto t = csv::read_table(in);
  CHECK(t.rows.size() == 2);
  CHECK(t.require("h2") == 1);
  CHECK_THROWS_AS(t.require("zz"), Error);
}

TEST_CASE("descriptive statistics") {
  CHECK(stats::median({10, 20, 90}) == 20);
  CHECK(stats::median({10, 20, 30, 40}) == 25);
  const std::vector<double> s = {1, 1, 2, 3, 4, 5, 6, 9};
  CHECK(stats::sorted_quantile(s, 0.25) == doctest::Approx(1.75));
  CHECK(stats::sorted_quantile(s, 0.9) == doctest::Approx(6.9));
  CHECK(stats::sample_variance(std::vector<double>{2, 4, 4, 4, 5, 5, 7, 9}) == doctest::Approx(32.0 / 7.0));
}

TEST_CASE("student t and welch against scipy reference values") {
  CHECK(stats::student_t_critical(0.05, 4) == doctest::Approx(2.7764451051977987).epsilon(1e-12));
  CHECK(stats::student_t_critical(0.01, 10) == doctest::Approx(3.16927267261695).epsilon(1e-12));
  CHECK(stats::welch_p_value(std::vector<double>{1, 2, 3, 4, 5}, std::vector<double>{2, 4, 6, 8, 10, 12}) ==
        doctest::Approx(0.04928433820673049).epsilon(1e-9));
  CHECK(stats::welch_p_value(std::vector<double>{10.1, 9.8, 10.3, 10.0},
                             std::vector<double>{10.2, 9.9, 10.4, 10.1, 9.7}) ==
        doctest::Approx(0.9517548227298908).epsilon(1e-9));
  CHECK(stats::welch_p_value(std::vector<double>{3, 3, 3}, std::vector<double>{3, 3}) == 1.0);
}
