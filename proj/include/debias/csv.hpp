#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace debias::csv {

/// Splits one RFC 4180 style line. Returns nullopt on an unterminated quote.
std::optional<std::vector<std::string>> split_line(std::string_view line);

/// Quotes a field only when it contains a separator, quote or newline.
std::string escape(std::string_view field);

void write_row(std::ostream& out, const std::vector<std::string>& fields);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; nullopt when absent.
  std::optional<std::size_t> column(std::string_view name) const;
  /// Column index by name; throws debias::Error when absent.
  std::size_t require(std::string_view name) const;
};

/// Reads a headered CSV; blank lines are skipped. Throws on malformed rows.
Table read_table(std::istream& in);
Table read_table_file(const std::string& path);

}  // namespace debias::csv
