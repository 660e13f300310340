#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "rerand/design.hpp"
#include "rerand/population.hpp"

namespace rerand {

struct CsvTable {
  std::string source;  // file name used in error messages
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> lines;  // 1-based source line of each row

  std::size_t column(std::string_view name) const;  // throws ParseError if absent
  bool has_column(std::string_view name) const;
};

/// Comma-separated text with a header row. Fields may be double-quoted, with
/// "" as an escaped quote. Blank lines are skipped; every row must have as
/// many fields as the header.
CsvTable parse_csv(std::string_view text, std::string source);
CsvTable read_csv(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);

/// Strict decimal parse of a whole field; ParseError names source, line and column.
double parse_number(const CsvTable& table, std::size_t row, std::size_t col);

/// unit_id first, numeric covariates after; y1 and y0 (both or neither) are
/// read as potential outcomes wherever they appear.
FinitePopulation population_from_csv(const CsvTable& table);
FinitePopulation read_population_csv(const std::filesystem::path& path);

struct LabeledAssignment {
  std::vector<std::string> unit_ids;
  std::vector<std::uint8_t> z;
};
LabeledAssignment read_assignment_csv(const std::filesystem::path& path);

struct LabeledOutcomes {
  std::vector<std::string> unit_ids;
  std::vector<double> y;
};
LabeledOutcomes read_outcomes_csv(const std::filesystem::path& path);

void write_assignment_csv(std::ostream& out, const std::vector<std::string>& unit_ids,
                          const Assignment& z);

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double value);

/// Quotes a field only when it contains a comma, quote or line break.
std::string csv_field(std::string_view text);

}  // namespace rerand
