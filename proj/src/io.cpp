#include "rerand/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "rerand/error.hpp"

namespace rerand {

namespace {

std::string where(const std::string& source, std::size_t line) {
  return source + ":" + std::to_string(line) + ": ";
}

std::vector<std::string> split_record(std::string_view line, const std::string& source,
                                      std::size_t line_no) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      if (!field.empty() || was_quoted) {
        throw ParseError(where(source, line_no) + "stray quote inside field");
      }
      quoted = true;
      was_quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
      was_quoted = false;
    } else {
      field.push_back(c);
    }
  }
  if (quoted) throw ParseError(where(source, line_no) + "unterminated quoted field");
  fields.push_back(std::move(field));
  for (auto& f : fields) {
    const auto first = f.find_first_not_of(" \t");
    const auto last = f.find_last_not_of(" \t");
    f = first == std::string::npos ? std::string() : f.substr(first, last - first + 1);
  }
  return fields;
}

}  // namespace

std::size_t CsvTable::column(std::string_view name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) {
    throw ParseError(source + ": missing column '" + std::string(name) + "'");
  }
  return static_cast<std::size_t>(it - header.begin());
}

bool CsvTable::has_column(std::string_view name) const {
  return std::find(header.begin(), header.end(), name) != header.end();
}

CsvTable parse_csv(std::string_view text, std::string source) {
  CsvTable table;
  table.source = std::move(source);
  if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool have_header = false;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) {
      if (end == text.size()) break;
      continue;
    }
    auto fields = split_record(line, table.source, line_no);
    if (!have_header) {
      table.header = std::move(fields);
      std::unordered_set<std::string> seen;
      for (const auto& name : table.header) {
        if (name.empty()) throw ParseError(where(table.source, line_no) + "empty column name");
        if (!seen.insert(name).second) {
          throw ParseError(where(table.source, line_no) + "duplicate column '" + name + "'");
        }
      }
      have_header = true;
    } else {
      if (fields.size() != table.header.size()) {
        throw ParseError(where(table.source, line_no) + "expected " +
                         std::to_string(table.header.size()) + " fields, found " +
                         std::to_string(fields.size()));
      }
      table.rows.push_back(std::move(fields));
      table.lines.push_back(line_no);
    }
    if (end == text.size()) break;
  }
  if (!have_header) throw ParseError(table.source + ": empty file");
  return table;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

CsvTable read_csv(const std::filesystem::path& path) {
  return parse_csv(read_file(path), path.string());
}

double parse_number(const CsvTable& table, std::size_t row, std::size_t col) {
  const std::string& field = table.rows[row][col];
  double value = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  if (begin != end && *begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (field.empty() || ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw ParseError(where(table.source, table.lines[row]) + "column '" + table.header[col] +
                     "': not a finite number: '" + field + "'");
  }
  return value;
}

namespace {

std::vector<std::string> unit_ids_of(const CsvTable& table) {
  if (table.header.empty() || table.header.front() != "unit_id") {
    throw ParseError(table.source + ": first column must be 'unit_id'");
  }
  std::vector<std::string> ids;
  ids.reserve(table.rows.size());
  std::unordered_set<std::string> seen;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::string& id = table.rows[r][0];
    if (id.empty()) throw ParseError(where(table.source, table.lines[r]) + "empty unit_id");
    if (!seen.insert(id).second) {
      throw ParseError(where(table.source, table.lines[r]) + "duplicate unit_id '" + id + "'");
    }
    ids.push_back(id);
  }
  return ids;
}

}  // namespace

FinitePopulation population_from_csv(const CsvTable& table) {
  std::vector<std::string> ids = unit_ids_of(table);
  const bool has_y1 = table.has_column("y1");
  const bool has_y0 = table.has_column("y0");
  if (has_y1 != has_y0) {
    throw ParseError(table.source + ": columns y1 and y0 must appear together");
  }
  std::vector<std::size_t> cov_cols;
  std::vector<std::string> names;
  for (std::size_t c = 1; c < table.header.size(); ++c) {
    if (table.header[c] == "y1" || table.header[c] == "y0") continue;
    cov_cols.push_back(c);
    names.push_back(table.header[c]);
  }
  const auto n = static_cast<Eigen::Index>(table.rows.size());
  Matrix x(n, static_cast<Eigen::Index>(cov_cols.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < cov_cols.size(); ++j) {
      x(i, static_cast<Eigen::Index>(j)) =
          parse_number(table, static_cast<std::size_t>(i), cov_cols[j]);
    }
  }
  std::optional<PotentialOutcomes> outcomes;
  if (has_y1) {
    const std::size_t c1 = table.column("y1");
    const std::size_t c0 = table.column("y0");
    Vector y1(n);
    Vector y0(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      y1(i) = parse_number(table, static_cast<std::size_t>(i), c1);
      y0(i) = parse_number(table, static_cast<std::size_t>(i), c0);
    }
    outcomes = PotentialOutcomes{std::move(y1), std::move(y0)};
  }
  return FinitePopulation(std::move(x), std::move(ids), std::move(names), std::move(outcomes));
}

FinitePopulation read_population_csv(const std::filesystem::path& path) {
  return population_from_csv(read_csv(path));
}

LabeledAssignment read_assignment_csv(const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  LabeledAssignment out;
  out.unit_ids = unit_ids_of(table);
  const std::size_t col = table.column("z");
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::string& field = table.rows[r][col];
    if (field != "0" && field != "1") {
      throw ParseError(where(table.source, table.lines[r]) + "column 'z' must be 0 or 1, found '" +
                       field + "'");
    }
    out.z.push_back(field == "1" ? 1 : 0);
  }
  return out;
}

LabeledOutcomes read_outcomes_csv(const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  LabeledOutcomes out;
  out.unit_ids = unit_ids_of(table);
  const std::size_t col = table.column("y");
  for (std::size_t r = 0; r < table.rows.size(); ++r) out.y.push_back(parse_number(table, r, col));
  return out;
}

void write_assignment_csv(std::ostream& out, const std::vector<std::string>& unit_ids,
                          const Assignment& z) {
  out << "unit_id,z\n";
  for (std::size_t i = 0; i < unit_ids.size(); ++i) {
    out << csv_field(unit_ids[i]) << ',' << (z.treated(i) ? '1' : '0') << '\n';
  }
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  (void)ec;
  return std::string(buf, ptr);
}

std::string csv_field(std::string_view text) {
  if (text.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(text);
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace rerand
