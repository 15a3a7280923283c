#include "simplexts/ingest.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace simplexts {

namespace {

[[noreturn]] void fail(const std::string& what) { throw std::runtime_error(what); }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    // trim surrounding whitespace
    const auto begin = field.find_first_not_of(" \t\r");
    const auto end = field.find_last_not_of(" \t\r");
    fields.push_back(begin == std::string::npos ? "" : field.substr(begin, end - begin + 1));
  }
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

// Sort key for a time label: plain integer, or ISO date YYYY-MM-DD.
long long time_key(const std::string& label, int row) {
  char* end = nullptr;
  const long long as_int = std::strtoll(label.c_str(), &end, 10);
  if (end != nullptr && *end == '\0' && !label.empty()) return as_int;
  int y, m, d;
  if (label.size() == 10 && label[4] == '-' && label[7] == '-' &&
      std::sscanf(label.c_str(), "%d-%d-%d", &y, &m, &d) == 3)
    return static_cast<long long>(y) * 10000 + m * 100 + d;
  std::ostringstream os;
  os << "row " << row << ": time '" << label << "' is neither an integer nor an ISO date";
  fail(os.str());
}

double parse_cell(const std::string& cell, int row, const std::string& column) {
  char* end = nullptr;
  const double value = std::strtod(cell.c_str(), &end);
  if (cell.empty() || end == nullptr || *end != '\0') {
    std::ostringstream os;
    os << "row " << row << ", column '" << column << "': cannot parse '" << cell << "'";
    fail(os.str());
  }
  if (value < 0.0) {
    std::ostringstream os;
    os << "row " << row << ", column '" << column << "': negative count " << value;
    fail(os.str());
  }
  return value;
}

}  // namespace

AbundanceTable load_csv(const std::string& path, const std::string& time_column,
                        const std::vector<std::string>& species_columns) {
  std::ifstream in(path);
  if (!in) fail("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) fail("'" + path + "' is empty");
  const std::vector<std::string> header = split_csv_line(line);

  auto column_index = [&](const std::string& name) -> int {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) fail("column '" + name + "' not found in '" + path + "'");
    return static_cast<int>(it - header.begin());
  };

  const int time_idx = column_index(time_column);
  std::vector<std::string> species = species_columns;
  if (species.empty()) {
    for (const auto& name : header)
      if (name != time_column) species.push_back(name);
  }
  if (species.size() < 2) fail("need at least two species columns");
  std::vector<int> species_idx;
  species_idx.reserve(species.size());
  for (const auto& name : species) species_idx.push_back(column_index(name));

  std::vector<std::string> times;
  std::vector<Eigen::VectorXd> rows;
  long long prev_key = 0;
  int row_number = 0;
  while (std::getline(in, line)) {
    ++row_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (static_cast<int>(fields.size()) < static_cast<int>(header.size())) {
      std::ostringstream os;
      os << "row " << row_number << ": expected " << header.size() << " fields, got "
         << fields.size();
      fail(os.str());
    }
    const std::string& label = fields[time_idx];
    const long long key = time_key(label, row_number);
    if (!times.empty()) {
      if (key == prev_key) fail("row " + std::to_string(row_number) + ": duplicate time '" + label + "'");
      if (key < prev_key) fail("row " + std::to_string(row_number) + ": times out of order at '" + label + "'");
    }
    prev_key = key;
    times.push_back(label);
    Eigen::VectorXd row(species.size());
    for (std::size_t s = 0; s < species.size(); ++s)
      row[s] = parse_cell(fields[species_idx[s]], row_number, species[s]);
    if (row.sum() <= 0.0) fail("row " + std::to_string(row_number) + ": zero row total");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) fail("'" + path + "' has no data rows");

  AbundanceTable table;
  table.times = std::move(times);
  table.species = std::move(species);
  table.counts.resize(rows.size(), table.species.size());
  for (std::size_t r = 0; r < rows.size(); ++r) table.counts.row(r) = rows[r].transpose();
  return table;
}

std::vector<Composition> to_compositions(const AbundanceTable& table,
                                         const ZeroStrategy& strategy) {
  if (table.rows() == 0) fail("to_compositions: empty table");
  const bool any_zero = (table.counts.array() == 0.0).any();
  if (any_zero && strategy.kind == ZeroStrategy::Kind::Reject)
    fail("to_compositions: zero count present; use the additive-epsilon strategy or drop the rows");
  Eigen::MatrixXd counts = table.counts;
  if (any_zero) counts.array() += strategy.epsilon;
  std::vector<Composition> out;
  out.reserve(table.rows());
  for (int r = 0; r < table.rows(); ++r) {
    const double total = counts.row(r).sum();
    if (total <= 0.0) fail("to_compositions: zero row total at row " + std::to_string(r + 1));
    out.emplace_back(counts.row(r).transpose() / total);
  }
  return out;
}

AbundanceTable select_reference(const AbundanceTable& table, const std::string& species_name) {
  const auto it = std::find(table.species.begin(), table.species.end(), species_name);
  if (it == table.species.end()) {
    std::ostringstream os;
    os << "species '" << species_name << "' not found; available:";
    for (const auto& s : table.species) os << " " << s;
    fail(os.str());
  }
  const int idx = static_cast<int>(it - table.species.begin());
  const int d = table.cols();
  if (idx == d - 1) return table;

  AbundanceTable out;
  out.times = table.times;
  out.counts.resize(table.rows(), d);
  int c = 0;
  for (int s = 0; s < d; ++s) {
    if (s == idx) continue;
    out.species.push_back(table.species[s]);
    out.counts.col(c++) = table.counts.col(s);
  }
  out.species.push_back(table.species[idx]);
  out.counts.col(d - 1) = table.counts.col(idx);
  return out;
}

}  // namespace simplexts
