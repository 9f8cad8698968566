#pragma once

// CSV input/output for time series: first row ROI labels, one timestamp per
// subsequent row. Stored transposed (ROIs as rows) in memory.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "smcgcn/error.hpp"
#include "smcgcn/signal_ingest.hpp"

namespace smcgcn::csv {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = line.find(',', pos);
    out.push_back(line.substr(pos, comma == std::string_view::npos ? std::string_view::npos
                                                                   : comma - pos));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

// Formats a double so that parsing it back yields the same bits.
inline std::string format_exact(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline TimeSeries parse_time_series(std::istream& in, const std::string& source = "<input>") {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) break;
  }
  if (trim(line).empty()) throw InputError(source + ": empty file");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
  for (auto f : split_fields(line)) labels.emplace_back(trim(f));
  const std::size_t cols = labels.size();
  for (std::size_t c = 0; c < cols; ++c)
    if (labels[c].empty())
      throw InputError(source + ": empty ROI label in column " + std::to_string(c + 1));

  std::vector<double> data;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != cols)
      throw InputError(source + ": row " + std::to_string(line_no) + " has " +
                       std::to_string(fields.size()) + " fields, expected " + std::to_string(cols));
    for (std::size_t c = 0; c < cols; ++c) {
      double v = 0.0;
      if (!parse_double(fields[c], v) || !std::isfinite(v))
        throw InputError(source + ": row " + std::to_string(line_no) + ", column " +
                         std::to_string(c + 1) + ": not a finite number '" +
                         std::string(trim(fields[c])) + "'");
      data.push_back(v);
    }
    ++rows;
  }
  if (rows == 0) throw InputError(source + ": no data rows");

  TimeSeries ts;
  ts.roi_labels = std::move(labels);
  ts.values.resize(static_cast<Index>(cols), static_cast<Index>(rows));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      ts.values(static_cast<Index>(c), static_cast<Index>(r)) = data[r * cols + c];
  ts.validate();
  return ts;
}

inline TimeSeries read_time_series(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  return parse_time_series(in, path);
}

inline void write_time_series(std::ostream& out, const TimeSeries& ts) {
  for (std::size_t c = 0; c < ts.roi_labels.size(); ++c)
    out << (c ? "," : "") << ts.roi_labels[c];
  out << '\n';
  for (Index t = 0; t < ts.length(); ++t) {
    for (Index r = 0; r < ts.rois(); ++r) out << (r ? "," : "") << format_exact(ts.values(r, t));
    out << '\n';
  }
}

inline void write_time_series(const std::string& path, const TimeSeries& ts) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  write_time_series(out, ts);
}

// Square matrix with ROI labels as header row.
inline void write_matrix(const std::string& path, const Matrix& m,
                         const std::vector<std::string>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  for (std::size_t c = 0; c < labels.size(); ++c) out << (c ? "," : "") << labels[c];
  out << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << format_exact(m(i, j));
    out << '\n';
  }
}

}  // namespace smcgcn::csv
