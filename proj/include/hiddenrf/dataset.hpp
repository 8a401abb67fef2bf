/*
 * Copyright 2026 The hiddenrf Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef HIDDENRF_DATASET_HPP_
#define HIDDENRF_DATASET_HPP_

#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "hiddenrf/common.hpp"

namespace hiddenrf {

/// Row-major table of numeric features plus one numeric response.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::size_t cols, std::vector<double> features,
          std::vector<double> response, std::vector<std::string> names = {})
      : cols_(cols),
        features_(std::move(features)),
        response_(std::move(response)),
        names_(std::move(names)) {
    if (names_.empty()) names_ = default_names(cols_);
    validate();
  }

  static std::vector<std::string> default_names(std::size_t cols) {
    std::vector<std::string> names;
    names.reserve(cols);
    for (std::size_t j = 0; j < cols; ++j) names.push_back("x" + std::to_string(j + 1));
    return names;
  }

  std::size_t rows() const noexcept { return response_.size(); }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return response_.empty(); }

  std::span<const double> row(std::size_t i) const {
    return {features_.data() + i * cols_, cols_};
  }
  double at(std::size_t i, std::size_t j) const { return features_[i * cols_ + j]; }
  double& at(std::size_t i, std::size_t j) { return features_[i * cols_ + j]; }

  std::span<const double> response() const noexcept { return response_; }
  std::span<const double> features() const noexcept { return features_; }
  const std::vector<std::string>& column_names() const noexcept { return names_; }

  std::vector<double> column(std::size_t j) const {
    std::vector<double> out(rows());
    for (std::size_t i = 0; i < rows(); ++i) out[i] = at(i, j);
    return out;
  }

  /// Rows selected by index, in the given order.
  Dataset subset(std::span<const std::size_t> indices) const {
    std::vector<double> f;
    std::vector<double> y;
    f.reserve(indices.size() * cols_);
    y.reserve(indices.size());
    for (std::size_t i : indices) {
      const auto r = row(i);
      f.insert(f.end(), r.begin(), r.end());
      y.push_back(response_[i]);
    }
    return Dataset(cols_, std::move(f), std::move(y), names_);
  }

  bool operator==(const Dataset&) const = default;

 private:
  void validate() const {
    if (cols_ == 0) throw DomainError("dataset needs at least one feature column");
    if (response_.empty()) throw DomainError("dataset needs at least one row");
    if (features_.size() != response_.size() * cols_)
      throw DomainError("feature matrix size does not match rows x cols");
    if (names_.size() != cols_) throw DomainError("column name count does not match cols");
    for (double v : features_)
      if (!std::isfinite(v)) throw DomainError("non-finite feature value");
    for (double v : response_)
      if (!std::isfinite(v)) throw DomainError("non-finite response value");
  }

  std::size_t cols_ = 0;
  std::vector<double> features_;
  std::vector<double> response_;
  std::vector<std::string> names_;
};

/// Shortest decimal string that parses back to exactly `v`.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw IoError("cannot parse number '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

/// CSV with header `x1,...,xd,y`; the last column is the response.
inline void write_csv(std::ostream& os, const Dataset& data) {
  for (const auto& name : data.column_names()) os << name << ',';
  os << "y\n";
  std::string line;
  for (std::size_t i = 0; i < data.rows(); ++i) {
    line.clear();
    for (double v : data.row(i)) {
      line += format_double(v);
      line += ',';
    }
    line += format_double(data.response()[i]);
    line += '\n';
    os << line;
  }
}

inline Dataset read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty CSV input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  if (header.size() < 2) throw IoError("CSV header needs at least one feature and y");
  std::vector<std::string> names;
  for (std::size_t j = 0; j + 1 < header.size(); ++j) names.emplace_back(header[j]);
  const std::size_t cols = names.size();

  std::vector<double> features;
  std::vector<double> response;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != cols + 1)
      throw IoError("CSV line " + std::to_string(line_no) + " has " +
                    std::to_string(fields.size()) + " fields, expected " +
                    std::to_string(cols + 1));
    for (std::size_t j = 0; j < cols; ++j) features.push_back(parse_double(fields[j]));
    response.push_back(parse_double(fields[cols]));
  }
  try {
    return Dataset(cols, std::move(features), std::move(response), std::move(names));
  } catch (const DomainError& e) {
    throw IoError(std::string("invalid CSV dataset: ") + e.what());
  }
}

inline void save_csv(const std::string& path, const Dataset& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  write_csv(os, data);
  if (!os) throw IoError("write failed for '" + path + "'");
}

inline Dataset load_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  return read_csv(is);
}

}  // namespace hiddenrf

#endif  // HIDDENRF_DATASET_HPP_
