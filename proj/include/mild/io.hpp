// Copyright 2026 The MILD Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Text formats. Tables are comma-separated with a header row, UTF-8, LF line
// endings, reals printed with 9 significant digits. Configs and manifests are
// flat `key = value` files with `#` comments.

#ifndef MILD_IO_HPP_
#define MILD_IO_HPP_

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mild/core.hpp"

namespace mild {

// Nine significant digits, for reports and traces.
std::string format_real(double value);
// Shortest text that parses back to the same double, for data files.
std::string format_exact(double value);

std::vector<std::string> split_csv_line(const std::string& line);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 when absent
};

CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

double parse_real(const std::string& text);
long long parse_integer(const std::string& text);

// label,x_1..x_d[,py_1..py_c]
std::string dataset_to_csv(const Dataset& data);
Dataset dataset_from_csv(const CsvTable& table, int num_classes);

// pred_1..pred_p
std::string predictions_to_csv(const ExpertPanel& panel);
// expert,beta,coverage  (coverage is a space-separated 1-based class list)
std::string experts_to_csv(const ExpertPanel& panel);
ExpertPanel panel_from_csv(const CsvTable& predictions, const CsvTable& experts);

// c_1..c_p; the cost type and normalizer travel in the manifest.
std::string costs_to_csv(const CostTensor& costs);
CostTensor costs_from_csv(const CsvTable& table, CostType type,
                          double normalizer);

class KeyValueFile {
 public:
  static KeyValueFile parse(const std::string& text);
  static KeyValueFile load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_real(const std::string& key, double fallback) const;
  long long get_integer(const std::string& key, long long fallback) const;
  void set(const std::string& key, const std::string& value);
  const std::map<std::string, std::string>& entries() const { return values_; }
  std::string to_string() const;

 private:
  std::map<std::string, std::string> values_;
};

std::string router_to_json(const Router& router);
Router router_from_json(const std::string& text);

}  // namespace mild

#endif  // MILD_IO_HPP_
