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

#include "mild/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mild {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

void require_width(const CsvTable& table, std::size_t width,
                   const std::string& what) {
  for (const auto& row : table.rows)
    if (row.size() != width)
      throw InvalidInput(what + ": row width does not match header");
}

}  // namespace

std::string format_real(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", value);
  return buf;
}

std::string format_exact(double value) {
  char buf[32];
  const auto result = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, result.ptr);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  return -1;
}

CsvTable parse_csv(const std::string& text) {
  CsvTable table;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      table.header = split_csv_line(line);
      first = false;
    } else {
      table.rows.push_back(split_csv_line(line));
    }
  }
  if (first) throw InvalidInput("csv: missing header row");
  return table;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("cannot write " + path.string());
  out << text;
  if (!out) throw InvalidInput("write failed for " + path.string());
}

CsvTable read_csv(const std::filesystem::path& path) {
  return parse_csv(read_text(path));
}

double parse_real(const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw InvalidInput("bad real: " + text);
    return v;
  } catch (const std::logic_error&) {
    throw InvalidInput("bad real: " + text);
  }
}

long long parse_integer(const std::string& text) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used != text.size()) throw InvalidInput("bad integer: " + text);
    return v;
  } catch (const std::logic_error&) {
    throw InvalidInput("bad integer: " + text);
  }
}

std::string dataset_to_csv(const Dataset& data) {
  std::ostringstream out;
  out << "label";
  for (int j = 0; j < data.dim(); ++j) out << ",x_" << (j + 1);
  if (data.conditional_label_dist)
    for (int y = 0; y < data.num_classes; ++y) out << ",py_" << (y + 1);
  out << '\n';
  for (int i = 0; i < data.size(); ++i) {
    out << data.labels[static_cast<std::size_t>(i)];
    for (int j = 0; j < data.dim(); ++j)
      out << ',' << format_exact(data.features(i, j));
    if (data.conditional_label_dist)
      for (int y = 0; y < data.num_classes; ++y)
        out << ',' << format_exact((*data.conditional_label_dist)(i, y));
    out << '\n';
  }
  return out.str();
}

Dataset dataset_from_csv(const CsvTable& table, int num_classes) {
  if (table.column("label") != 0)
    throw InvalidInput("dataset csv: first column must be label");
  require_width(table, table.header.size(), "dataset csv");
  int dim = 0;
  int dist_cols = 0;
  for (std::size_t c = 1; c < table.header.size(); ++c) {
    if (table.header[c].rfind("x_", 0) == 0) ++dim;
    else if (table.header[c].rfind("py_", 0) == 0) ++dist_cols;
    else throw InvalidInput("dataset csv: unknown column " + table.header[c]);
  }
  Dataset data;
  const auto m = static_cast<Eigen::Index>(table.rows.size());
  data.features.resize(m, dim);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& row = table.rows[static_cast<std::size_t>(i)];
    data.labels.push_back(static_cast<int>(parse_integer(row[0])));
    for (int j = 0; j < dim; ++j)
      data.features(i, j) = parse_real(row[static_cast<std::size_t>(1 + j)]);
  }
  if (num_classes <= 0) {
    num_classes = dist_cols > 0 ? dist_cols : 0;
    for (int y : data.labels) num_classes = std::max(num_classes, y);
  }
  data.num_classes = num_classes;
  if (dist_cols > 0) {
    if (dist_cols != num_classes)
      throw InvalidInput("dataset csv: py columns must match num_classes");
    Matrix dist(m, dist_cols);
    for (Eigen::Index i = 0; i < m; ++i)
      for (int y = 0; y < dist_cols; ++y)
        dist(i, y) = parse_real(
            table.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(1 + dim + y)]);
    data.conditional_label_dist = std::move(dist);
  }
  data.validate();
  return data;
}

std::string predictions_to_csv(const ExpertPanel& panel) {
  std::ostringstream out;
  for (int k = 0; k < panel.predictions.cols(); ++k)
    out << (k ? "," : "") << "pred_" << (k + 1);
  out << '\n';
  for (Eigen::Index i = 0; i < panel.predictions.rows(); ++i) {
    for (Eigen::Index k = 0; k < panel.predictions.cols(); ++k)
      out << (k ? "," : "") << panel.predictions(i, k);
    out << '\n';
  }
  return out.str();
}

std::string experts_to_csv(const ExpertPanel& panel) {
  std::ostringstream out;
  out << "expert,beta,coverage\n";
  for (int k = 0; k < panel.num_experts(); ++k) {
    out << (k + 1) << ',' << format_exact(panel.beta(k)) << ',';
    if (static_cast<std::size_t>(k) < panel.coverage.size()) {
      const auto& classes = panel.coverage[static_cast<std::size_t>(k)];
      for (std::size_t c = 0; c < classes.size(); ++c)
        out << (c ? " " : "") << classes[c];
    }
    out << '\n';
  }
  return out.str();
}

ExpertPanel panel_from_csv(const CsvTable& predictions,
                           const CsvTable& experts) {
  const auto p = static_cast<Eigen::Index>(predictions.header.size());
  require_width(predictions, predictions.header.size(), "predictions csv");
  if (static_cast<Eigen::Index>(experts.rows.size()) != p)
    throw InvalidInput("experts csv: one row per prediction column");
  ExpertPanel panel;
  panel.predictions.resize(static_cast<Eigen::Index>(predictions.rows.size()), p);
  for (std::size_t i = 0; i < predictions.rows.size(); ++i)
    for (Eigen::Index k = 0; k < p; ++k)
      panel.predictions(static_cast<Eigen::Index>(i), k) = static_cast<int>(
          parse_integer(predictions.rows[i][static_cast<std::size_t>(k)]));
  panel.beta.resize(p);
  const int beta_col = experts.column("beta");
  const int cov_col = experts.column("coverage");
  if (beta_col < 0) throw InvalidInput("experts csv: missing beta column");
  bool any_coverage = false;
  std::vector<std::vector<int>> coverage;
  for (Eigen::Index k = 0; k < p; ++k) {
    const auto& row = experts.rows[static_cast<std::size_t>(k)];
    panel.beta(k) = parse_real(row.at(static_cast<std::size_t>(beta_col)));
    std::vector<int> classes;
    if (cov_col >= 0 && static_cast<std::size_t>(cov_col) < row.size()) {
      std::istringstream in(row[static_cast<std::size_t>(cov_col)]);
      std::string tok;
      while (in >> tok) classes.push_back(static_cast<int>(parse_integer(tok)));
    }
    any_coverage = any_coverage || !classes.empty();
    coverage.push_back(std::move(classes));
  }
  if (any_coverage) panel.coverage = std::move(coverage);
  return panel;
}

std::string costs_to_csv(const CostTensor& costs) {
  std::ostringstream out;
  for (int k = 0; k < costs.num_experts(); ++k)
    out << (k ? "," : "") << "c_" << (k + 1);
  out << '\n';
  for (int i = 0; i < costs.size(); ++i) {
    for (int k = 0; k < costs.num_experts(); ++k)
      out << (k ? "," : "") << format_exact(costs.values(i, k));
    out << '\n';
  }
  return out.str();
}

CostTensor costs_from_csv(const CsvTable& table, CostType type,
                          double normalizer) {
  require_width(table, table.header.size(), "costs csv");
  CostTensor costs;
  costs.cost_type = type;
  costs.normalizer = normalizer;
  const auto p = static_cast<Eigen::Index>(table.header.size());
  costs.values.resize(static_cast<Eigen::Index>(table.rows.size()), p);
  for (std::size_t i = 0; i < table.rows.size(); ++i)
    for (Eigen::Index k = 0; k < p; ++k)
      costs.values(static_cast<Eigen::Index>(i), k) =
          parse_real(table.rows[i][static_cast<std::size_t>(k)]);
  // Reals are stored with 9 digits; snap binary costs back onto the grid.
  if (type == CostType::kErrorOnly) {
    const double one = 1.0 / normalizer;
    for (Eigen::Index i = 0; i < costs.values.size(); ++i) {
      double& v = costs.values.data()[i];
      if (std::abs(v - one) < 1e-8) v = one;
    }
  }
  costs.validate();
  return costs;
}

KeyValueFile KeyValueFile::parse(const std::string& text) {
  KeyValueFile file;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidInput("config line " + std::to_string(number) +
                         ": expected `key = value`");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty())
      throw InvalidInput("config line " + std::to_string(number) + ": empty key");
    file.values_[key] = trim(line.substr(eq + 1));
  }
  return file;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
  return parse(read_text(path));
}

std::string KeyValueFile::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw InvalidInput("config: missing key " + key);
  return it->second;
}

std::string KeyValueFile::get_or(const std::string& key,
                                 const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueFile::get_real(const std::string& key, double fallback) const {
  return has(key) ? parse_real(get(key)) : fallback;
}

long long KeyValueFile::get_integer(const std::string& key,
                                    long long fallback) const {
  return has(key) ? parse_integer(get(key)) : fallback;
}

void KeyValueFile::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

std::string KeyValueFile::to_string() const {
  std::ostringstream out;
  for (const auto& [key, value] : values_) out << key << " = " << value << '\n';
  return out.str();
}

std::string router_to_json(const Router& router) {
  const FeatureMap& map = router.feature_map();
  nlohmann::ordered_json j;
  j["feature_map"] = {
      {"kind", map.spec().kind == FeatureMapKind::kIdentity ? "identity"
                                                            : "random_fourier"},
      {"bandwidth", map.spec().bandwidth},
      {"output_dim", map.spec().output_dim},
      {"seed", map.spec().seed},
      {"append_bias", map.spec().append_bias}};
  j["input_dim"] = map.input_dim();
  auto rows = nlohmann::ordered_json::array();
  for (Eigen::Index k = 0; k < router.weights().rows(); ++k) {
    std::vector<double> row(static_cast<std::size_t>(router.weights().cols()));
    for (Eigen::Index c = 0; c < router.weights().cols(); ++c)
      row[static_cast<std::size_t>(c)] = router.weights()(k, c);
    rows.push_back(row);
  }
  j["weights"] = rows;
  return j.dump(1) + "\n";
}

Router router_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("router json: ") + e.what());
  }
  try {
    FeatureMapSpec spec;
    const auto& fm = j.at("feature_map");
    const std::string kind = fm.at("kind").get<std::string>();
    if (kind == "identity") spec.kind = FeatureMapKind::kIdentity;
    else if (kind == "random_fourier") spec.kind = FeatureMapKind::kRandomFourier;
    else throw InvalidInput("router json: unknown feature map " + kind);
    spec.bandwidth = fm.at("bandwidth").get<double>();
    spec.output_dim = fm.at("output_dim").get<int>();
    spec.seed = fm.at("seed").get<std::uint64_t>();
    spec.append_bias = fm.at("append_bias").get<bool>();
    FeatureMap map(spec, j.at("input_dim").get<int>());
    const auto& rows = j.at("weights");
    Matrix weights(static_cast<Eigen::Index>(rows.size()), map.output_dim());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto row = rows[k].get<std::vector<double>>();
      if (static_cast<Eigen::Index>(row.size()) != weights.cols())
        throw InvalidInput("router json: weight row has the wrong width");
      for (std::size_t c = 0; c < row.size(); ++c)
        weights(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c)) = row[c];
    }
    return Router(std::move(map), std::move(weights));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("router json: ") + e.what());
  }
}

}  // namespace mild
