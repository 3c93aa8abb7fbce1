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

#include "mild/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <sstream>
#include <thread>

#include "mild/oracle.hpp"

namespace mild {
namespace {

std::vector<std::string> tokens(const std::string& text) {
  std::string spaced = text;
  std::replace(spaced.begin(), spaced.end(), ',', ' ');
  std::istringstream in(spaced);
  std::vector<std::string> out;
  for (std::string t; in >> t;) out.push_back(t);
  return out;
}

std::vector<double> real_list(const std::string& text) {
  std::vector<double> out;
  for (const std::string& t : tokens(text)) out.push_back(parse_real(t));
  return out;
}

Vector to_vector(const std::vector<double>& values) {
  Vector v(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i)
    v(static_cast<Eigen::Index>(i)) = values[i];
  return v;
}

std::string join(const Vector& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) out += ' ';
    out += format_real(v(i));
  }
  return out;
}

std::string join(const std::vector<double>& v) { return join(to_vector(v)); }

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw InvalidInput("bad boolean: " + text);
}

int to_int(long long v, const std::string& key) {
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    throw InvalidInput(key + ": out of range");
  return static_cast<int>(v);
}

LlmAnalogSpec llm_preset(const std::string& setting) {
  if (setting == "error_only") return llm_error_only_spec(2000, 0);
  if (setting == "error_cost") return llm_error_cost_spec(2000, 0);
  throw InvalidInput("unknown llm_setting: " + setting);
}

std::string cell(const std::optional<double>& v) {
  return v ? format_real(*v) : std::string();
}

std::optional<double> parse_cell(const std::string& text) {
  if (text.empty()) return std::nullopt;
  return parse_real(text);
}

}  // namespace

void ExperimentConfig::validate() const {
  if (n_seeds < 1) throw InvalidInput("config: n_seeds must be >= 1");
  if (n_test < 1) throw InvalidInput("config: n_test must be >= 1");
  if (threads < 0) throw InvalidInput("config: threads must be >= 0");
  if (methods.empty()) throw InvalidInput("config: no methods");
  if (train.surrogate.aggregation != Aggregation::kSum)
    throw InvalidInput("config: training needs the sum aggregation");
  train.surrogate.validate();
  train.validate();
  if (generator == GeneratorKind::kLlm) {
    if (llm.n_samples < 1) throw InvalidInput("config: n_samples must be >= 1");
  } else {
    if (setup.setup == SetupKind::kCustom && setup.custom_coverage.empty())
      throw InvalidInput("config: custom setup needs coverage");
    coverage_classes(setup.coverage(), setup.n_classes);
  }
  if (const auto* fixed = std::get_if<FixedRho>(&train.rho_mode))
    if (fixed->rhos.size() != num_experts())
      throw InvalidInput("config: rho needs one entry per expert");
}

std::string ExperimentConfig::setup_name() const {
  return generator == GeneratorKind::kLlm ? "llm_" + llm_setting
                                          : to_string(setup.setup);
}

std::string ExperimentConfig::cost_type_name() const {
  if (generator == GeneratorKind::kLlm)
    return to_string(llm.beta.size() > 0 && llm.beta.maxCoeff() > 0.0
                         ? CostType::kErrorPlusCost
                         : CostType::kErrorOnly);
  return to_string(setup.cost_type);
}

int ExperimentConfig::num_experts() const {
  return generator == GeneratorKind::kLlm
             ? static_cast<int>(llm.beta.size())
             : static_cast<int>(setup.coverage().size());
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "generator", "setup", "coverage", "n_classes", "n_samples", "n_test",
      "dim", "class_radius", "class_std", "fidelity", "covered_accuracy",
      "leak_accuracy", "cost_type", "llm_setting", "llm_targets", "llm_beta",
      "llm_accuracy", "llm_choices", "llm_region_radius", "llm_region_std",
      "methods", "scheme", "tau", "aggregation", "lambda", "learning_rate",
      "epochs", "batch_size", "holdout_fraction", "rho_mode", "rho_bar", "rho",
      "rho_halfwidth", "rho_step", "rho_validation_split", "rho_folds", "feature_map",
      "rff_dim", "rff_bandwidth", "bias", "n_seeds", "seed", "threads",
      "output_dir"};
  return keys;
}

ExperimentConfig config_from_key_values(const KeyValueFile& file) {
  const auto& keys = config_keys();
  for (const auto& [key, value] : file.entries())
    if (std::find(keys.begin(), keys.end(), key) == keys.end())
      throw InvalidInput("config: unknown key " + key);

  ExperimentConfig c;
  const std::string generator = file.get_or("generator", "classes");
  if (generator == "classes") {
    c.generator = GeneratorKind::kClasses;
  } else if (generator == "llm") {
    c.generator = GeneratorKind::kLlm;
  } else {
    throw InvalidInput("config: unknown generator " + generator);
  }

  SetupSpec& s = c.setup;
  s.setup = parse_setup_kind(file.get_or("setup", "I"));
  if (file.has("coverage")) s.custom_coverage = real_list(file.get("coverage"));
  s.n_classes = to_int(file.get_integer("n_classes", s.n_classes), "n_classes");
  s.n_samples = to_int(file.get_integer("n_samples", s.n_samples), "n_samples");
  s.dim = to_int(file.get_integer("dim", s.dim), "dim");
  s.class_radius = file.get_real("class_radius", s.class_radius);
  s.class_std = file.get_real("class_std", s.class_std);
  const std::string fidelity = file.get_or("fidelity", "synthetic");
  if (fidelity == "synthetic") {
    s.fidelity = SyntheticFidelity{};
  } else if (fidelity == "real") {
    RealFidelity real;
    real.covered_accuracy = file.get_real("covered_accuracy", real.covered_accuracy);
    real.leak_accuracy = file.get_real("leak_accuracy", real.leak_accuracy);
    s.fidelity = real;
  } else {
    throw InvalidInput("config: unknown fidelity " + fidelity);
  }
  s.cost_type = parse_cost_type(file.get_or("cost_type", "error_only"));
  c.n_test = to_int(file.get_integer("n_test", c.n_test), "n_test");

  c.llm_setting = file.get_or("llm_setting", "error_cost");
  c.llm = llm_preset(c.llm_setting);
  c.llm.n_samples = s.n_samples;
  c.llm.dim = s.dim;
  if (file.has("llm_targets")) c.llm.target_ratios = to_vector(real_list(file.get("llm_targets")));
  if (file.has("llm_beta")) c.llm.beta = to_vector(real_list(file.get("llm_beta")));
  if (file.has("llm_accuracy")) {
    const std::vector<double> acc = real_list(file.get("llm_accuracy"));
    const auto p = c.llm.beta.size();
    if (static_cast<Eigen::Index>(acc.size()) != p * p)
      throw InvalidInput("config: llm_accuracy needs p * p entries");
    for (Eigen::Index r = 0; r < p; ++r)
      for (Eigen::Index k = 0; k < p; ++k)
        c.llm.accuracy(r, k) = acc[static_cast<std::size_t>(r * p + k)];
  }
  c.llm.n_choices = to_int(file.get_integer("llm_choices", c.llm.n_choices), "llm_choices");
  c.llm.region_radius = file.get_real("llm_region_radius", c.llm.region_radius);
  c.llm.region_std = file.get_real("llm_region_std", c.llm.region_std);

  if (file.has("methods")) {
    c.methods.clear();
    for (const std::string& t : tokens(file.get("methods")))
      c.methods.push_back(parse_method(t));
  }
  c.scheme = parse_reward_scheme(file.get_or("scheme", "lemma1"));

  TrainConfig& t = c.train;
  t.surrogate.tau = file.get_real("tau", t.surrogate.tau);
  const std::string aggregation = file.get_or("aggregation", "sum");
  if (aggregation == "sum") {
    t.surrogate.aggregation = Aggregation::kSum;
  } else if (aggregation == "max") {
    t.surrogate.aggregation = Aggregation::kMax;
  } else {
    throw InvalidInput("config: unknown aggregation " + aggregation);
  }
  t.lambda = file.get_real("lambda", t.lambda);
  t.learning_rate = file.get_real("learning_rate", t.learning_rate);
  t.epochs = to_int(file.get_integer("epochs", t.epochs), "epochs");
  t.batch_size = to_int(file.get_integer("batch_size", t.batch_size), "batch_size");
  t.holdout_fraction = file.get_real("holdout_fraction", t.holdout_fraction);

  const std::string rho_mode = file.get_or("rho_mode", "formula");
  const double rho_bar = file.get_real("rho_bar", 0.0);
  if (rho_mode == "formula") {
    t.rho_mode = FormulaRho{rho_bar};
  } else if (rho_mode == "validated") {
    ValidatedRho v;
    v.rho_bar = rho_bar;
    v.halfwidth = to_int(file.get_integer("rho_halfwidth", v.halfwidth), "rho_halfwidth");
    v.step = file.get_real("rho_step", v.step);
    v.validation_split = file.get_real("rho_validation_split", v.validation_split);
    v.folds = to_int(file.get_integer("rho_folds", v.folds), "rho_folds");
    t.rho_mode = v;
  } else if (rho_mode == "fixed") {
    if (!file.has("rho")) throw InvalidInput("config: fixed rho_mode needs rho");
    t.rho_mode = FixedRho{MarginVector(to_vector(real_list(file.get("rho"))))};
  } else {
    throw InvalidInput("config: unknown rho_mode " + rho_mode);
  }

  const std::string feature_map = file.get_or("feature_map", "identity");
  if (feature_map == "identity") {
    t.feature_map.kind = FeatureMapKind::kIdentity;
  } else if (feature_map == "rff") {
    t.feature_map.kind = FeatureMapKind::kRandomFourier;
  } else {
    throw InvalidInput("config: unknown feature_map " + feature_map);
  }
  t.feature_map.output_dim = to_int(file.get_integer("rff_dim", 100), "rff_dim");
  t.feature_map.bandwidth = file.get_real("rff_bandwidth", t.feature_map.bandwidth);
  t.feature_map.append_bias = parse_bool(file.get_or("bias", "true"));

  c.n_seeds = to_int(file.get_integer("n_seeds", c.n_seeds), "n_seeds");
  const long long seed = file.get_integer("seed", 0);
  if (seed < 0) throw InvalidInput("config: seed must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);
  c.threads = to_int(file.get_integer("threads", c.threads), "threads");
  c.output_dir = file.get_or("output_dir", "out");
  c.validate();
  return c;
}

KeyValueFile config_to_key_values(const ExperimentConfig& c) {
  KeyValueFile f;
  const SetupSpec& s = c.setup;
  f.set("generator", c.generator == GeneratorKind::kLlm ? "llm" : "classes");
  f.set("setup", to_string(s.setup));
  if (!s.custom_coverage.empty()) f.set("coverage", join(s.custom_coverage));
  f.set("n_classes", std::to_string(s.n_classes));
  f.set("n_samples", std::to_string(s.n_samples));
  f.set("n_test", std::to_string(c.n_test));
  f.set("dim", std::to_string(s.dim));
  f.set("class_radius", format_real(s.class_radius));
  f.set("class_std", format_real(s.class_std));
  if (const auto* real = std::get_if<RealFidelity>(&s.fidelity)) {
    f.set("fidelity", "real");
    f.set("covered_accuracy", format_real(real->covered_accuracy));
    f.set("leak_accuracy", format_real(real->leak_accuracy));
  } else {
    f.set("fidelity", "synthetic");
  }
  f.set("cost_type", to_string(s.cost_type));
  if (c.generator == GeneratorKind::kLlm) {
    f.set("llm_setting", c.llm_setting);
    f.set("llm_targets", join(c.llm.target_ratios));
    f.set("llm_beta", join(c.llm.beta));
    std::vector<double> acc;
    for (Eigen::Index r = 0; r < c.llm.accuracy.rows(); ++r)
      for (Eigen::Index k = 0; k < c.llm.accuracy.cols(); ++k)
        acc.push_back(c.llm.accuracy(r, k));
    f.set("llm_accuracy", join(acc));
    f.set("llm_choices", std::to_string(c.llm.n_choices));
    f.set("llm_region_radius", format_real(c.llm.region_radius));
    f.set("llm_region_std", format_real(c.llm.region_std));
  }
  std::string methods;
  for (Method m : c.methods) methods += (methods.empty() ? "" : ",") + to_string(m);
  f.set("methods", methods);
  f.set("scheme", to_string(c.scheme));
  const TrainConfig& t = c.train;
  f.set("tau", format_real(t.surrogate.tau));
  f.set("aggregation", t.surrogate.aggregation == Aggregation::kSum ? "sum" : "max");
  f.set("lambda", format_real(t.lambda));
  f.set("learning_rate", format_real(t.learning_rate));
  f.set("epochs", std::to_string(t.epochs));
  f.set("batch_size", std::to_string(t.batch_size));
  f.set("holdout_fraction", format_real(t.holdout_fraction));
  if (const auto* fixed = std::get_if<FixedRho>(&t.rho_mode)) {
    f.set("rho_mode", "fixed");
    f.set("rho", join(fixed->rhos.rho));
  } else if (const auto* formula = std::get_if<FormulaRho>(&t.rho_mode)) {
    f.set("rho_mode", "formula");
    f.set("rho_bar", format_real(formula->rho_bar));
  } else {
    const auto& v = std::get<ValidatedRho>(t.rho_mode);
    f.set("rho_mode", "validated");
    f.set("rho_bar", format_real(v.rho_bar));
    f.set("rho_halfwidth", std::to_string(v.halfwidth));
    f.set("rho_step", format_real(v.step));
    f.set("rho_validation_split", format_real(v.validation_split));
    f.set("rho_folds", std::to_string(v.folds));
  }
  f.set("feature_map", t.feature_map.kind == FeatureMapKind::kRandomFourier
                           ? "rff"
                           : "identity");
  f.set("rff_dim", std::to_string(t.feature_map.output_dim));
  f.set("rff_bandwidth", format_real(t.feature_map.bandwidth));
  f.set("bias", t.feature_map.append_bias ? "true" : "false");
  f.set("n_seeds", std::to_string(c.n_seeds));
  f.set("seed", std::to_string(c.seed));
  f.set("threads", std::to_string(c.threads));
  f.set("output_dir", c.output_dir.string());
  return f;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

SeedData generate_seed_data(const ExperimentConfig& config, std::uint64_t seed) {
  SeedData out;
  if (config.generator == GeneratorKind::kLlm) {
    LlmAnalogSpec spec = config.llm;
    spec.seed = derive_seed(seed, kTrainDataStream);
    out.train = generate_llm_analog(spec).generated;
    spec.seed = derive_seed(seed, kTestDataStream);
    spec.n_samples = config.n_test;
    out.test = generate_llm_analog(spec).generated;
    return out;
  }
  SetupSpec spec = config.setup;
  spec.seed = derive_seed(seed, kTrainDataStream);
  out.train = generate(spec);
  spec.seed = derive_seed(seed, kTestDataStream);
  spec.n_samples = config.n_test;
  out.test = generate(spec);
  return out;
}

TrainConfig seeded_train_config(const ExperimentConfig& config,
                                std::uint64_t seed) {
  TrainConfig t = config.train;
  t.seed = derive_seed(seed, kTrainerStream);
  t.feature_map.seed = derive_seed(seed, kFeatureMapStream);
  return t;
}

std::vector<MethodOutcome> run_seed(const ExperimentConfig& config,
                                    std::uint64_t seed) {
  const SeedData data = generate_seed_data(config, seed);
  const TrainConfig train_config = seeded_train_config(config, seed);
  std::vector<MethodOutcome> out;
  for (Method method : config.methods) {
    MethodOutcome o;
    o.method = method;
    o.seed = seed;
    if (method == Method::kOracle) {
      const BayesResult bayes =
          bayes_router(instance_from_dataset(data.test.data, data.test.costs));
      o.report.num_samples = data.test.data.size();
      o.report.deferral_loss = bayes.deferral_loss;
      o.report.ratios = bayes.ratios;
      o.ok = true;
      o.status = "ok";
    } else {
      try {
        const TrainResult result = train(data.train.data, data.train.costs,
                                         config.scheme, train_config, method);
        o.report = evaluate(result.router, data.test.data, data.test.costs);
        o.trace = result.trace;
        o.rhos = result.rhos.rho;
        o.ok = true;
        o.status = "ok";
      } catch (const TrainingDiverged&) {
        o.status = "diverged";
      }
    }
    out.push_back(std::move(o));
  }
  return out;
}

std::vector<ReportRow> assemble_report(
    const ExperimentConfig& config, const std::vector<MethodOutcome>& outcomes) {
  const int p = config.num_experts();
  std::vector<ReportRow> rows;
  for (Method method : config.methods) {
    std::vector<double> dls;
    Vector ratio_sum = Vector::Zero(p);
    int failed = 0;
    for (const MethodOutcome& o : outcomes) {
      if (o.method != method) continue;
      ReportRow row;
      row.method = to_string(method);
      row.setup = config.setup_name();
      row.cost_type = config.cost_type_name();
      row.seed = std::to_string(o.seed);
      row.status = o.status;
      row.ratios.assign(static_cast<std::size_t>(p), std::nullopt);
      if (o.ok) {
        row.dl = o.report.deferral_loss;
        for (int k = 0; k < p; ++k)
          row.ratios[static_cast<std::size_t>(k)] = o.report.ratios(k);
        dls.push_back(o.report.deferral_loss);
        ratio_sum += o.report.ratios;
      } else {
        ++failed;
      }
      rows.push_back(std::move(row));
    }
    ReportRow agg;
    agg.method = to_string(method);
    agg.setup = config.setup_name();
    agg.cost_type = config.cost_type_name();
    agg.seed = "mean";
    agg.ratios.assign(static_cast<std::size_t>(p), std::nullopt);
    const auto n = static_cast<double>(dls.size());
    if (dls.empty()) {
      agg.status = "failed";
    } else {
      agg.status = failed > 0 ? "partial" : "ok";
      double mean = 0.0;
      for (double v : dls) mean += v;
      mean /= n;
      agg.dl = mean;
      if (dls.size() > 1) {
        double ss = 0.0;
        for (double v : dls) ss += (v - mean) * (v - mean);
        agg.dl_std = std::sqrt(ss / (n - 1.0));
      }
      for (int k = 0; k < p; ++k)
        agg.ratios[static_cast<std::size_t>(k)] = ratio_sum(k) / n;
    }
    rows.push_back(std::move(agg));
  }
  return rows;
}

std::string report_to_csv(const std::vector<ReportRow>& rows, int num_experts) {
  std::ostringstream out;
  out << "method,setup,cost_type,seed,status,dl,dl_std";
  for (int k = 1; k <= num_experts; ++k) out << ",ratio_" << k;
  out << '\n';
  for (const ReportRow& r : rows) {
    out << r.method << ',' << r.setup << ',' << r.cost_type << ',' << r.seed
        << ',' << r.status << ',' << cell(r.dl) << ',' << cell(r.dl_std);
    for (const auto& v : r.ratios) out << ',' << cell(v);
    out << '\n';
  }
  return out.str();
}

std::vector<ReportRow> report_from_csv(const std::string& text) {
  const CsvTable table = parse_csv(text);
  if (table.header.size() < 7 || table.header[0] != "method")
    throw InvalidInput("report csv: unexpected header");
  const std::size_t p = table.header.size() - 7;
  std::vector<ReportRow> rows;
  for (const auto& fields : table.rows) {
    if (fields.size() != table.header.size())
      throw InvalidInput("report csv: ragged row");
    ReportRow r;
    r.method = fields[0];
    r.setup = fields[1];
    r.cost_type = fields[2];
    r.seed = fields[3];
    r.status = fields[4];
    r.dl = parse_cell(fields[5]);
    r.dl_std = parse_cell(fields[6]);
    for (std::size_t k = 0; k < p; ++k) r.ratios.push_back(parse_cell(fields[7 + k]));
    rows.push_back(std::move(r));
  }
  return rows;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(config.output_dir / "traces", ec);
  if (ec)
    throw InvalidInput("cannot create output directory " +
                       config.output_dir.string() + ": " + ec.message());

  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < config.n_seeds; ++i)
    seeds.push_back(config.seed + static_cast<std::uint64_t>(i));
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers =
      config.threads > 0 ? static_cast<std::size_t>(config.threads) : hw;

  // Per-seed results land in fixed slots, so the assembly order never depends
  // on scheduling.
  std::vector<std::vector<MethodOutcome>> per_seed(seeds.size());
  for (std::size_t begin = 0; begin < seeds.size(); begin += workers) {
    const std::size_t end = std::min(seeds.size(), begin + workers);
    if (workers == 1) {
      per_seed[begin] = run_seed(config, seeds[begin]);
      continue;
    }
    std::vector<std::future<std::vector<MethodOutcome>>> jobs;
    for (std::size_t i = begin; i < end; ++i)
      jobs.push_back(std::async(std::launch::async, run_seed, std::cref(config),
                                seeds[i]));
    for (std::size_t i = begin; i < end; ++i) per_seed[i] = jobs[i - begin].get();
  }

  ExperimentResult result;
  for (auto& outcomes : per_seed)
    for (auto& o : outcomes) result.outcomes.push_back(std::move(o));
  result.rows = assemble_report(config, result.outcomes);
  for (const MethodOutcome& o : result.outcomes)
    if (!o.ok) result.exit_code = kExitDiverged;

  write_text(config.output_dir / "report.csv",
             report_to_csv(result.rows, config.num_experts()));
  KeyValueFile manifest = config_to_key_values(config);
  std::string run_seeds;
  for (std::uint64_t s : seeds) run_seeds += (run_seeds.empty() ? "" : " ") + std::to_string(s);
  manifest.set("run_seeds", run_seeds);
  double max_beta = 0.0;
  if (config.generator == GeneratorKind::kLlm) {
    max_beta = config.llm.beta.maxCoeff();
  } else if (config.setup.cost_type == CostType::kErrorPlusCost) {
    const std::vector<double> coverage = config.setup.coverage();
    max_beta = *std::max_element(coverage.begin(), coverage.end());
  }
  manifest.set("normalizer", format_real(1.0 + std::max(0.0, max_beta)));
  write_text(config.output_dir / "manifest.txt", manifest.to_string());
  for (const MethodOutcome& o : result.outcomes) {
    if (o.trace.empty()) continue;
    write_text(config.output_dir / "traces" /
                   (to_string(o.method) + "_" + std::to_string(o.seed) + ".csv"),
               trace_to_csv(o.trace));
  }
  return result;
}

}  // namespace mild
