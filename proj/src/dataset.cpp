#include "upliftkit/dataset.hpp"

#include <cmath>
#include <unordered_set>

#include "upliftkit/csv.hpp"
#include "upliftkit/hashing.hpp"

namespace upliftkit {

namespace {

constexpr double kPropensitySumTol = 1e-9;

void check_propensities(const std::vector<double>& p, std::size_t row) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v > 0.0)) {
      throw DataError("row " + std::to_string(row) +
                      ": propensities must be strictly positive (full support)");
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > kPropensitySumTol) {
    throw DataError("row " + std::to_string(row) + ": propensities must sum to 1, got " +
                    csv::format_double(sum));
  }
}

}  // namespace

std::string to_string(DgpName name) {
  switch (name) {
    case DgpName::kLinear: return "linear";
    case DgpName::kSegments: return "segments";
    case DgpName::kRetentionScenario: return "retention_scenario";
    case DgpName::kRewardScenario: return "reward_scenario";
    case DgpName::kThresholdScenario: return "threshold_scenario";
  }
  return "unknown";
}

DgpName dgp_name_from_string(const std::string& s) {
  if (s == "linear") return DgpName::kLinear;
  if (s == "segments") return DgpName::kSegments;
  if (s == "retention_scenario") return DgpName::kRetentionScenario;
  if (s == "reward_scenario") return DgpName::kRewardScenario;
  if (s == "threshold_scenario") return DgpName::kThresholdScenario;
  throw ConfigError("unknown DGP name: '" + s + "'");
}

nlohmann::json LoggingSpec::to_json() const {
  nlohmann::json j;
  j["kind"] = kind == LoggingKind::kRct ? "rct" : "observational";
  if (!arm_probabilities.empty()) j["arm_probabilities"] = arm_probabilities;
  if (kind == LoggingKind::kObservational) {
    j["feature_index"] = feature_index;
    j["slope"] = slope;
    j["intercept"] = intercept;
  }
  return j;
}

LoggingSpec LoggingSpec::from_json(const nlohmann::json& j) {
  LoggingSpec spec;
  std::string kind = j.value("kind", "rct");
  if (kind == "rct") {
    spec.kind = LoggingKind::kRct;
  } else if (kind == "observational") {
    spec.kind = LoggingKind::kObservational;
  } else {
    throw ConfigError("logging.kind must be 'rct' or 'observational', got '" + kind + "'");
  }
  if (j.contains("arm_probabilities")) {
    spec.arm_probabilities = j.at("arm_probabilities").get<std::vector<double>>();
  }
  spec.feature_index = j.value("feature_index", 0);
  spec.slope = j.value("slope", 1.5);
  spec.intercept = j.value("intercept", 0.0);
  return spec;
}

nlohmann::json DgpParams::to_json() const {
  nlohmann::json j;
  j["effect_scale"] = effect_scale;
  if (!segment_base.empty()) j["segment_base"] = segment_base;
  if (!segment_effects.empty()) j["segment_effects"] = segment_effects;
  return j;
}

DgpParams DgpParams::from_json(const nlohmann::json& j) {
  DgpParams p;
  p.effect_scale = j.value("effect_scale", 1.0);
  if (j.contains("segment_base")) {
    p.segment_base = j.at("segment_base").get<std::vector<double>>();
  }
  if (j.contains("segment_effects")) {
    p.segment_effects = j.at("segment_effects").get<std::vector<std::vector<double>>>();
  }
  return p;
}

void DgpSpec::validate() const {
  if (n_customers == 0) throw ConfigError("n_customers must be positive");
  if (n_features == 0) throw ConfigError("n_features must be positive");
  if (n_treatments < 2) throw ConfigError("n_treatments must be at least 2");
  if (!(noise_sd >= 0.0)) throw ConfigError("noise_sd must be non-negative");
  const auto costs = resolved_costs();
  if (costs[0] != 0.0) throw ConfigError("cost_per_treatment[0] must be 0 (control is free)");
  for (double c : costs) {
    if (!(c >= 0.0)) throw ConfigError("cost_per_treatment entries must be non-negative");
  }
  if (logging.kind == LoggingKind::kRct && !logging.arm_probabilities.empty()) {
    if (logging.arm_probabilities.size() != static_cast<std::size_t>(n_treatments)) {
      throw ConfigError("logging.arm_probabilities length must equal n_treatments");
    }
    double sum = 0.0;
    for (double p : logging.arm_probabilities) {
      if (!(p > 0.0)) throw ConfigError("logging probabilities must be strictly positive");
      sum += p;
    }
    if (std::abs(sum - 1.0) > kPropensitySumTol) {
      throw ConfigError("logging.arm_probabilities must sum to 1");
    }
  }
  if (logging.kind == LoggingKind::kObservational) {
    if (logging.feature_index < 0 ||
        static_cast<std::size_t>(logging.feature_index) >= n_features) {
      throw ConfigError("logging.feature_index out of range");
    }
  }
  if (!params.segment_effects.empty() &&
      params.segment_effects.size() != static_cast<std::size_t>(n_treatments - 1)) {
    throw ConfigError("segment_effects must have one row per non-control arm");
  }
  for (const auto& row : params.segment_effects) {
    if (!params.segment_base.empty() && row.size() != params.segment_base.size()) {
      throw ConfigError("segment_effects rows must match segment_base length");
    }
  }
}

std::vector<double> DgpSpec::resolved_costs() const {
  if (cost_per_treatment.empty()) {
    return std::vector<double>(static_cast<std::size_t>(n_treatments), 0.0);
  }
  if (cost_per_treatment.size() != static_cast<std::size_t>(n_treatments)) {
    throw ConfigError("cost_per_treatment length must equal n_treatments");
  }
  return cost_per_treatment;
}

nlohmann::json DgpSpec::to_json() const {
  nlohmann::json j;
  j["name"] = to_string(name);
  j["n_customers"] = n_customers;
  j["n_features"] = n_features;
  j["n_treatments"] = n_treatments;
  j["noise_sd"] = noise_sd;
  j["seed"] = seed;
  j["logging"] = logging.to_json();
  j["cost_per_treatment"] = resolved_costs();
  j["params"] = params.to_json();
  return j;
}

DgpSpec DgpSpec::from_json(const nlohmann::json& j) {
  DgpSpec spec;
  try {
    spec.name = dgp_name_from_string(j.at("name").get<std::string>());
    spec.n_customers = j.at("n_customers").get<std::size_t>();
    spec.n_features = j.value("n_features", std::size_t{5});
    spec.n_treatments = j.value("n_treatments", 2);
    spec.noise_sd = j.value("noise_sd", 1.0);
    spec.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("logging")) spec.logging = LoggingSpec::from_json(j.at("logging"));
    if (j.contains("cost_per_treatment")) {
      spec.cost_per_treatment = j.at("cost_per_treatment").get<std::vector<double>>();
    }
    if (j.contains("params")) spec.params = DgpParams::from_json(j.at("params"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid dgp spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

ExperimentDataset::ExperimentDataset(std::vector<CustomerRecord> records, int k,
                                     std::optional<GroundTruth> truth,
                                     std::optional<DgpSpec> spec, std::string provenance)
    : records_(std::move(records)),
      k_(k),
      truth_(std::move(truth)),
      spec_(std::move(spec)),
      provenance_(std::move(provenance)) {
  validate();
}

std::size_t ExperimentDataset::n_features() const {
  return records_.empty() ? 0 : records_.front().features.size();
}

void ExperimentDataset::attach_truth(GroundTruth truth) {
  if (truth.potential_outcomes.rows() != records_.size() ||
      truth.potential_outcomes.cols() != static_cast<std::size_t>(k_)) {
    throw DataError("truth shape does not match dataset");
  }
  truth_ = std::move(truth);
}

ExperimentDataset ExperimentDataset::without_truth() const {
  return ExperimentDataset(records_, k_, std::nullopt, spec_, provenance_);
}

void ExperimentDataset::validate() const {
  if (k_ < 2) throw DataError("dataset must carry at least 2 arms (control plus one)");
  const std::size_t d = n_features();
  std::unordered_set<std::int64_t> seen;
  seen.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (r.features.size() != d) {
      throw DataError("row " + std::to_string(i + 1) + ": inconsistent feature dimensionality");
    }
    if (r.treatment < 0 || r.treatment >= k_) {
      throw DataError("row " + std::to_string(i + 1) + ": treatment index out of range");
    }
    if (r.logging_propensities.size() != static_cast<std::size_t>(k_)) {
      throw DataError("row " + std::to_string(i + 1) + ": inconsistent treatment count");
    }
    check_propensities(r.logging_propensities, i + 1);
    if (!seen.insert(r.customer_id).second) {
      throw DataError("row " + std::to_string(i + 1) + ": duplicate customer_id " +
                      std::to_string(r.customer_id));
    }
  }
  if (truth_.has_value()) {
    if (truth_->potential_outcomes.rows() != records_.size() ||
        truth_->potential_outcomes.cols() != static_cast<std::size_t>(k_)) {
      throw DataError("truth shape does not match dataset");
    }
  }
}

std::string ExperimentDataset::to_csv() const {
  const std::size_t d = n_features();
  std::string out = "customer_id";
  for (std::size_t j = 0; j < d; ++j) out += ",f" + std::to_string(j);
  out += ",treatment,outcome";
  for (int j = 0; j < k_; ++j) out += ",p" + std::to_string(j);
  out += "\n";
  for (const auto& r : records_) {
    out += std::to_string(r.customer_id);
    for (double f : r.features) {
      out += ',';
      out += csv::format_double(f);
    }
    out += ',' + std::to_string(r.treatment);
    out += ',' + csv::format_double(r.outcome);
    for (double p : r.logging_propensities) {
      out += ',';
      out += csv::format_double(p);
    }
    out += '\n';
  }
  return out;
}

ExperimentDataset ExperimentDataset::from_csv_text(const std::string& text,
                                                   std::string provenance) {
  std::vector<std::string> lines;
  {
    std::string line;
    for (char c : text) {
      if (c == '\n') {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
        line.clear();
      } else {
        line.push_back(c);
      }
    }
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw DataError("dataset file is empty (missing header)");

  const auto header = csv::split_line(lines[0]);
  if (header.empty() || header[0] != "customer_id") {
    throw DataError("missing column 'customer_id' in header");
  }
  std::size_t d = 0;
  std::size_t pos = 1;
  while (pos < header.size() && header[pos] == "f" + std::to_string(d)) {
    ++d;
    ++pos;
  }
  if (pos >= header.size() || header[pos] != "treatment") {
    throw DataError("missing column 'treatment' in header");
  }
  ++pos;
  if (pos >= header.size() || header[pos] != "outcome") {
    throw DataError("missing column 'outcome' in header");
  }
  ++pos;
  std::size_t k = 0;
  while (pos < header.size() && header[pos] == "p" + std::to_string(k)) {
    ++k;
    ++pos;
  }
  if (pos != header.size()) {
    throw DataError("unexpected column '" + header[pos] + "' in header");
  }
  if (k < 2) throw DataError("header must declare at least two propensity columns");

  std::vector<CustomerRecord> records;
  records.reserve(lines.size() - 1);
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto tokens = csv::split_line(lines[li]);
    if (tokens.size() != header.size()) {
      throw DataError("row " + std::to_string(li) + ": expected " +
                      std::to_string(header.size()) + " columns, got " +
                      std::to_string(tokens.size()));
    }
    CustomerRecord r;
    std::size_t t = 0;
    r.customer_id = csv::parse_int(tokens[t++], li, "customer_id");
    r.features.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
      r.features[j] = csv::parse_double(tokens[t++], li, "f" + std::to_string(j));
    }
    r.treatment = static_cast<int>(csv::parse_int(tokens[t++], li, "treatment"));
    r.outcome = csv::parse_double(tokens[t++], li, "outcome");
    r.logging_propensities.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
      r.logging_propensities[j] = csv::parse_double(tokens[t++], li, "p" + std::to_string(j));
    }
    if (r.treatment < 0 || r.treatment >= static_cast<int>(k)) {
      throw DataError("row " + std::to_string(li) + ": treatment index out of range");
    }
    check_propensities(r.logging_propensities, li);
    records.push_back(std::move(r));
  }
  return ExperimentDataset(std::move(records), static_cast<int>(k), std::nullopt, std::nullopt,
                           std::move(provenance));
}

std::string ExperimentDataset::fingerprint() const { return fingerprint_hex(to_csv()); }

void save_csv(const ExperimentDataset& dataset, const std::string& path) {
  csv::write_file(path, dataset.to_csv());
}

ExperimentDataset load_csv(const std::string& path) {
  return ExperimentDataset::from_csv_text(csv::read_file(path), path);
}

void save_truth_csv(const GroundTruth& truth, const std::vector<std::int64_t>& customer_ids,
                    const std::string& path) {
  const std::size_t n = truth.potential_outcomes.rows();
  const std::size_t k = truth.potential_outcomes.cols();
  if (customer_ids.size() != n) throw DataError("truth/customer id length mismatch");
  std::string out = "customer_id";
  for (std::size_t j = 0; j < k; ++j) out += ",y" + std::to_string(j);
  for (std::size_t j = 1; j < k; ++j) out += ",tau" + std::to_string(j);
  out += ",segment\n";
  for (std::size_t i = 0; i < n; ++i) {
    out += std::to_string(customer_ids[i]);
    for (std::size_t j = 0; j < k; ++j) {
      out += ',';
      out += csv::format_double(truth.potential_outcomes(i, j));
    }
    for (std::size_t j = 0; j + 1 < k; ++j) {
      out += ',';
      out += csv::format_double(truth.true_cate(i, j));
    }
    out += ',' + std::to_string(truth.segment_label.empty() ? 0 : truth.segment_label[i]);
    out += '\n';
  }
  csv::write_file(path, out);
}

GroundTruth load_truth_csv(const std::string& path,
                           const std::vector<std::int64_t>& expected_ids) {
  const auto lines = csv::read_lines(path);
  if (lines.empty()) throw DataError("truth file is empty (missing header): " + path);
  const auto header = csv::split_line(lines[0]);
  if (header.empty() || header[0] != "customer_id") {
    throw DataError("missing column 'customer_id' in truth header");
  }
  std::size_t k = 0;
  std::size_t pos = 1;
  while (pos < header.size() && header[pos] == "y" + std::to_string(k)) {
    ++k;
    ++pos;
  }
  if (k < 2) throw DataError("truth header must declare at least two outcome columns");
  for (std::size_t j = 1; j < k; ++j) {
    if (pos >= header.size() || header[pos] != "tau" + std::to_string(j)) {
      throw DataError("missing column 'tau" + std::to_string(j) + "' in truth header");
    }
    ++pos;
  }
  if (pos >= header.size() || header[pos] != "segment") {
    throw DataError("missing column 'segment' in truth header");
  }

  const std::size_t n = lines.size() - 1;
  if (!expected_ids.empty() && expected_ids.size() != n) {
    throw DataError("truth sidecar row count does not match dataset");
  }
  GroundTruth truth;
  truth.potential_outcomes = Matrix(n, k);
  truth.true_cate = Matrix(n, k - 1);
  truth.segment_label.resize(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto tokens = csv::split_line(lines[i + 1]);
    if (tokens.size() != header.size()) {
      throw DataError("truth row " + std::to_string(i + 1) + ": wrong column count");
    }
    std::size_t t = 0;
    const std::int64_t id = csv::parse_int(tokens[t++], i + 1, "customer_id");
    if (!expected_ids.empty() && id != expected_ids[i]) {
      throw DataError("truth row " + std::to_string(i + 1) +
                      ": customer_id does not match dataset order");
    }
    for (std::size_t j = 0; j < k; ++j) {
      truth.potential_outcomes(i, j) =
          csv::parse_double(tokens[t++], i + 1, "y" + std::to_string(j));
    }
    for (std::size_t j = 0; j + 1 < k; ++j) {
      truth.true_cate(i, j) = csv::parse_double(tokens[t++], i + 1, "tau" + std::to_string(j + 1));
    }
    truth.segment_label[i] =
        static_cast<int>(csv::parse_int(tokens[t++], i + 1, "segment"));
  }
  return truth;
}

}  // namespace upliftkit
