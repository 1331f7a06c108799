#include "upliftkit/uplift_learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "upliftkit/csv.hpp"
#include "upliftkit/errors.hpp"
#include "upliftkit/rng.hpp"

namespace upliftkit {

std::string to_string(MetaLearner m) {
  switch (m) {
    case MetaLearner::kSLearner: return "s_learner";
    case MetaLearner::kTLearner: return "t_learner";
    case MetaLearner::kXLearner: return "x_learner";
    case MetaLearner::kDrLearner: return "dr_learner";
    case MetaLearner::kCausalForest: return "causal_forest";
  }
  throw ConfigError("unreachable meta learner");
}

MetaLearner meta_learner_from_string(const std::string& s) {
  if (s == "s_learner") return MetaLearner::kSLearner;
  if (s == "t_learner") return MetaLearner::kTLearner;
  if (s == "x_learner") return MetaLearner::kXLearner;
  if (s == "dr_learner") return MetaLearner::kDrLearner;
  if (s == "causal_forest") return MetaLearner::kCausalForest;
  throw ConfigError("unknown meta learner '" + s + "'");
}

std::string to_string(PropensitySource s) {
  return s == PropensitySource::kLogged ? "logged" : "estimated";
}

PropensitySource propensity_source_from_string(const std::string& s) {
  if (s == "logged") return PropensitySource::kLogged;
  if (s == "estimated") return PropensitySource::kEstimated;
  throw ConfigError("unknown propensity source '" + s + "'");
}

void UpliftModelSpec::validate() const {
  base.validate();
  if (!(clip_lo > 0.0 && clip_lo <= clip_hi && clip_hi < 1.0)) {
    throw ConfigError("clip bounds must satisfy 0 < lo <= hi < 1");
  }
  if (folds < 2) throw ConfigError("folds must be at least 2");
  if (!(honesty_fraction > 0.0 && honesty_fraction < 1.0)) {
    throw ConfigError("honesty_fraction must be in (0, 1)");
  }
  if (n_trees < 1) throw ConfigError("n_trees must be at least 1");
  if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0)) {
    throw ConfigError("subsample_fraction must be in (0, 1]");
  }
}

nlohmann::json UpliftModelSpec::to_json() const {
  return {{"meta", to_string(meta)},
          {"base", base.to_json()},
          {"propensity_source", to_string(propensity_source)},
          {"clip", {clip_lo, clip_hi}},
          {"folds", folds},
          {"honesty_fraction", honesty_fraction},
          {"n_trees", n_trees},
          {"subsample_fraction", subsample_fraction},
          {"keep_sample_ids", keep_sample_ids},
          {"seed", seed}};
}

UpliftModelSpec UpliftModelSpec::from_json(const nlohmann::json& j) {
  UpliftModelSpec spec;
  try {
    spec.meta = meta_learner_from_string(j.at("meta").get<std::string>());
    if (j.contains("base")) spec.base = BaseLearnerSpec::from_json(j.at("base"));
    if (j.contains("propensity_source")) {
      spec.propensity_source =
          propensity_source_from_string(j.at("propensity_source").get<std::string>());
    }
    if (j.contains("clip")) {
      spec.clip_lo = j.at("clip").at(0).get<double>();
      spec.clip_hi = j.at("clip").at(1).get<double>();
    }
    spec.folds = j.value("folds", spec.folds);
    spec.honesty_fraction = j.value("honesty_fraction", spec.honesty_fraction);
    spec.n_trees = j.value("n_trees", spec.n_trees);
    spec.subsample_fraction = j.value("subsample_fraction", spec.subsample_fraction);
    spec.keep_sample_ids = j.value("keep_sample_ids", spec.keep_sample_ids);
    spec.seed = j.value("seed", spec.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad uplift model spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

std::string CateEstimateMatrix::to_csv() const {
  std::ostringstream out;
  out << "customer_id";
  for (std::size_t a = 1; a <= tau_hat.cols(); ++a) out << ",tau" << a;
  out << "\n";
  for (std::size_t i = 0; i < tau_hat.rows(); ++i) {
    out << customer_ids[i];
    for (std::size_t a = 0; a < tau_hat.cols(); ++a) {
      out << "," << csv::format_double(tau_hat(i, a));
    }
    out << "\n";
  }
  return out.str();
}

CateEstimateMatrix CateEstimateMatrix::from_csv_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CATE file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = csv::split_line(line);
  if (header.empty() || header[0] != "customer_id") {
    throw DataError("missing column 'customer_id' in CATE header");
  }
  for (std::size_t a = 1; a < header.size(); ++a) {
    if (header[a] != "tau" + std::to_string(a)) {
      throw DataError("unexpected CATE column '" + header[a] + "'");
    }
  }
  const std::size_t n_arms = header.size() - 1;
  if (n_arms == 0) throw DataError("CATE file has no effect columns");

  std::vector<std::int64_t> ids;
  std::vector<double> values;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = csv::split_line(line);
    if (fields.size() != header.size()) {
      throw DataError("row " + std::to_string(row) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    }
    ids.push_back(csv::parse_int(fields[0], row, "customer_id"));
    for (std::size_t a = 1; a < fields.size(); ++a) {
      values.push_back(csv::parse_double(fields[a], row, header[a]));
    }
  }

  CateEstimateMatrix out;
  out.customer_ids = std::move(ids);
  out.tau_hat = Matrix(out.customer_ids.size(), n_arms);
  std::copy(values.begin(), values.end(), out.tau_hat.data().begin());
  return out;
}

void save_cate_csv(const CateEstimateMatrix& cate, const std::string& path) {
  csv::write_file(path, cate.to_csv());
}

CateEstimateMatrix load_cate_csv(const std::string& path) {
  return CateEstimateMatrix::from_csv_text(csv::read_file(path));
}

namespace {

Matrix features_matrix(const ExperimentDataset& data) {
  const std::size_t n = data.size();
  const std::size_t d = data.n_features();
  Matrix x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& f = data.records()[i].features;
    std::copy(f.begin(), f.end(), x.row_ptr(i));
  }
  return x;
}

Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& rows) {
  Matrix out(rows.size(), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy(x.row_ptr(rows[r]), x.row_ptr(rows[r]) + x.cols(), out.row_ptr(r));
  }
  return out;
}

// Design row for the single-model (S) learner. Ridge gets explicit
// treatment-by-feature interactions so a linear effect is representable;
// tree families split on the appended treatment column directly.
void s_design_row(const double* x, std::size_t d, bool interaction, double t, double* out) {
  std::copy(x, x + d, out);
  out[d] = t;
  if (interaction) {
    for (std::size_t j = 0; j < d; ++j) out[d + 1 + j] = t * x[j];
  }
}

Matrix s_design(const Matrix& x, const std::vector<double>& t, bool interaction) {
  const std::size_t d = x.cols();
  Matrix out(x.rows(), interaction ? 2 * d + 1 : d + 1);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    s_design_row(x.row_ptr(i), d, interaction, t[i], out.row_ptr(i));
  }
  return out;
}

std::unique_ptr<BaseLearner> fit_pair_propensity(const BaseLearnerSpec& base, const Matrix& x,
                                                 const std::vector<double>& t01) {
  switch (base.kind) {
    case BaseLearnerKind::kRidge:
      return fit_logistic(x, t01, base.ridge_lambda);
    case BaseLearnerKind::kMean:
    case BaseLearnerKind::kRegressionTree:
    case BaseLearnerKind::kGradientBoostedTrees:
      // Indicator regression; consumers clip the output before weighting.
      return fit_base_learner(base, x, t01);
  }
  throw ConfigError("unreachable base learner kind");
}

}  // namespace

Matrix estimate_propensities(const ExperimentDataset& data, const BaseLearnerSpec& base) {
  base.validate();
  const std::size_t n = data.size();
  const std::size_t k = static_cast<std::size_t>(data.k());
  if (n == 0) throw DataError("cannot estimate propensities on an empty dataset");

  std::vector<std::size_t> arm_count(k, 0);
  for (const auto& rec : data.records()) arm_count[static_cast<std::size_t>(rec.treatment)]++;
  const std::size_t arms_present =
      static_cast<std::size_t>(std::count_if(arm_count.begin(), arm_count.end(),
                                             [](std::size_t c) { return c > 0; }));
  if (arms_present < 2) {
    throw DataError("propensity estimation needs at least two arms present in the data");
  }

  Matrix out(n, k);
  if (base.kind == BaseLearnerKind::kMean) {
    for (std::size_t a = 0; a < k; ++a) {
      const double share = static_cast<double>(arm_count[a]) / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) out(i, a) = share;
    }
    return out;
  }

  const Matrix x = features_matrix(data);
  for (std::size_t a = 0; a < k; ++a) {
    std::vector<double> indicator(n);
    for (std::size_t i = 0; i < n; ++i) {
      indicator[i] = data.records()[i].treatment == static_cast<int>(a) ? 1.0 : 0.0;
    }
    std::unique_ptr<BaseLearner> model =
        base.kind == BaseLearnerKind::kRidge ? fit_logistic(x, indicator, base.ridge_lambda)
                                             : fit_base_learner(base, x, indicator);
    for (std::size_t i = 0; i < n; ++i) {
      out(i, a) = std::max(model->predict_row(x.row_ptr(i), x.cols()), 1e-6);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (std::size_t a = 0; a < k; ++a) sum += out(i, a);
    for (std::size_t a = 0; a < k; ++a) out(i, a) /= sum;
  }
  return out;
}

const forest::HonestForest& FittedUpliftModel::forest_for_arm(int arm) const {
  if (spec_.meta != MetaLearner::kCausalForest) {
    throw ConfigError("forest internals only exist on causal_forest models");
  }
  if (arm < 1 || arm >= k_) throw ConfigError("no treated arm " + std::to_string(arm));
  return *arms_[static_cast<std::size_t>(arm - 1)].forest;
}

double FittedUpliftModel::predict_arm(const ArmModel& am, const CustomerRecord& rec) const {
  const std::size_t d = n_features_;
  const double* x = rec.features.data();
  switch (spec_.meta) {
    case MetaLearner::kSLearner: {
      if (am.s_group_means) return am.s_mean1 - am.s_mean0;
      const std::size_t width = am.s_interaction ? 2 * d + 1 : d + 1;
      std::vector<double> row(width);
      s_design_row(x, d, am.s_interaction, 1.0, row.data());
      const double treated = am.s_model->predict_row(row.data(), width);
      s_design_row(x, d, am.s_interaction, 0.0, row.data());
      return treated - am.s_model->predict_row(row.data(), width);
    }
    case MetaLearner::kTLearner:
      return am.f1->predict_row(x, d) - am.f0->predict_row(x, d);
    case MetaLearner::kXLearner: {
      double e;
      if (spec_.propensity_source == PropensitySource::kLogged) {
        const double p0 = rec.logging_propensities[0];
        const double pa = rec.logging_propensities[static_cast<std::size_t>(am.arm)];
        e = pa / (p0 + pa);
      } else {
        e = am.x_propensity->predict_row(x, d);
      }
      const double g = clip_probability(e, spec_.clip_lo, spec_.clip_hi);
      return g * am.tau0->predict_row(x, d) + (1.0 - g) * am.tau1->predict_row(x, d);
    }
    case MetaLearner::kDrLearner:
      return am.dr_final->predict_row(x, d);
    case MetaLearner::kCausalForest:
      return am.forest->predict_row(x);
  }
  throw ConfigError("unreachable meta learner");
}

CateEstimateMatrix FittedUpliftModel::predict(const ExperimentDataset& data) const {
  if (data.size() > 0 && data.n_features() != n_features_) {
    throw DataError("feature dimension mismatch: model fitted on " +
                    std::to_string(n_features_) + " features, data has " +
                    std::to_string(data.n_features()));
  }
  CateEstimateMatrix out;
  out.model_provenance = spec_;
  out.fitted_on = fitted_on_;
  out.scored_on = data.fingerprint();
  out.tau_hat = Matrix(data.size(), static_cast<std::size_t>(k_ - 1));
  out.customer_ids.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const CustomerRecord& rec = data.records()[i];
    out.customer_ids.push_back(rec.customer_id);
    for (int a = 1; a < k_; ++a) {
      const double tau = predict_arm(arms_[static_cast<std::size_t>(a - 1)], rec);
      if (!std::isfinite(tau)) {
        throw DataError("non-finite effect estimate for customer " +
                        std::to_string(rec.customer_id) + ", arm " + std::to_string(a));
      }
      out.tau_hat(i, static_cast<std::size_t>(a - 1)) = tau;
    }
  }
  return out;
}

namespace {

struct ArmSubset {
  std::vector<std::size_t> rows;     // dataset row indices, control + one arm
  std::vector<std::size_t> control;  // positions within `rows`
  std::vector<std::size_t> treated;
  Matrix x;                          // features of `rows`
  std::vector<double> y;
  std::vector<double> t01;
  std::vector<std::int64_t> ids;
  std::vector<double> logged_e;      // P(T=arm | control-or-arm), from logs
};

ArmSubset make_subset(const ExperimentDataset& data, const Matrix& x_all, int arm) {
  ArmSubset s;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int t = data.records()[i].treatment;
    if (t != 0 && t != arm) continue;
    s.rows.push_back(i);
  }
  s.x = gather_rows(x_all, s.rows);
  s.y.reserve(s.rows.size());
  for (std::size_t p = 0; p < s.rows.size(); ++p) {
    const CustomerRecord& rec = data.records()[s.rows[p]];
    const bool is_treated = rec.treatment == arm;
    s.y.push_back(rec.outcome);
    s.t01.push_back(is_treated ? 1.0 : 0.0);
    s.ids.push_back(rec.customer_id);
    (is_treated ? s.treated : s.control).push_back(p);
    const double p0 = rec.logging_propensities[0];
    const double pa = rec.logging_propensities[static_cast<std::size_t>(arm)];
    s.logged_e.push_back(pa / (p0 + pa));
  }
  return s;
}

std::vector<double> gather(const std::vector<double>& v, const std::vector<std::size_t>& at) {
  std::vector<double> out;
  out.reserve(at.size());
  for (std::size_t p : at) out.push_back(v[p]);
  return out;
}

Matrix gather_local(const Matrix& x, const std::vector<std::size_t>& at) {
  Matrix out(at.size(), x.cols());
  for (std::size_t r = 0; r < at.size(); ++r) {
    std::copy(x.row_ptr(at[r]), x.row_ptr(at[r]) + x.cols(), out.row_ptr(r));
  }
  return out;
}

}  // namespace

FittedUpliftModel fit(const UpliftModelSpec& spec, const ExperimentDataset& data) {
  spec.validate();
  if (data.size() == 0) throw DataError("cannot fit on an empty dataset");
  const int k = data.k();

  std::vector<std::size_t> arm_count(static_cast<std::size_t>(k), 0);
  for (const auto& rec : data.records()) arm_count[static_cast<std::size_t>(rec.treatment)]++;
  for (int a = 0; a < k; ++a) {
    if (arm_count[static_cast<std::size_t>(a)] == 0) {
      throw DataError("arm " + std::to_string(a) +
                      " has no records; cannot fit its one-vs-control model");
    }
  }

  FittedUpliftModel model;
  model.spec_ = spec;
  model.fitted_on_ = data.fingerprint();
  model.n_features_ = data.n_features();
  model.k_ = k;

  const Matrix x_all = features_matrix(data);
  bool degenerate = true;
  for (std::size_t j = 0; j < x_all.cols() && degenerate; ++j) {
    for (std::size_t i = 1; i < x_all.rows(); ++i) {
      if (x_all(i, j) != x_all(0, j)) {
        degenerate = false;
        break;
      }
    }
  }
  if (x_all.cols() == 0) degenerate = true;

  BaseLearnerSpec base = spec.base;
  if (degenerate) {
    model.warnings_.push_back(
        "features have zero variance everywhere; falling back to constant base models");
    base.kind = BaseLearnerKind::kMean;
  }

  for (int arm = 1; arm < k; ++arm) {
    ArmSubset s = make_subset(data, x_all, arm);
    FittedUpliftModel::ArmModel am;
    am.arm = arm;

    switch (spec.meta) {
      case MetaLearner::kSLearner: {
        if (base.kind == BaseLearnerKind::kMean) {
          am.s_group_means = true;
          double sum0 = 0.0, sum1 = 0.0;
          for (std::size_t p : s.control) sum0 += s.y[p];
          for (std::size_t p : s.treated) sum1 += s.y[p];
          am.s_mean0 = sum0 / static_cast<double>(s.control.size());
          am.s_mean1 = sum1 / static_cast<double>(s.treated.size());
        } else {
          am.s_interaction = base.kind == BaseLearnerKind::kRidge;
          am.s_model = fit_base_learner(base, s_design(s.x, s.t01, am.s_interaction), s.y);
        }
        break;
      }
      case MetaLearner::kTLearner: {
        am.f0 = fit_base_learner(base, gather_local(s.x, s.control), gather(s.y, s.control));
        am.f1 = fit_base_learner(base, gather_local(s.x, s.treated), gather(s.y, s.treated));
        break;
      }
      case MetaLearner::kXLearner: {
        const Matrix xc = gather_local(s.x, s.control);
        const Matrix xt = gather_local(s.x, s.treated);
        am.mu0 = fit_base_learner(base, xc, gather(s.y, s.control));
        am.mu1 = fit_base_learner(base, xt, gather(s.y, s.treated));
        // Imputed individual effects on each side, then one effect model per
        // side; prediction blends them by the treatment propensity.
        std::vector<double> d1(s.treated.size()), d0(s.control.size());
        for (std::size_t r = 0; r < s.treated.size(); ++r) {
          d1[r] = s.y[s.treated[r]] - am.mu0->predict_row(xt.row_ptr(r), xt.cols());
        }
        for (std::size_t r = 0; r < s.control.size(); ++r) {
          d0[r] = am.mu1->predict_row(xc.row_ptr(r), xc.cols()) - s.y[s.control[r]];
        }
        am.tau1 = fit_base_learner(base, xt, d1);
        am.tau0 = fit_base_learner(base, xc, d0);
        if (spec.propensity_source == PropensitySource::kEstimated) {
          am.x_propensity = fit_pair_propensity(base, s.x, s.t01);
        }
        break;
      }
      case MetaLearner::kDrLearner: {
        if (s.control.size() < 2 || s.treated.size() < 2) {
          throw DataError("arm " + std::to_string(arm) +
                          " needs at least 2 control and 2 treated records for cross-fitting");
        }
        const int folds = spec.folds;
        const std::size_t ns = s.rows.size();

        // Treatment-stratified round-robin folds: both arms spread evenly,
        // so every fold's complement can fit both nuisance outcome models.
        std::vector<int> fold_of(ns, 0);
        int c0 = 0, c1 = 0;
        for (std::size_t p = 0; p < ns; ++p) {
          fold_of[p] = (s.t01[p] > 0.5 ? c1++ : c0++) % folds;
        }

        DrDiagnostics diag;
        diag.arm = arm;
        diag.customer_ids = s.ids;
        diag.fold_of = fold_of;
        diag.nuisance_training_ids.resize(static_cast<std::size_t>(folds));

        std::vector<double> mu0_hat(ns), mu1_hat(ns), e_hat(ns);
        for (int j = 0; j < folds; ++j) {
          std::vector<std::size_t> train_c, train_t, train_all, score;
          for (std::size_t p = 0; p < ns; ++p) {
            if (fold_of[p] == j) {
              score.push_back(p);
              continue;
            }
            train_all.push_back(p);
            (s.t01[p] > 0.5 ? train_t : train_c).push_back(p);
            diag.nuisance_training_ids[static_cast<std::size_t>(j)].push_back(s.ids[p]);
          }
          if (score.empty()) continue;
          auto m0 = fit_base_learner(base, gather_local(s.x, train_c), gather(s.y, train_c));
          auto m1 = fit_base_learner(base, gather_local(s.x, train_t), gather(s.y, train_t));
          std::unique_ptr<BaseLearner> ej;
          if (spec.propensity_source == PropensitySource::kEstimated) {
            ej = fit_pair_propensity(base, gather_local(s.x, train_all), gather(s.t01, train_all));
          }
          for (std::size_t p : score) {
            const double* xp = s.x.row_ptr(p);
            mu0_hat[p] = m0->predict_row(xp, s.x.cols());
            mu1_hat[p] = m1->predict_row(xp, s.x.cols());
            e_hat[p] = ej ? ej->predict_row(xp, s.x.cols()) : s.logged_e[p];
          }
        }

        // Doubly robust pseudo-outcomes with self-normalized (Hajek) inverse
        // propensity corrections: each arm's residual weights are scaled to
        // sum to the subset size, which keeps the estimator a weighted
        // average and lets a constant final model reduce to the plain
        // difference in means on uniform logs.
        double sum_w1 = 0.0, sum_w0 = 0.0;
        std::vector<double> w(ns);
        for (std::size_t p = 0; p < ns; ++p) {
          const double e = clip_probability(e_hat[p], spec.clip_lo, spec.clip_hi);
          if (s.t01[p] > 0.5) {
            w[p] = 1.0 / e;
            sum_w1 += w[p];
          } else {
            w[p] = 1.0 / (1.0 - e);
            sum_w0 += w[p];
          }
        }
        const double n_d = static_cast<double>(ns);
        std::vector<double> pseudo(ns);
        for (std::size_t p = 0; p < ns; ++p) {
          double phi = mu1_hat[p] - mu0_hat[p];
          if (s.t01[p] > 0.5) {
            phi += (s.y[p] - mu1_hat[p]) * w[p] * n_d / sum_w1;
          } else {
            phi -= (s.y[p] - mu0_hat[p]) * w[p] * n_d / sum_w0;
          }
          pseudo[p] = phi;
        }
        am.dr_final = fit_base_learner(base, s.x, pseudo);
        model.dr_diagnostics_.push_back(std::move(diag));
        break;
      }
      case MetaLearner::kCausalForest: {
        forest::ForestParams params;
        params.n_trees = spec.n_trees;
        params.honesty_fraction = spec.honesty_fraction;
        params.subsample_fraction = spec.subsample_fraction;
        params.max_depth = base.tree_max_depth;
        params.min_leaf = base.tree_min_leaf;
        params.keep_sample_ids = spec.keep_sample_ids;
        params.seed = rng::keyed_bits(spec.seed, static_cast<std::uint64_t>(arm),
                                      rng::Purpose::kGeneric, 0xf0);
        std::vector<std::uint8_t> treated(s.rows.size());
        for (std::size_t p = 0; p < s.rows.size(); ++p) {
          treated[p] = s.t01[p] > 0.5 ? 1 : 0;
        }
        am.forest = fit_honest_forest(s.x, s.y, treated, s.ids, params);
        break;
      }
    }
    model.arms_.push_back(std::move(am));
  }
  return model;
}

nlohmann::json FittedUpliftModel::to_json() const {
  nlohmann::json arms = nlohmann::json::array();
  for (const ArmModel& am : arms_) {
    nlohmann::json a{{"arm", am.arm}};
    switch (spec_.meta) {
      case MetaLearner::kSLearner:
        a["s_group_means"] = am.s_group_means;
        if (am.s_group_means) {
          a["mean0"] = am.s_mean0;
          a["mean1"] = am.s_mean1;
        } else {
          a["s_interaction"] = am.s_interaction;
          a["model"] = am.s_model->to_json();
        }
        break;
      case MetaLearner::kTLearner:
        a["f0"] = am.f0->to_json();
        a["f1"] = am.f1->to_json();
        break;
      case MetaLearner::kXLearner:
        a["mu0"] = am.mu0->to_json();
        a["mu1"] = am.mu1->to_json();
        a["tau0"] = am.tau0->to_json();
        a["tau1"] = am.tau1->to_json();
        a["propensity"] = am.x_propensity ? am.x_propensity->to_json() : nlohmann::json();
        break;
      case MetaLearner::kDrLearner:
        a["final"] = am.dr_final->to_json();
        break;
      case MetaLearner::kCausalForest:
        a["forest"] = am.forest->to_json();
        break;
    }
    arms.push_back(std::move(a));
  }
  return {{"schema_version", 1}, {"kind", "uplift_model"},     {"spec", spec_.to_json()},
          {"fitted_on", fitted_on_}, {"n_features", n_features_}, {"k", k_},
          {"warnings", warnings_},   {"arms", arms}};
}

FittedUpliftModel FittedUpliftModel::from_json(const nlohmann::json& j) {
  FittedUpliftModel model;
  try {
    if (j.at("kind").get<std::string>() != "uplift_model") {
      throw DataError("not an uplift model file");
    }
    model.spec_ = UpliftModelSpec::from_json(j.at("spec"));
    model.fitted_on_ = j.at("fitted_on").get<std::string>();
    model.n_features_ = j.at("n_features").get<std::size_t>();
    model.k_ = j.at("k").get<int>();
    model.warnings_ = j.value("warnings", std::vector<std::string>{});
    for (const auto& a : j.at("arms")) {
      ArmModel am;
      am.arm = a.at("arm").get<int>();
      switch (model.spec_.meta) {
        case MetaLearner::kSLearner:
          am.s_group_means = a.at("s_group_means").get<bool>();
          if (am.s_group_means) {
            am.s_mean0 = a.at("mean0").get<double>();
            am.s_mean1 = a.at("mean1").get<double>();
          } else {
            am.s_interaction = a.at("s_interaction").get<bool>();
            am.s_model = base_learner_from_json(a.at("model"));
          }
          break;
        case MetaLearner::kTLearner:
          am.f0 = base_learner_from_json(a.at("f0"));
          am.f1 = base_learner_from_json(a.at("f1"));
          break;
        case MetaLearner::kXLearner:
          am.mu0 = base_learner_from_json(a.at("mu0"));
          am.mu1 = base_learner_from_json(a.at("mu1"));
          am.tau0 = base_learner_from_json(a.at("tau0"));
          am.tau1 = base_learner_from_json(a.at("tau1"));
          if (!a.at("propensity").is_null()) {
            am.x_propensity = base_learner_from_json(a.at("propensity"));
          }
          break;
        case MetaLearner::kDrLearner:
          am.dr_final = base_learner_from_json(a.at("final"));
          break;
        case MetaLearner::kCausalForest:
          am.forest = forest::HonestForest::from_json(a.at("forest"));
          break;
      }
      model.arms_.push_back(std::move(am));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad model file: ") + e.what());
  }
  return model;
}

}  // namespace upliftkit
