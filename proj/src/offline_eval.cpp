#include "upliftkit/offline_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "upliftkit/errors.hpp"

namespace upliftkit::eval {

nlohmann::json UpliftCurve::to_json() const {
  nlohmann::json j;
  j["arm"] = arm;
  j["auc"] = auc;
  j["n_ranks"] = points.size();
  // Reports keep a thinned trace; the full curve is recomputable from data.
  nlohmann::json pts = nlohmann::json::array();
  const std::size_t step = std::max<std::size_t>(1, points.size() / 200);
  for (std::size_t i = 0; i < points.size(); i += step) {
    pts.push_back({points[i].rank, points[i].value});
  }
  if (!points.empty() && (points.size() - 1) % step != 0) {
    pts.push_back({points.back().rank, points.back().value});
  }
  j["points"] = std::move(pts);
  return j;
}

UpliftCurve uplift_curve(const std::vector<double>& scores, const ExperimentDataset& data,
                         int arm) {
  const std::size_t n = data.size();
  if (scores.size() != n) throw DataError("scores length must equal the dataset size");
  if (arm < 1 || arm >= data.k()) {
    throw EvalError("arm " + std::to_string(arm) + " out of range for this dataset");
  }
  bool has_arm = false;
  bool has_control = false;
  for (const auto& rec : data.records()) {
    if (rec.treatment == arm) has_arm = true;
    if (rec.treatment == 0) has_control = true;
  }
  if (!has_arm) throw EvalError("arm " + std::to_string(arm) + " absent from data");
  if (!has_control) throw EvalError("control arm absent from data");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return data.records()[a].customer_id < data.records()[b].customer_id;
  });

  // Accumulating outcomes relative to a fixed shift leaves every prefix
  // difference unchanged but makes constant-outcome data exactly zero.
  const double shift = data.records()[0].outcome;

  UpliftCurve out;
  out.arm = arm;
  out.points.reserve(n);
  long double sum_arm = 0.0L;
  long double sum_ctrl = 0.0L;
  std::size_t n_arm = 0;
  std::size_t n_ctrl = 0;
  for (std::size_t r = 1; r <= n; ++r) {
    const auto& rec = data.records()[order[r - 1]];
    if (rec.treatment == arm) {
      sum_arm += static_cast<long double>(rec.outcome) - shift;
      n_arm++;
    } else if (rec.treatment == 0) {
      sum_ctrl += static_cast<long double>(rec.outcome) - shift;
      n_ctrl++;
    }
    double value = 0.0;
    if (n_arm > 0 && n_ctrl > 0) {
      const long double diff = sum_arm / static_cast<long double>(n_arm) -
                               sum_ctrl / static_cast<long double>(n_ctrl);
      value = static_cast<double>(diff * static_cast<long double>(r) /
                                  static_cast<long double>(n));
    }
    out.points.push_back({r, value});
  }

  long double area = 0.0L;
  long double prev = 0.0L;
  for (const auto& pt : out.points) {
    area += (prev + static_cast<long double>(pt.value)) / 2.0L /
            static_cast<long double>(n);
    prev = pt.value;
  }
  out.auc = static_cast<double>(area);
  return out;
}

double PolicyValueEstimate::snips_or_throw() const {
  if (!snips) {
    throw EvalError("snips is undefined: no logged action matched the policy (0/0)");
  }
  return *snips;
}

nlohmann::json PolicyValueEstimate::to_json() const {
  nlohmann::json j;
  j["ips"] = ips;
  if (snips) {
    j["snips"] = *snips;
  } else {
    j["snips"] = nullptr;
  }
  j["match_count"] = match_count;
  j["effective_sample_size"] = effective_sample_size;
  j["warnings"] = warnings;
  return j;
}

PolicyValueEstimate ips(const std::vector<int>& policy, const ExperimentDataset& data) {
  const std::size_t n = data.size();
  if (n == 0) throw DataError("cannot evaluate a policy on an empty dataset");
  if (policy.size() != n) throw DataError("policy length must equal the dataset size");

  long double numerator = 0.0L;
  long double weight_sum = 0.0L;
  long double weight_sq_sum = 0.0L;
  std::size_t matches = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rec = data.records()[i];
    if (policy[i] < 0 || policy[i] >= data.k()) {
      throw DataError("policy assigns an invalid arm to customer " +
                      std::to_string(rec.customer_id));
    }
    if (policy[i] != rec.treatment) continue;
    const double rho = rec.logging_propensities[static_cast<std::size_t>(rec.treatment)];
    if (!(rho > 0.0)) {
      throw EvalError("zero propensity on a matched record (customer " +
                      std::to_string(rec.customer_id) + ")");
    }
    const long double w = 1.0L / static_cast<long double>(rho);
    numerator += static_cast<long double>(rec.outcome) * w;
    weight_sum += w;
    weight_sq_sum += w * w;
    matches++;
  }

  PolicyValueEstimate out;
  out.match_count = matches;
  if (matches == 0) {
    out.ips = 0.0;
    out.effective_sample_size = 0.0;
    out.warnings.push_back(
        "no-overlap: the policy never matches a logged action; ips reported as 0");
    return out;
  }
  out.ips = static_cast<double>(numerator / static_cast<long double>(n));
  out.snips = static_cast<double>(numerator / weight_sum);
  out.effective_sample_size = static_cast<double>(weight_sum * weight_sum / weight_sq_sum);
  return out;
}

nlohmann::json TruthReport::to_json() const {
  nlohmann::json j;
  j["true_value"] = true_value;
  j["oracle_value"] = oracle_value;
  j["regret_vs_oracle"] = regret_vs_oracle;
  j["baseline_values"] = baseline_values;
  return j;
}

TruthReport true_value(const std::vector<int>& policy, const GroundTruth& truth) {
  const std::size_t n = truth.potential_outcomes.rows();
  const std::size_t k = truth.potential_outcomes.cols();
  if (n == 0) throw EvalError("ground truth is empty");
  if (policy.size() != n) {
    throw EvalError("policy does not cover every customer in the truth table");
  }
  long double policy_sum = 0.0L;
  long double oracle_sum = 0.0L;
  std::vector<long double> arm_sums(k, 0.0L);
  for (std::size_t i = 0; i < n; ++i) {
    const int a = policy[i];
    if (a < 0 || static_cast<std::size_t>(a) >= k) {
      throw EvalError("policy assigns an arm outside the truth table");
    }
    policy_sum += truth.potential_outcomes(i, static_cast<std::size_t>(a));
    long double best = truth.potential_outcomes(i, 0);
    for (std::size_t arm = 0; arm < k; ++arm) {
      const double po = truth.potential_outcomes(i, arm);
      arm_sums[arm] += po;
      best = std::max(best, static_cast<long double>(po));
    }
    oracle_sum += best;
  }

  TruthReport out;
  const long double nn = static_cast<long double>(n);
  out.true_value = static_cast<double>(policy_sum / nn);
  out.oracle_value = static_cast<double>(oracle_sum / nn);
  out.regret_vs_oracle = static_cast<double>((oracle_sum - policy_sum) / nn);
  out.baseline_values["treat_no_one"] = static_cast<double>(arm_sums[0] / nn);
  for (std::size_t arm = 1; arm < k; ++arm) {
    out.baseline_values["treat_everyone_arm_" + std::to_string(arm)] =
        static_cast<double>(arm_sums[arm] / nn);
  }
  return out;
}

nlohmann::json make_report(const ReportBundle& bundle) {
  if (bundle.data == nullptr) throw ConfigError("report needs a dataset");
  const ExperimentDataset& data = *bundle.data;
  const std::string fp = data.fingerprint();

  if (bundle.cate != nullptr) {
    if (!bundle.cate->scored_on.empty() && bundle.cate->scored_on != fp) {
      throw ConfigError("fingerprint mismatch: estimates were scored on a different dataset");
    }
    if (bundle.cate->tau_hat.rows() != data.size()) {
      throw ConfigError("fingerprint mismatch: estimate rows do not cover this dataset");
    }
  }
  if (bundle.model != nullptr && bundle.cate != nullptr &&
      !bundle.cate->fitted_on.empty() && bundle.model->fitted_on() != bundle.cate->fitted_on) {
    throw ConfigError("fingerprint mismatch: model and estimates were fit on different data");
  }
  if (bundle.policy != nullptr && bundle.policy->size() != data.size()) {
    throw ConfigError("fingerprint mismatch: policy does not cover this dataset");
  }

  nlohmann::json j;
  j["schema_version"] = 1;
  j["kind"] = "evaluation_report";
  j["config_hash"] = bundle.config_hash;
  j["seed"] = bundle.seed;
  j["dataset"] = {{"fingerprint", fp},
                  {"n_customers", data.size()},
                  {"n_treatments", data.k()},
                  {"n_features", data.n_features()},
                  {"has_truth", data.truth().has_value()},
                  {"provenance", data.provenance()}};
  if (bundle.model != nullptr) {
    j["model"] = bundle.model->spec().to_json();
    j["model_warnings"] = bundle.model->warnings();
  }
  if (bundle.cate != nullptr) {
    nlohmann::json curves = nlohmann::json::object();
    for (std::size_t a = 0; a < bundle.cate->tau_hat.cols(); ++a) {
      std::vector<double> scores(data.size());
      for (std::size_t i = 0; i < data.size(); ++i) scores[i] = bundle.cate->tau_hat(i, a);
      const UpliftCurve curve = uplift_curve(scores, data, static_cast<int>(a) + 1);
      curves["arm_" + std::to_string(a + 1)] = curve.to_json();
    }
    j["uplift_curves"] = std::move(curves);
  }
  if (bundle.policy != nullptr) {
    const PolicyValueEstimate est = ips(*bundle.policy, data);
    j["estimates"] = est.to_json();
    j["targeting_shares"] = alloc::targeting_shares(*bundle.policy, data.k());
    if (data.truth()) {
      const TruthReport tr = true_value(*bundle.policy, *data.truth());
      j["truth"] = tr.to_json();
      j["truth"]["ips_calibration_gap"] = std::abs(est.ips - tr.true_value);
    }
  }
  if (bundle.solved != nullptr) {
    j["policy"] = {{"objective_value", bundle.solved->objective_value},
                   {"solver", alloc::to_string(bundle.solved->solver)},
                   {"feasible", bundle.solved->feasible}};
    j["audit"] = bundle.solved->audit.to_json();
  }
  j["notes"] = bundle.notes;
  return j;
}

namespace {

// Shared scaffolding for the two plots: fixed canvas, two axes, and helpers
// mapping data space to pixel space with stable two-decimal formatting.
constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kMargin = 54.0;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string fmt_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

struct Frame {
  double x_lo, x_hi, y_lo, y_hi;
  double px(double x) const {
    const double span = x_hi > x_lo ? x_hi - x_lo : 1.0;
    return kMargin + (x - x_lo) / span * (kWidth - 2 * kMargin);
  }
  double py(double y) const {
    const double span = y_hi > y_lo ? y_hi - y_lo : 1.0;
    return kHeight - kMargin - (y - y_lo) / span * (kHeight - 2 * kMargin);
  }
};

void open_svg(std::ostringstream& svg, const std::string& title) {
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << kWidth << " "
      << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n"
      << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
      << title << "</text>\n";
}

void draw_axes(std::ostringstream& svg, const Frame& f, const std::string& x_label,
               const std::string& y_label) {
  svg << "<line x1=\"" << fmt(kMargin) << "\" y1=\"" << fmt(kHeight - kMargin) << "\" x2=\""
      << fmt(kWidth - kMargin) << "\" y2=\"" << fmt(kHeight - kMargin)
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << fmt(kMargin) << "\" y1=\"" << fmt(kMargin) << "\" x2=\""
      << fmt(kMargin) << "\" y2=\"" << fmt(kHeight - kMargin) << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = f.x_lo + (f.x_hi - f.x_lo) * t / 4.0;
    const double yv = f.y_lo + (f.y_hi - f.y_lo) * t / 4.0;
    svg << "<text x=\"" << fmt(f.px(xv)) << "\" y=\"" << fmt(kHeight - kMargin + 16)
        << "\" text-anchor=\"middle\">" << fmt_tick(xv) << "</text>\n";
    svg << "<text x=\"" << fmt(kMargin - 6) << "\" y=\"" << fmt(f.py(yv) + 4)
        << "\" text-anchor=\"end\">" << fmt_tick(yv) << "</text>\n";
  }
  svg << "<text x=\"" << kWidth / 2 << "\" y=\"" << fmt(kHeight - 12)
      << "\" text-anchor=\"middle\">" << x_label << "</text>\n";
  svg << "<text x=\"16\" y=\"" << kHeight / 2
      << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << kHeight / 2 << ")\">"
      << y_label << "</text>\n";
  if (f.y_lo < 0.0 && f.y_hi > 0.0) {
    svg << "<line x1=\"" << fmt(kMargin) << "\" y1=\"" << fmt(f.py(0.0)) << "\" x2=\""
        << fmt(kWidth - kMargin) << "\" y2=\"" << fmt(f.py(0.0))
        << "\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 3\"/>\n";
  }
}

}  // namespace

std::string uplift_curve_svg(const UpliftCurve& curve) {
  const std::size_t n = curve.points.size();
  double y_lo = 0.0;
  double y_hi = 0.0;
  for (const auto& pt : curve.points) {
    y_lo = std::min(y_lo, pt.value);
    y_hi = std::max(y_hi, pt.value);
  }
  if (y_hi == y_lo) y_hi = y_lo + 1.0;
  const double pad = (y_hi - y_lo) * 0.08;
  Frame f{0.0, 1.0, y_lo - pad, y_hi + pad};

  std::ostringstream svg;
  open_svg(svg, "Cumulative uplift, arm " + std::to_string(curve.arm) +
                    " (auc " + fmt_tick(curve.auc) + ")");
  draw_axes(svg, f, "fraction targeted", "cumulative uplift");
  svg << "<polyline fill=\"none\" stroke=\"#1a6fb4\" stroke-width=\"1.5\" points=\"";
  svg << fmt(f.px(0.0)) << "," << fmt(f.py(0.0));
  const std::size_t step = std::max<std::size_t>(1, n / 512);
  for (std::size_t i = 0; i < n; i += step) {
    const double x = static_cast<double>(curve.points[i].rank) / static_cast<double>(n);
    svg << " " << fmt(f.px(x)) << "," << fmt(f.py(curve.points[i].value));
  }
  if (n > 0) {
    svg << " " << fmt(f.px(1.0)) << "," << fmt(f.py(curve.points.back().value));
  }
  svg << "\"/>\n</svg>\n";
  return svg.str();
}

std::string sweep_svg(const std::vector<alloc::SweepPoint>& points,
                      const std::string& constraint_id) {
  if (points.empty()) throw ConfigError("cannot plot an empty sweep");
  double x_lo = points.front().bound;
  double x_hi = points.back().bound;
  if (x_hi == x_lo) x_hi = x_lo + 1.0;
  double y_lo = points.front().objective;
  double y_hi = y_lo;
  for (const auto& pt : points) {
    y_lo = std::min(y_lo, pt.objective);
    y_hi = std::max(y_hi, pt.objective);
  }
  if (y_hi == y_lo) y_hi = y_lo + 1.0;
  const double pad = (y_hi - y_lo) * 0.08;
  Frame f{x_lo, x_hi, y_lo - pad, y_hi + pad};

  std::ostringstream svg;
  open_svg(svg, "Objective vs bound (" + constraint_id + ")");
  draw_axes(svg, f, "constraint bound", "objective value");
  svg << "<polyline fill=\"none\" stroke=\"#b4541a\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (i > 0) svg << " ";
    svg << fmt(f.px(points[i].bound)) << "," << fmt(f.py(points[i].objective));
  }
  svg << "\"/>\n";
  for (const auto& pt : points) {
    svg << "<circle cx=\"" << fmt(f.px(pt.bound)) << "\" cy=\"" << fmt(f.py(pt.objective))
        << "\" r=\"3.5\" fill=\"" << (pt.feasible ? "#b4541a" : "white")
        << "\" stroke=\"#b4541a\"/>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace upliftkit::eval
