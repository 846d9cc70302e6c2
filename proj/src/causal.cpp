#include "synthgp/causal.hpp"

#include <algorithm>
#include <cmath>

#include "synthgp/errors.hpp"

namespace synthgp {

double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw DataError("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("quantile level must be in [0, 1]");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double quantile(std::vector<double> values, double p) {
  std::sort(values.begin(), values.end());
  return quantile_sorted(values, p);
}

Summary summarize(const VectorXd& samples, double level) {
  if (samples.size() == 0) throw DataError("cannot summarize an empty sample");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("credible level must be in (0, 1)");
  std::vector<double> v(samples.data(), samples.data() + samples.size());
  std::sort(v.begin(), v.end());
  Summary s;
  s.mean = samples.mean();
  const auto k = static_cast<double>(samples.size());
  s.variance = samples.size() > 1 ? (samples.array() - s.mean).square().sum() / (k - 1.0) : 0.0;
  s.median = quantile_sorted(v, 0.5);
  s.lower = quantile_sorted(v, 0.5 * (1.0 - level));
  s.upper = quantile_sorted(v, 1.0 - 0.5 * (1.0 - level));
  return s;
}

PointwiseEffects pointwise_effects(const VectorXd& y_obs, const MatrixXd& counterfactual, double level) {
  if (counterfactual.cols() != y_obs.size()) throw DataError("pointwise effects: horizon length mismatch");
  if (counterfactual.rows() < 2) throw DataError("pointwise effects: need at least two counterfactual samples");
  PointwiseEffects out;
  out.delta = (-counterfactual).rowwise() + y_obs.transpose();
  out.per_time.reserve(static_cast<std::size_t>(y_obs.size()));
  for (Eigen::Index t = 0; t < y_obs.size(); ++t) out.per_time.push_back(summarize(out.delta.col(t), level));
  return out;
}

VectorXd cumulative_effect(const MatrixXd& delta) { return delta.rowwise().sum(); }

MatrixXd cumulative_paths(const MatrixXd& delta) {
  MatrixXd out = delta;
  for (Eigen::Index t = 1; t < out.cols(); ++t) out.col(t) += out.col(t - 1);
  return out;
}

VectorXd average_effect(const VectorXd& cumulative, int horizon) {
  if (horizon < 1) throw DataError("average effect: horizon must be at least 1");
  return cumulative / static_cast<double>(horizon);
}

double lognormal_mean(double tau, double variance) { return std::exp(tau + 0.5 * variance); }

MultiplicativeEffects multiplicative_effect(const MatrixXd& delta, const VectorXd& average, double level) {
  auto one = [&](const VectorXd& d) {
    MultiplicativeSummary m;
    m.ratio = summarize(d.array().exp().matrix(), level);
    const Summary s = summarize(d, level);
    m.lognormal = lognormal_mean(s.mean, s.variance);
    return m;
  };
  MultiplicativeEffects out;
  for (Eigen::Index t = 0; t < delta.cols(); ++t) out.per_time.push_back(one(delta.col(t)));
  out.average = one(average);
  return out;
}

std::string to_string(UncertaintyTier tier) {
  switch (tier) {
    case UncertaintyTier::FunctionOnly:
      return "function";
    case UncertaintyTier::Loadings:
      return "lambda";
    case UncertaintyTier::LoadingsNoise:
      return "lambda_noise";
  }
  return "?";
}

UncertaintyTier tier_from_string(const std::string& name) {
  if (name == "function") return UncertaintyTier::FunctionOnly;
  if (name == "lambda") return UncertaintyTier::Loadings;
  if (name == "lambda_noise") return UncertaintyTier::LoadingsNoise;
  throw ConfigError("unknown uncertainty tier '" + name + "'");
}

CausalReport build_report(const VectorXd& y_obs, const MatrixXd& counterfactual, std::vector<double> times,
                          UncertaintyTier tier, double level, bool log_scale) {
  if (static_cast<Eigen::Index>(times.size()) != y_obs.size()) throw DataError("report: times length mismatch");
  CausalReport r;
  r.tier = tier;
  r.level = level;
  r.times = std::move(times);
  r.pointwise = pointwise_effects(y_obs, counterfactual, level);
  r.cumulative = cumulative_effect(r.pointwise.delta);
  r.cumulative_trajectory = cumulative_paths(r.pointwise.delta);
  r.average = average_effect(r.cumulative, static_cast<int>(y_obs.size()));
  r.cumulative_summary = summarize(r.cumulative, level);
  r.average_summary = summarize(r.average, level);
  if (log_scale) r.multiplicative = multiplicative_effect(r.pointwise.delta, r.average, level);
  r.samples = counterfactual.rows();
  return r;
}

nlohmann::ordered_json summary_json(const Summary& s) {
  nlohmann::ordered_json j;
  j["mean"] = s.mean;
  j["variance"] = s.variance;
  j["median"] = s.median;
  j["lower"] = s.lower;
  j["upper"] = s.upper;
  return j;
}

nlohmann::ordered_json report_json(const CausalReport& r) {
  nlohmann::ordered_json j;
  j["tier"] = to_string(r.tier);
  nlohmann::ordered_json sources = nlohmann::ordered_json::array();
  sources.push_back("function");
  if (r.tier != UncertaintyTier::FunctionOnly) sources.push_back("lambda");
  if (r.tier == UncertaintyTier::LoadingsNoise) sources.push_back("noise");
  j["uncertainty_sources"] = sources;
  j["level"] = r.level;
  j["samples"] = r.samples;
  j["horizon"] = r.times.size();
  j["cumulative"] = summary_json(r.cumulative_summary);
  j["average"] = summary_json(r.average_summary);
  nlohmann::ordered_json pw = nlohmann::ordered_json::array();
  for (std::size_t t = 0; t < r.times.size(); ++t) {
    nlohmann::ordered_json row = summary_json(r.pointwise.per_time[t]);
    row["time"] = r.times[t];
    pw.push_back(row);
  }
  j["pointwise"] = pw;
  if (r.multiplicative) {
    nlohmann::ordered_json mult;
    auto ms = [](const MultiplicativeSummary& m) {
      nlohmann::ordered_json x = summary_json(m.ratio);
      x["lognormal_mean"] = m.lognormal;
      return x;
    };
    mult["average"] = ms(r.multiplicative->average);
    nlohmann::ordered_json per = nlohmann::ordered_json::array();
    for (std::size_t t = 0; t < r.times.size(); ++t) {
      nlohmann::ordered_json row = ms(r.multiplicative->per_time[t]);
      row["time"] = r.times[t];
      per.push_back(row);
    }
    mult["pointwise"] = per;
    j["multiplicative"] = mult;
  }
  return j;
}

}  // namespace synthgp
