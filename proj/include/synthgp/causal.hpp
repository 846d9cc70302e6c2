#pragma once

// Causal estimands from observed post-intervention outcomes and pooled
// counterfactual trajectories. Every aggregate is computed per sample and
// then summarized.

#include <Eigen/Dense>
#include <json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace synthgp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Empirical quantile by linear interpolation of order statistics (type 7).
double quantile(std::vector<double> values, double p);
double quantile_sorted(std::span<const double> sorted, double p);

struct Summary {
  double mean = 0.0;
  double variance = 0.0;  // unbiased
  double median = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

// Mean, unbiased variance, median, and the central `level` band.
Summary summarize(const VectorXd& samples, double level);

struct PointwiseEffects {
  MatrixXd delta;  // K x H, y_obs - counterfactual
  std::vector<Summary> per_time;
};

PointwiseEffects pointwise_effects(const VectorXd& y_obs, const MatrixXd& counterfactual, double level = 0.95);

// Per-sample sum over the horizon.
VectorXd cumulative_effect(const MatrixXd& delta);
// Per-sample running sums (K x H), for cumulative trajectories.
MatrixXd cumulative_paths(const MatrixXd& delta);
// Per-sample cumulative / H.
VectorXd average_effect(const VectorXd& cumulative, int horizon);

double lognormal_mean(double tau, double variance);

struct MultiplicativeSummary {
  Summary ratio;             // of exp(delta) samples
  double lognormal = 0.0;    // exp(tau + var / 2)
};

struct MultiplicativeEffects {
  std::vector<MultiplicativeSummary> per_time;
  MultiplicativeSummary average;  // exp of the per-sample average effect
};

MultiplicativeEffects multiplicative_effect(const MatrixXd& delta, const VectorXd& average, double level = 0.95);

enum class UncertaintyTier { FunctionOnly, Loadings, LoadingsNoise };

std::string to_string(UncertaintyTier tier);
UncertaintyTier tier_from_string(const std::string& name);

struct CausalReport {
  UncertaintyTier tier = UncertaintyTier::FunctionOnly;
  double level = 0.95;
  std::vector<double> times;  // post-intervention times
  PointwiseEffects pointwise;
  VectorXd cumulative;
  MatrixXd cumulative_trajectory;  // K x H
  VectorXd average;
  Summary cumulative_summary;
  Summary average_summary;
  std::optional<MultiplicativeEffects> multiplicative;
  Eigen::Index samples = 0;
};

CausalReport build_report(const VectorXd& y_obs, const MatrixXd& counterfactual, std::vector<double> times,
                          UncertaintyTier tier, double level, bool log_scale);

nlohmann::ordered_json summary_json(const Summary& s);
nlohmann::ordered_json report_json(const CausalReport& report);

}  // namespace synthgp
