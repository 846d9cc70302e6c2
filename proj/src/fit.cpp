#include "synthgp/fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "synthgp/errors.hpp"

namespace synthgp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

FreeParameterMap::FreeParameterMap(const MogpStructure& structure) : table(parameter_table(structure)) {
  for (int i = 0; i < static_cast<int>(table.size()); ++i) {
    if (table[i].free) free.push_back(i);
  }
}

VectorXd FreeParameterMap::to_coordinates() const {
  VectorXd u(static_cast<Eigen::Index>(free.size()));
  for (std::size_t k = 0; k < free.size(); ++k) {
    const auto& h = table[free[k]];
    u(static_cast<Eigen::Index>(k)) = h.transform == Transform::Log ? std::log(h.value) : h.value;
  }
  return u;
}

void FreeParameterMap::from_coordinates(const VectorXd& u, MogpStructure& structure) {
  for (std::size_t k = 0; k < free.size(); ++k) {
    auto& h = table[free[k]];
    const double v = u(static_cast<Eigen::Index>(k));
    h.value = h.transform == Transform::Log ? std::exp(v) : v;
  }
  apply_parameters(structure, table);
}

VectorXd FreeParameterMap::lower(double log_bound) const {
  VectorXd out(static_cast<Eigen::Index>(free.size()));
  for (std::size_t k = 0; k < free.size(); ++k) {
    const auto& h = table[free[k]];
    if (h.transform == Transform::Log) {
      out(static_cast<Eigen::Index>(k)) = h.lower > 0.0 ? std::log(h.lower) : -log_bound;
    } else {
      out(static_cast<Eigen::Index>(k)) = h.lower;
    }
  }
  return out;
}

VectorXd FreeParameterMap::upper(double log_bound) const {
  VectorXd out(static_cast<Eigen::Index>(free.size()));
  for (std::size_t k = 0; k < free.size(); ++k) {
    const auto& h = table[free[k]];
    if (h.transform == Transform::Log) {
      out(static_cast<Eigen::Index>(k)) = std::isfinite(h.upper) ? std::log(h.upper) : log_bound;
    } else {
      out(static_cast<Eigen::Index>(k)) = h.upper;
    }
  }
  return out;
}

VectorXd FreeParameterMap::coordinate_gradient(const VectorXd& natural, const VectorXd& u) const {
  VectorXd g(static_cast<Eigen::Index>(free.size()));
  for (std::size_t k = 0; k < free.size(); ++k) {
    const auto& h = table[free[k]];
    const auto kk = static_cast<Eigen::Index>(k);
    const double d = natural(free[k]);
    g(kk) = h.transform == Transform::Log ? d * std::exp(u(kk)) : d;
  }
  return g;
}

FitResult fit_ml2(const MogpStructure& structure, const Panel& data, const FitConfig& config) {
  if (config.restarts < 1) throw ConfigError("fit: restarts must be at least 1");
  if (data.outputs_count() != structure.outputs()) throw ConfigError("fit: panel and structure disagree on series count");

  FreeParameterMap base(structure);
  const VectorXd u0 = base.to_coordinates();
  const VectorXd lo = base.lower(config.log_bound);
  const VectorXd hi = base.upper(config.log_bound);

  FitResult result;
  result.structure = structure;

  if (base.free.empty()) {
    const FittedGp model(structure, data);
    result.initial_log_ml = result.log_ml = model.log_ml();
    result.model = model;
    result.best.status = OptimizerStatus::ConvergedTrivially;
    result.best.f = -model.log_ml();
    result.restarts.push_back({false, "", OptimizerStatus::ConvergedTrivially, model.log_ml(), 0});
    result.best_restart = 0;
    return result;
  }

  auto objective_for = [&](MogpStructure& work, FreeParameterMap& map) {
    return [&work, &map, &data](const VectorXd& u, VectorXd& grad) -> double {
      map.from_coordinates(u, work);
      try {
        const LmlEvaluation e = lml_gradient(work, data);
        grad = -map.coordinate_gradient(e.gradient, u);
        return -e.value;
      } catch (const NumericalError&) {
        grad = VectorXd::Zero(u.size());
        return kInf;
      }
    };
  };

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, config.jitter_sd);
  double best_f = kInf;
  bool have_initial = false;

  for (int r = 0; r < config.restarts; ++r) {
    VectorXd start = u0;
    if (r > 0) {
      for (std::size_t k = 0; k < base.free.size(); ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        const double e = normal(rng);
        start(kk) = base.table[base.free[k]].transform == Transform::Log ? start(kk) + e : start(kk) * std::exp(e);
      }
    }
    start = start.cwiseMax(lo).cwiseMin(hi);

    MogpStructure work = structure;
    FreeParameterMap map = base;
    OptimizerConfig oc = config.optimizer;
    oc.lower = lo;
    oc.upper = hi;
    if (r > 0) oc.trace_path.reset();
    RestartOutcome outcome;
    try {
      OptimizerResult opt = lbfgsb_minimize(objective_for(work, map), start, oc);
      outcome.status = opt.status;
      outcome.log_ml = -opt.f;
      outcome.iterations = opt.iterations;
      if (r == 0) {
        result.initial_log_ml = opt.trace.empty() ? -opt.f : -opt.trace.front().f_previous;
        have_initial = true;
      }
      if (opt.f < best_f) {
        best_f = opt.f;
        result.best = std::move(opt);
        result.best_restart = r;
      }
    } catch (const NumericalError& e) {
      outcome.failed = true;
      outcome.message = e.what();
    }
    result.restarts.push_back(outcome);
  }

  if (result.best_restart < 0 || !std::isfinite(best_f)) {
    throw NumericalError("fit: every restart failed to factorize the covariance");
  }
  if (!have_initial) result.initial_log_ml = -kInf;

  MogpStructure fitted = structure;
  FreeParameterMap map = base;
  map.from_coordinates(result.best.x, fitted);
  result.structure = fitted;
  result.model.emplace(fitted, data);
  result.log_ml = result.model->log_ml();
  return result;
}

}  // namespace synthgp
