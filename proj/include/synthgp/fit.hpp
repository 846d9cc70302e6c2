#pragma once

// Type-II maximum likelihood over the free hyperparameters of a structure.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "synthgp/gp_engine.hpp"
#include "synthgp/mogp_cov.hpp"
#include "synthgp/optimizer.hpp"

namespace synthgp {

struct FitConfig {
  OptimizerConfig optimizer;  // bounds are derived from the parameter table
  int restarts = 3;
  double jitter_sd = 0.5;  // log-space sd of the restart perturbation
  std::uint64_t seed = 0;
  // Log-transformed parameters are boxed to [-log_bound, log_bound] unless
  // a tighter natural-scale bound applies.
  double log_bound = 20.0;
};

struct RestartOutcome {
  bool failed = false;
  std::string message;
  OptimizerStatus status = OptimizerStatus::MaxIterations;
  double log_ml = 0.0;
  int iterations = 0;
};

struct FitResult {
  std::optional<FittedGp> model;
  MogpStructure structure;  // optimized values
  OptimizerResult best;     // in transformed coordinates
  double initial_log_ml = 0.0;
  double log_ml = 0.0;
  std::vector<RestartOutcome> restarts;
  int best_restart = -1;
};

// Free parameters of the table mapped to optimizer coordinates (log for
// positive parameters, identity for loadings) and back.
struct FreeParameterMap {
  std::vector<Hyperparameter> table;
  std::vector<int> free;  // table indices

  explicit FreeParameterMap(const MogpStructure& structure);
  [[nodiscard]] VectorXd to_coordinates() const;
  void from_coordinates(const VectorXd& u, MogpStructure& structure);
  [[nodiscard]] VectorXd lower(double log_bound) const;
  [[nodiscard]] VectorXd upper(double log_bound) const;
  // Chain rule from natural-scale gradient (full table) to coordinates.
  [[nodiscard]] VectorXd coordinate_gradient(const VectorXd& natural, const VectorXd& u) const;
};

// Maximizes the log marginal likelihood. Restart 0 starts from the
// structure's values; later restarts perturb them. Throws NumericalError
// when every restart fails.
FitResult fit_ml2(const MogpStructure& structure, const Panel& data, const FitConfig& config);

}  // namespace synthgp
