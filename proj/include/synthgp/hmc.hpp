#pragma once

// Hamiltonian Monte Carlo with an identity (or user) mass matrix, plus the
// conditional posterior of the coregionalization loadings given the type-II
// ML kernel hyperparameters, and counterfactual sampling from a set of
// posterior draws.

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "synthgp/gp_engine.hpp"
#include "synthgp/mogp_cov.hpp"

namespace synthgp {

struct HmcConfig {
  double step_size = 0.01;
  int leapfrog_steps = 20;
  int samples = 5000;    // kept after burn-in
  double burn_in = 0.2;  // fraction of the total run discarded
  MatrixXd mass;         // empty = identity
  std::uint64_t seed = 0;

  void validate(Eigen::Index dim) const;
  // Iterations discarded before the kept samples: round(f N / (1 - f)).
  [[nodiscard]] int burn_in_iterations() const;
};

// log density and its gradient; -inf marks an infeasible point.
using LogDensity = std::function<double(const VectorXd& x, VectorXd& grad)>;

struct LeapfrogResult {
  VectorXd position;
  VectorXd momentum;
  double log_density = 0.0;  // at position
  VectorXd gradient;         // at position
  bool diverged = false;
};

// L steps of size eps for H(x, p) = -log pi(x) + p' M^{-1} p / 2.
// `gradient` is grad log pi at the starting position.
LeapfrogResult leapfrog(const LogDensity& target, const VectorXd& position, const VectorXd& momentum,
                        const VectorXd& gradient, double eps, int steps, const MatrixXd& mass_inverse);

// Convenience overload that evaluates the starting gradient itself and uses
// an identity mass matrix.
LeapfrogResult leapfrog(const LogDensity& target, const VectorXd& position, const VectorXd& momentum, double eps,
                        int steps);

struct HmcResult {
  MatrixXd samples;      // N x dim, burn-in removed
  VectorXd log_density;  // per kept sample
  double acceptance = 0.0;  // over kept iterations
  VectorXd ess;             // per coordinate
  int divergences = 0;      // over all iterations
  int iterations = 0;
  int burn_in = 0;
  std::vector<std::string> warnings;
};

HmcResult hmc_sample(const LogDensity& target, const VectorXd& initial, const HmcConfig& config);

// Effective sample size of one chain (Geyer initial positive sequence).
double effective_sample_size(const VectorXd& chain);

// Negative Hessian of log pi at x from central differences of the gradient,
// symmetrized, with eigenvalues floored at floor_ratio times the largest.
// Used as a mass matrix it whitens a near-Gaussian target.
MatrixXd laplace_mass(const LogDensity& target, const VectorXd& x, double rel_step = 1e-4, double floor_ratio = 1e-6);

// ---------------------------------------------------------------------------
// Loadings posterior

struct PriorSpec {
  double loading_mean = 0.0;
  double loading_sd = 10.0;
  double noise_shape = 0.1;  // Gamma(shape, rate) on omega^2
  double noise_rate = 1.0;

  void validate() const;
};

// Target over z = (loadings of every non-frozen term, term-major) and,
// when sample_noise is set, u = log omega^2 for every series. Nuggets and
// kernel hyperparameters stay at their values in `structure`.
class LoadingsPosterior {
 public:
  LoadingsPosterior(MogpStructure structure, Panel data, PriorSpec priors, bool sample_noise);

  [[nodiscard]] Eigen::Index dim() const;
  [[nodiscard]] VectorXd initial() const;
  [[nodiscard]] std::vector<std::string> coordinate_names() const;
  [[nodiscard]] bool samples_noise() const { return sample_noise_; }
  [[nodiscard]] const MogpStructure& base() const { return structure_; }
  [[nodiscard]] const Panel& data() const { return data_; }

  // log p(y | z) + log p(z) including normalizing constants and the
  // log-space Jacobian for the noises.
  double log_target(const VectorXd& z, VectorXd& grad) const;
  // Likelihood-free version (prior only), for diagnostics.
  double log_prior(const VectorXd& z, VectorXd& grad) const;

  [[nodiscard]] MogpStructure structure_at(const VectorXd& z) const;
  [[nodiscard]] LogDensity density() const;

 private:
  MogpStructure structure_;
  Panel data_;
  PriorSpec priors_;
  bool sample_noise_;
  std::vector<int> sampled_terms_;
  // Kernel hyperparameters stay fixed, so the per-term grams are computed once.
  std::vector<MatrixXd> grams_;
  std::vector<int> owner_;
  VectorXd y_;
};

struct CounterfactualSamples {
  MatrixXd paths;  // K x H joint trajectories
  int used = 0;    // draws that produced trajectories
  int skipped = 0;  // draws whose covariance failed to factorize
};

// For each row of `draws` (coordinates of `posterior`), forms the posterior
// predictive at `test` and draws n_pred joint trajectories.
CounterfactualSamples counterfactual_posterior(const LoadingsPosterior& posterior, const MatrixXd& draws,
                                               const std::vector<SeriesInputs>& test, int n_pred,
                                               std::uint64_t seed, bool include_noise);

// Mixes a 64-bit seed with a stream index (splitmix64).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace synthgp
