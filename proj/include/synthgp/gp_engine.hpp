#pragma once

// Exact Gaussian-process inference over a coregionalized structure:
// log marginal likelihood, its analytic gradient, the posterior predictive,
// and joint sampling from it.

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "synthgp/mogp_cov.hpp"

namespace synthgp {

// Cholesky factor of a covariance plus the diagonal jitter that was needed.
struct Factorization {
  Eigen::LLT<MatrixXd> llt;
  double jitter = 0.0;
};

// Tries the plain matrix first; on failure adds jitter starting at
// 1e-8 * mean(diag) and growing x10 up to 1e-2 * mean(diag). Throws
// NumericalError when every attempt fails.
Factorization factorize(const MatrixXd& sigma);

// -0.5 y' S^{-1} y - 0.5 log|S| - (n/2) log(2 pi), via one Cholesky factor.
double log_marginal_likelihood(const VectorXd& y, const MatrixXd& sigma);
double log_marginal_likelihood(const VectorXd& y, const Factorization& factor);

// Sigma = K(X, X) + Omega for the panel's training inputs.
MatrixXd noisy_covariance(const MogpStructure& structure, const std::vector<SeriesInputs>& inputs);

struct LmlEvaluation {
  double value = 0.0;
  VectorXd gradient;  // d lml / d theta for every entry of parameter_table (natural scale)
  double jitter = 0.0;
};

// Log marginal likelihood and its gradient with respect to every
// hyperparameter (frozen ones included; callers select what they need).
LmlEvaluation lml_gradient(const MogpStructure& structure, const Panel& data);

class FittedGp {
 public:
  FittedGp(MogpStructure structure, Panel data);

  [[nodiscard]] const MogpStructure& structure() const { return structure_; }
  [[nodiscard]] const Panel& data() const { return data_; }
  [[nodiscard]] const MatrixXd& sigma() const { return sigma_; }
  [[nodiscard]] const Factorization& factor() const { return factor_; }
  [[nodiscard]] const VectorXd& alpha() const { return alpha_; }
  [[nodiscard]] double log_ml() const { return log_ml_; }
  [[nodiscard]] double jitter() const { return factor_.jitter; }

 private:
  MogpStructure structure_;
  Panel data_;
  MatrixXd sigma_;
  Factorization factor_;
  VectorXd alpha_;
  double log_ml_ = 0.0;
};

struct PredictiveDistribution {
  VectorXd mean;
  MatrixXd cov;
  std::vector<int> series;  // owner series of each test row
};

// mean = K(X*, X) Sigma^{-1} y; cov = K(X*, X*) - K(X*, X) Sigma^{-1} K(X, X*).
// With include_noise the owner series' omega^2 is added to the diagonal,
// giving the distribution of new observations instead of latent values.
PredictiveDistribution posterior_predictive(const FittedGp& model, const std::vector<SeriesInputs>& test,
                                            bool include_noise = false);

// N joint draws (rows) from N(mean, cov). Negative eigenvalues of cov are
// clamped to zero.
MatrixXd sample_predictive(const PredictiveDistribution& dist, int n, std::uint64_t seed);

}  // namespace synthgp
