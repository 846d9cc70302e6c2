#include "synthgp/hmc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "synthgp/errors.hpp"

namespace synthgp {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Energy error beyond which a trajectory counts as divergent.
constexpr double kDivergenceEnergy = 1000.0;

}  // namespace

void HmcConfig::validate(Eigen::Index dim) const {
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ConfigError("hmc: step size must be positive");
  if (leapfrog_steps < 1) throw ConfigError("hmc: leapfrog steps must be at least 1");
  if (samples < 1) throw ConfigError("hmc: samples must be at least 1");
  if (!(burn_in >= 0.0 && burn_in < 1.0)) throw ConfigError("hmc: burn_in must be in [0, 1)");
  if (mass.size() != 0) {
    if (mass.rows() != dim || mass.cols() != dim) throw ConfigError("hmc: mass matrix has the wrong dimension");
    if (!mass.isApprox(mass.transpose(), 1e-12)) throw ConfigError("hmc: mass matrix is not symmetric");
    Eigen::LLT<MatrixXd> llt(mass);
    if (llt.info() != Eigen::Success) throw ConfigError("hmc: mass matrix is not positive definite");
  }
}

int HmcConfig::burn_in_iterations() const {
  return static_cast<int>(std::lround(burn_in * samples / (1.0 - burn_in)));
}

LeapfrogResult leapfrog(const LogDensity& target, const VectorXd& position, const VectorXd& momentum,
                        const VectorXd& gradient, double eps, int steps, const MatrixXd& mass_inverse) {
  LeapfrogResult r;
  r.position = position;
  r.momentum = momentum;
  r.gradient = gradient;
  r.momentum += 0.5 * eps * r.gradient;
  for (int l = 0; l < steps; ++l) {
    r.position += eps * (mass_inverse * r.momentum);
    r.log_density = target(r.position, r.gradient);
    if (!std::isfinite(r.log_density) || !r.gradient.allFinite() || !r.position.allFinite()) {
      r.diverged = true;
      return r;
    }
    const double scale = l + 1 < steps ? 1.0 : 0.5;
    r.momentum += scale * eps * r.gradient;
  }
  if (!r.momentum.allFinite()) r.diverged = true;
  return r;
}

LeapfrogResult leapfrog(const LogDensity& target, const VectorXd& position, const VectorXd& momentum, double eps,
                        int steps) {
  VectorXd grad(position.size());
  const double lp = target(position, grad);
  if (!std::isfinite(lp) || !grad.allFinite()) {
    LeapfrogResult r;
    r.position = position;
    r.momentum = momentum;
    r.diverged = true;
    return r;
  }
  const auto n = position.size();
  return leapfrog(target, position, momentum, grad, eps, steps, MatrixXd::Identity(n, n));
}

double effective_sample_size(const VectorXd& chain) {
  const Eigen::Index n = chain.size();
  if (n < 2) return static_cast<double>(n);
  const VectorXd c = chain.array() - chain.mean();
  const double c0 = c.squaredNorm() / static_cast<double>(n);
  if (!(c0 > 0.0)) return 0.0;
  auto rho = [&](Eigen::Index lag) {
    return c.head(n - lag).dot(c.tail(n - lag)) / (static_cast<double>(n) * c0);
  };
  double sum = 0.0;
  double previous = std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; 2 * k + 1 < n; ++k) {
    double pair = rho(2 * k) + rho(2 * k + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, previous);
    sum += pair;
    previous = pair;
  }
  const double tau = -1.0 + 2.0 * sum;
  return tau > 0.0 ? static_cast<double>(n) / tau : static_cast<double>(n);
}

HmcResult hmc_sample(const LogDensity& target, const VectorXd& initial, const HmcConfig& config) {
  const Eigen::Index dim = initial.size();
  config.validate(dim);
  const MatrixXd mass = config.mass.size() ? config.mass : MatrixXd::Identity(dim, dim);
  const MatrixXd mass_inverse = mass.llt().solve(MatrixXd::Identity(dim, dim));
  const MatrixXd mass_root = mass.llt().matrixL();

  VectorXd x = initial;
  VectorXd grad(dim);
  double lp = target(x, grad);
  if (!std::isfinite(lp) || !grad.allFinite()) throw NumericalError("hmc: target is not finite at the start point");

  HmcResult out;
  out.burn_in = config.burn_in_iterations();
  out.iterations = out.burn_in + config.samples;
  out.samples.resize(config.samples, dim);
  out.log_density.resize(config.samples);

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  int accepted_kept = 0;

  for (int it = 0; it < out.iterations; ++it) {
    VectorXd z(dim);
    for (Eigen::Index i = 0; i < dim; ++i) z(i) = normal(rng);
    const VectorXd p0 = mass_root * z;
    const double h0 = -lp + 0.5 * p0.dot(mass_inverse * p0);
    const double u = uniform(rng);

    const LeapfrogResult lf = leapfrog(target, x, p0, grad, config.step_size, config.leapfrog_steps, mass_inverse);
    bool accept = false;
    if (lf.diverged) {
      ++out.divergences;
    } else {
      const double h1 = -lf.log_density + 0.5 * lf.momentum.dot(mass_inverse * lf.momentum);
      if (!std::isfinite(h1) || h1 - h0 > kDivergenceEnergy) {
        ++out.divergences;
      } else {
        accept = std::log(u) < h0 - h1;
      }
    }
    if (accept) {
      x = lf.position;
      grad = lf.gradient;
      lp = lf.log_density;
    }
    if (it >= out.burn_in) {
      const int row = it - out.burn_in;
      out.samples.row(row) = x.transpose();
      out.log_density(row) = lp;
      if (accept) ++accepted_kept;
    }
  }

  out.acceptance = static_cast<double>(accepted_kept) / config.samples;
  out.ess.resize(dim);
  for (Eigen::Index j = 0; j < dim; ++j) out.ess(j) = effective_sample_size(out.samples.col(j));
  if (out.acceptance < 0.01) {
    out.warnings.push_back("acceptance rate below 1% after burn-in; reduce the step size");
  }
  if (out.divergences > 0.05 * out.iterations) {
    out.warnings.push_back("more than 5% divergent trajectories; reduce the step size");
  }
  return out;
}

// ---------------------------------------------------------------------------

void PriorSpec::validate() const {
  if (!(loading_sd > 0.0)) throw ConfigError("prior: loading sd must be positive");
  if (!(noise_shape > 0.0) || !(noise_rate > 0.0)) throw ConfigError("prior: gamma shape and rate must be positive");
}

LoadingsPosterior::LoadingsPosterior(MogpStructure structure, Panel data, PriorSpec priors, bool sample_noise)
    : structure_(std::move(structure)), data_(std::move(data)), priors_(priors), sample_noise_(sample_noise) {
  priors_.validate();
  if (data_.outputs_count() != structure_.outputs()) throw ConfigError("hmc: panel and structure disagree");
  for (int q = 0; q < static_cast<int>(structure_.terms.size()); ++q) {
    if (!structure_.terms[q].coregionalization.loadings_frozen) sampled_terms_.push_back(q);
  }
  if (dim() == 0) throw ConfigError("hmc: structure has no loadings to sample");
  for (const auto& t : structure_.terms) {
    const MatrixXd x = stack_slice(data_.inputs, t.slice);
    grams_.push_back(t.kernel.gram(x, x));
  }
  owner_ = block_owner(data_.inputs);
  y_ = data_.stacked_y();
}

Eigen::Index LoadingsPosterior::dim() const {
  const Eigen::Index m = structure_.outputs();
  return static_cast<Eigen::Index>(sampled_terms_.size()) * m + (sample_noise_ ? m : 0);
}

VectorXd LoadingsPosterior::initial() const {
  const Eigen::Index m = structure_.outputs();
  VectorXd z(dim());
  Eigen::Index k = 0;
  for (int q : sampled_terms_) {
    z.segment(k, m) = structure_.terms[q].coregionalization.loadings;
    k += m;
  }
  if (sample_noise_) z.segment(k, m) = structure_.noise.array().log().matrix();
  return z;
}

std::vector<std::string> LoadingsPosterior::coordinate_names() const {
  std::vector<std::string> names;
  const int m = structure_.outputs();
  for (int q : sampled_terms_) {
    for (int j = 0; j < m; ++j) {
      names.push_back("term" + std::to_string(q + 1) + ".loading[" + std::to_string(j) + "]");
    }
  }
  if (sample_noise_) {
    for (int j = 0; j < m; ++j) names.push_back("noise[" + std::to_string(j) + "]");
  }
  return names;
}

MogpStructure LoadingsPosterior::structure_at(const VectorXd& z) const {
  if (z.size() != dim()) throw ConfigError("hmc: coordinate vector has the wrong dimension");
  MogpStructure s = structure_;
  const Eigen::Index m = s.outputs();
  Eigen::Index k = 0;
  for (int q : sampled_terms_) {
    s.terms[q].coregionalization.loadings = z.segment(k, m);
    k += m;
  }
  if (sample_noise_) s.noise = z.segment(k, m).array().exp().matrix();
  return s;
}

double LoadingsPosterior::log_prior(const VectorXd& z, VectorXd& grad) const {
  grad = VectorXd::Zero(dim());
  const Eigen::Index m = structure_.outputs();
  const Eigen::Index n_loadings = static_cast<Eigen::Index>(sampled_terms_.size()) * m;
  const double mu = priors_.loading_mean;
  const double sd = priors_.loading_sd;
  double lp = 0.0;
  for (Eigen::Index k = 0; k < n_loadings; ++k) {
    const double r = (z(k) - mu) / sd;
    lp += -0.5 * r * r - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
    grad(k) = -(z(k) - mu) / (sd * sd);
  }
  if (sample_noise_) {
    const double a = priors_.noise_shape;
    const double b = priors_.noise_rate;
    const double constant = a * std::log(b) - std::lgamma(a);
    for (Eigen::Index j = 0; j < m; ++j) {
      const double u = z(n_loadings + j);
      // Gamma density of omega^2 = e^u times the Jacobian e^u.
      lp += constant + a * u - b * std::exp(u);
      grad(n_loadings + j) = a - b * std::exp(u);
    }
  }
  return lp;
}

double LoadingsPosterior::log_target(const VectorXd& z, VectorXd& grad) const {
  if (z.size() != dim() || !z.allFinite()) {
    grad = VectorXd::Zero(dim());
    return kNegInf;
  }
  const MogpStructure s = structure_at(z);
  if (sample_noise_ && (s.noise.array() < structure_.noise_floor).any()) {
    grad = VectorXd::Zero(dim());
    return kNegInf;
  }
  const Eigen::Index n = y_.size();
  const Eigen::Index m = s.outputs();
  std::vector<MatrixXd> b;
  for (const auto& t : s.terms) b.push_back(t.coregionalization.matrix());
  MatrixXd sigma(n, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    for (Eigen::Index r = 0; r < n; ++r) {
      double v = 0.0;
      for (std::size_t q = 0; q < grams_.size(); ++q) v += b[q](owner_[r], owner_[c]) * grams_[q](r, c);
      sigma(r, c) = v;
    }
    sigma(c, c) += s.noise(owner_[c]);
  }
  Factorization factor;
  try {
    factor = factorize(sigma);
  } catch (const NumericalError&) {
    grad = VectorXd::Zero(dim());
    return kNegInf;
  }
  const double value = log_marginal_likelihood(y_, factor);
  const VectorXd alpha = factor.llt.solve(y_);
  MatrixXd w = factor.llt.solve(MatrixXd::Identity(n, n));
  w = alpha * alpha.transpose() - w;

  VectorXd prior_grad;
  const double lp = log_prior(z, prior_grad);
  grad = prior_grad;
  Eigen::Index k = 0;
  for (int q : sampled_terms_) {
    // d lml / d lambda_j = (S lambda)_j with S the block sums of W .* K_q.
    MatrixXd block_sums = MatrixXd::Zero(m, m);
    for (Eigen::Index c = 0; c < n; ++c) {
      for (Eigen::Index r = 0; r < n; ++r) block_sums(owner_[r], owner_[c]) += w(r, c) * grams_[q](r, c);
    }
    grad.segment(k, m) += block_sums * s.terms[q].coregionalization.loadings;
    k += m;
  }
  if (sample_noise_) {
    for (Eigen::Index r = 0; r < n; ++r) grad(k + owner_[r]) += 0.5 * w(r, r) * s.noise(owner_[r]);
  }
  if (!std::isfinite(value) || !grad.allFinite()) {
    grad = VectorXd::Zero(dim());
    return kNegInf;
  }
  return value + lp;
}

LogDensity LoadingsPosterior::density() const {
  return [this](const VectorXd& z, VectorXd& grad) { return log_target(z, grad); };
}

MatrixXd laplace_mass(const LogDensity& target, const VectorXd& x, double rel_step, double floor_ratio) {
  if (!(rel_step > 0.0) || !(floor_ratio > 0.0)) throw ConfigError("laplace_mass: steps must be positive");
  const Eigen::Index dim = x.size();
  MatrixXd h(dim, dim);
  VectorXd ga;
  VectorXd gb;
  for (Eigen::Index i = 0; i < dim; ++i) {
    const double step = rel_step * std::max(1.0, std::abs(x(i)));
    VectorXd a = x;
    VectorXd b = x;
    a(i) += step;
    b(i) -= step;
    if (!std::isfinite(target(a, ga)) || !std::isfinite(target(b, gb))) {
      throw NumericalError("laplace_mass: log density is not finite near the expansion point");
    }
    h.col(i) = -(ga - gb) / (2.0 * step);
  }
  h = 0.5 * (h + h.transpose());
  const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(h);
  const double top = eig.eigenvalues().cwiseAbs().maxCoeff();
  if (!(top > 0.0) || !std::isfinite(top)) throw NumericalError("laplace_mass: curvature vanishes");
  const VectorXd ev = eig.eigenvalues().cwiseMax(floor_ratio * top);
  MatrixXd mass = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (mass + mass.transpose());
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

CounterfactualSamples counterfactual_posterior(const LoadingsPosterior& posterior, const MatrixXd& draws,
                                               const std::vector<SeriesInputs>& test, int n_pred,
                                               std::uint64_t seed, bool include_noise) {
  if (n_pred < 1) throw ConfigError("counterfactual: need at least one trajectory per draw");
  if (draws.cols() != posterior.dim()) throw ConfigError("counterfactual: draws have the wrong dimension");
  Eigen::Index h = 0;
  for (const auto& s : test) h += s.rows();

  CounterfactualSamples out;
  std::vector<MatrixXd> blocks;
  for (Eigen::Index d = 0; d < draws.rows(); ++d) {
    try {
      const FittedGp model(posterior.structure_at(draws.row(d).transpose()), posterior.data());
      const PredictiveDistribution dist = posterior_predictive(model, test, include_noise);
      blocks.push_back(sample_predictive(dist, n_pred, derive_seed(seed, static_cast<std::uint64_t>(d))));
      ++out.used;
    } catch (const NumericalError&) {
      ++out.skipped;
    }
  }
  out.paths.resize(static_cast<Eigen::Index>(blocks.size()) * n_pred, h);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    out.paths.middleRows(static_cast<Eigen::Index>(b) * n_pred, n_pred) = blocks[b];
  }
  return out;
}

}  // namespace synthgp
