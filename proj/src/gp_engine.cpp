#include "synthgp/gp_engine.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "synthgp/errors.hpp"

namespace synthgp {

Factorization factorize(const MatrixXd& sigma) {
  if (sigma.rows() != sigma.cols()) throw NumericalError("factorize: matrix is not square");
  Factorization f;
  if (sigma.rows() == 0) {
    f.llt.compute(sigma);
    return f;
  }
  if (!sigma.allFinite()) throw NumericalError("factorize: covariance has non-finite entries");
  f.llt.compute(sigma);
  if (f.llt.info() == Eigen::Success) return f;

  const double scale = std::max(sigma.diagonal().mean(), std::numeric_limits<double>::min());
  for (double rel = 1e-8; rel <= 1e-2 * (1.0 + 1e-9); rel *= 10.0) {
    MatrixXd jittered = sigma;
    jittered.diagonal().array() += rel * scale;
    f.llt.compute(jittered);
    if (f.llt.info() == Eigen::Success) {
      f.jitter = rel * scale;
      return f;
    }
  }
  throw NumericalError("covariance matrix is not positive definite even after maximal jitter");
}

double log_marginal_likelihood(const VectorXd& y, const Factorization& factor) {
  const MatrixXd& l = factor.llt.matrixLLT();
  if (l.rows() != y.size()) throw NumericalError("log_marginal_likelihood: size mismatch");
  const VectorXd z = factor.llt.matrixL().solve(y);
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  const double n = static_cast<double>(y.size());
  return -0.5 * z.squaredNorm() - 0.5 * log_det - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

double log_marginal_likelihood(const VectorXd& y, const MatrixXd& sigma) {
  return log_marginal_likelihood(y, factorize(sigma));
}

MatrixXd noisy_covariance(const MogpStructure& structure, const std::vector<SeriesInputs>& inputs) {
  MatrixXd sigma = assemble_covariance(structure, inputs);
  Eigen::Index offset = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Eigen::Index n = inputs[i].rows();
    sigma.diagonal().segment(offset, n).array() += structure.noise(static_cast<Eigen::Index>(i));
    offset += n;
  }
  return sigma;
}

LmlEvaluation lml_gradient(const MogpStructure& structure, const Panel& data) {
  const VectorXd y = data.stacked_y();
  const MatrixXd sigma = noisy_covariance(structure, data.inputs);
  const Factorization factor = factorize(sigma);

  LmlEvaluation out;
  out.jitter = factor.jitter;
  out.value = log_marginal_likelihood(y, factor);

  const Eigen::Index n = y.size();
  const VectorXd alpha = factor.llt.solve(y);
  const MatrixXd sigma_inv = factor.llt.solve(MatrixXd::Identity(n, n));
  const MatrixXd w = alpha * alpha.transpose() - sigma_inv;

  const std::vector<int> owner = block_owner(data.inputs);
  const int m = structure.outputs();
  const auto table = parameter_table(structure);
  out.gradient = VectorXd::Zero(static_cast<Eigen::Index>(table.size()));

  std::vector<MatrixXd> block_sums(structure.terms.size(), MatrixXd::Zero(m, m));
  std::vector<MatrixXd> gram_cache(structure.terms.size());
  std::vector<MatrixXd> b_expanded(structure.terms.size());
  for (std::size_t q = 0; q < structure.terms.size(); ++q) {
    const auto& term = structure.terms[q];
    const MatrixXd x = stack_slice(data.inputs, term.slice);
    gram_cache[q] = term.kernel.gram(x, x);
    const MatrixXd b = term.coregionalization.matrix();
    b_expanded[q].resize(n, n);
    for (Eigen::Index c = 0; c < n; ++c) {
      for (Eigen::Index r = 0; r < n; ++r) {
        const double wg = w(r, c) * gram_cache[q](r, c);
        block_sums[q](owner[r], owner[c]) += wg;
        b_expanded[q](r, c) = b(owner[r], owner[c]);
      }
    }
  }

  for (std::size_t p = 0; p < table.size(); ++p) {
    const auto& h = table[p];
    double g = 0.0;
    switch (h.kind) {
      case ParamKind::Loading: {
        const auto& lambda = structure.terms[h.term].coregionalization.loadings;
        g = block_sums[h.term].row(h.index).dot(lambda);
        break;
      }
      case ParamKind::Nugget:
        g = 0.5 * block_sums[h.term](h.index, h.index);
        break;
      case ParamKind::Kernel: {
        const auto& term = structure.terms[h.term];
        const MatrixXd x = stack_slice(data.inputs, term.slice);
        const MatrixXd dg = term.kernel.gram_grad(x, x, h.index);
        g = 0.5 * (w.array() * b_expanded[h.term].array() * dg.array()).sum();
        break;
      }
      case ParamKind::Noise:
        for (Eigen::Index r = 0; r < n; ++r) {
          if (owner[r] == h.index) g += 0.5 * w(r, r);
        }
        break;
    }
    out.gradient(static_cast<Eigen::Index>(p)) = g;
  }
  return out;
}

// ---------------------------------------------------------------------------

FittedGp::FittedGp(MogpStructure structure, Panel data) : structure_(std::move(structure)), data_(std::move(data)) {
  if (data_.outputs_count() != structure_.outputs()) throw ConfigError("panel and structure disagree on series count");
  const VectorXd y = data_.stacked_y();
  sigma_ = noisy_covariance(structure_, data_.inputs);
  factor_ = factorize(sigma_);
  alpha_ = factor_.llt.solve(y);
  log_ml_ = log_marginal_likelihood(y, factor_);
}

PredictiveDistribution posterior_predictive(const FittedGp& model, const std::vector<SeriesInputs>& test,
                                            bool include_noise) {
  const auto& s = model.structure();
  const MatrixXd k_star = assemble_covariance(s, test, model.data().inputs);  // T* x T
  const MatrixXd k_ss = assemble_covariance(s, test, test);

  PredictiveDistribution out;
  out.series = block_owner(test);
  out.mean = k_star * model.alpha();
  const MatrixXd v = model.factor().llt.matrixL().solve(k_star.transpose());
  MatrixXd cov = k_ss - v.transpose() * v;
  cov = 0.5 * (cov + cov.transpose());
  if (include_noise) {
    for (Eigen::Index r = 0; r < cov.rows(); ++r) cov(r, r) += s.noise(out.series[r]);
  }
  const double tol = 1e-10 * std::max(1.0, k_ss.diagonal().size() ? k_ss.diagonal().maxCoeff() : 1.0);
  for (Eigen::Index r = 0; r < cov.rows(); ++r) {
    if (cov(r, r) < 0.0) {
      if (cov(r, r) < -tol) throw NumericalError("predictive variance is materially negative");
      cov(r, r) = 0.0;
    }
  }
  out.cov = std::move(cov);
  return out;
}

MatrixXd sample_predictive(const PredictiveDistribution& dist, int n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("sample_predictive: need at least one sample");
  const Eigen::Index dim = dist.mean.size();
  MatrixXd root = MatrixXd::Zero(dim, dim);
  if (dim > 0) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(dist.cov);
    if (eig.info() != Eigen::Success) throw NumericalError("eigen-decomposition of predictive covariance failed");
    const VectorXd sd = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    root = eig.eigenvectors() * sd.asDiagonal();
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd z(dim, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index i = 0; i < dim; ++i) z(i, k) = normal(rng);
  }
  MatrixXd draws = (root * z).transpose();
  draws.rowwise() += dist.mean.transpose();
  return draws;
}

}  // namespace synthgp
