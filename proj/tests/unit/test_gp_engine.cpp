#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "helpers.hpp"
#include "synthgp/errors.hpp"
#include "synthgp/gp_engine.hpp"

using namespace synthgp;

namespace {

double lml_at(const MogpStructure& s, const Panel& p) {
  return log_marginal_likelihood(p.stacked_y(), noisy_covariance(s, p.inputs));
}

// Brute-force Gaussian conditioning with dense inverses.
void conditional_oracle(const MogpStructure& s, const Panel& p, const std::vector<SeriesInputs>& test,
                        VectorXd& mean, MatrixXd& cov) {
  const MatrixXd sigma = noisy_covariance(s, p.inputs);
  const MatrixXd inv = sigma.inverse();
  const MatrixXd ks = assemble_covariance(s, test, p.inputs);
  mean = ks * inv * p.stacked_y();
  cov = assemble_covariance(s, test, test) - ks * inv * ks.transpose();
}

// Some series may be empty, never all of them.
std::vector<SeriesInputs> random_test(std::mt19937_64& rng, int m, int d) {
  auto test = testing::random_panel(rng, m, 0, 3, d).inputs;
  if (test[0].rows() == 0) test[0] = testing::random_panel(rng, 1, 1, 3, d).inputs[0];
  return test;
}

SeriesInputs single_point(double t, const VectorXd& x) {
  SeriesInputs s;
  s.time = VectorXd::Constant(1, t);
  s.covariates = x.transpose();
  return s;
}

}  // namespace

TEST_SUITE("gp_engine") {
  TEST_CASE("scalar log density") {
    VectorXd y = VectorXd::Zero(1);
    MatrixXd s = MatrixXd::Identity(1, 1);
    CHECK(log_marginal_likelihood(y, s) == doctest::Approx(-0.5 * std::log(2.0 * M_PI)).epsilon(1e-14));
  }

  TEST_CASE("zero outcomes leave only the complexity term") {
    std::mt19937_64 rng(1);
    const MatrixXd a = testing::random_matrix(rng, 4, 4);
    const MatrixXd s = a * a.transpose() + MatrixXd::Identity(4, 4);
    CHECK(log_marginal_likelihood(VectorXd::Zero(4), s) ==
          doctest::Approx(-0.5 * std::log(s.determinant()) - 2.0 * std::log(2.0 * M_PI)).epsilon(1e-12));
  }

  TEST_CASE("property: log likelihood matches dense oracle") {
    std::mt19937_64 rng(2);
    for (int rep = 0; rep < 20; ++rep) {
      const MatrixXd a = testing::random_matrix(rng, 5, 5);
      const MatrixXd s = a * a.transpose() + 0.5 * MatrixXd::Identity(5, 5);
      const VectorXd y = testing::random_matrix(rng, 5, 1, -2, 2);
      CHECK(std::abs(log_marginal_likelihood(y, s) - testing::dense_log_density(y, s)) < 1e-10);
    }
  }

  TEST_CASE("factorization jitter escalates and then fails") {
    MatrixXd singular = MatrixXd::Ones(3, 3);
    const Factorization f = factorize(singular);
    CHECK(f.jitter > 0.0);
    MatrixXd bad = MatrixXd::Identity(2, 2);
    bad(1, 1) = -1.0;
    CHECK_THROWS_AS(factorize(bad), NumericalError);
    bad(1, 1) = std::nan("");
    CHECK_THROWS_AS(factorize(bad), NumericalError);
  }

  TEST_CASE("property: cholesky reconstructs sigma plus jitter") {
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 10; ++rep) {
      Panel p = testing::random_panel(rng, 2, 3, 8, 1);
      MogpStructure s = build_variant(Variant::TwoFactor, 2, 1);
      testing::randomize(s, rng);
      const FittedGp gp(s, p);
      const MatrixXd l = gp.factor().llt.matrixL();
      const MatrixXd target = gp.sigma() + gp.jitter() * MatrixXd::Identity(gp.sigma().rows(), gp.sigma().cols());
      CHECK((l * l.transpose() - target).norm() / target.norm() < 1e-8);
      CHECK(std::abs(gp.log_ml() - lml_at(s, p)) < 1e-10);
    }
  }

  TEST_CASE("property: analytic gradient matches finite differences") {
    std::mt19937_64 rng(4);
    for (int rep = 0; rep < 12; ++rep) {
      const Variant v = std::array{Variant::TwoFactor, Variant::OneFactor, Variant::TwoRbf, Variant::Independent}[rep % 4];
      const int d = testing::uniform_int(rng, 1, 2);
      Panel p = testing::random_panel(rng, 2, 3, 10, d);
      MogpStructure s = build_variant(v, 2, d);
      testing::randomize(s, rng);
      const LmlEvaluation e = lml_gradient(s, p);
      auto table = parameter_table(s);
      VectorXd theta(static_cast<Eigen::Index>(table.size()));
      for (std::size_t i = 0; i < table.size(); ++i) theta(static_cast<Eigen::Index>(i)) = table[i].value;
      const VectorXd fd = testing::finite_difference(
          [&](const VectorXd& x) {
            auto t = table;
            for (std::size_t i = 0; i < t.size(); ++i) t[i].value = x(static_cast<Eigen::Index>(i));
            MogpStructure c = s;
            apply_parameters(c, t);
            return lml_at(c, p);
          },
          theta);
      for (Eigen::Index i = 0; i < fd.size(); ++i) {
        CHECK(std::abs(e.gradient(i) - fd(i)) / std::max(1e-2, std::abs(fd(i))) < 1e-5);
      }
    }
  }

  TEST_CASE("noise gradient equals the block formula") {
    std::mt19937_64 rng(5);
    Panel p = testing::random_panel(rng, 2, 4, 6, 1);
    MogpStructure s = build_variant(Variant::TwoFactor, 2, 1);
    testing::randomize(s, rng);
    const LmlEvaluation e = lml_gradient(s, p);
    const MatrixXd sigma = noisy_covariance(s, p.inputs);
    const MatrixXd inv = sigma.inverse();
    const VectorXd alpha = inv * p.stacked_y();
    const Eigen::Index n0 = p.inputs[0].rows();
    const Eigen::Index n1 = p.inputs[1].rows();
    const double expected = 0.5 * alpha.segment(n0, n1).squaredNorm() - 0.5 * inv.block(n0, n0, n1, n1).trace();
    CHECK(e.gradient(e.gradient.size() - 1) == doctest::Approx(expected).epsilon(1e-10));
  }

  TEST_CASE("property: predictive matches the conditional Gaussian oracle") {
    std::mt19937_64 rng(6);
    for (int rep = 0; rep < 20; ++rep) {
      const int m = testing::uniform_int(rng, 1, 3);
      Panel p = testing::random_panel(rng, m, 1, 4, 1);
      MogpStructure s = build_variant(m == 1 ? Variant::SingleOutput : Variant::TwoFactor, m, 1);
      testing::randomize(s, rng);
      const auto test = random_test(rng, m, 1);
      VectorXd mean;
      MatrixXd cov;
      conditional_oracle(s, p, test, mean, cov);
      const auto pred = posterior_predictive(FittedGp(s, p), test);
      CHECK((pred.mean - mean).cwiseAbs().maxCoeff() < 1e-10);
      CHECK((pred.cov - cov).cwiseAbs().maxCoeff() < 1e-10);
    }
  }

  TEST_CASE("empty test set gives an empty prediction") {
    std::mt19937_64 rng(13);
    const Panel p = testing::random_panel(rng, 2, 2, 5, 1);
    MogpStructure s = build_variant(Variant::TwoFactor, 2, 1);
    std::vector<SeriesInputs> test(2);
    for (auto& t : test) t.covariates = MatrixXd::Zero(0, 1);
    const auto pred = posterior_predictive(FittedGp(s, p), test);
    CHECK(pred.mean.size() == 0);
    CHECK(pred.cov.size() == 0);
  }

  TEST_CASE("two training points and one test point by hand") {
    MogpStructure s;
    s.variant = Variant::SingleOutput;
    s.terms = {LatentTerm{CoregionalizationMatrix::identity(1), KernelSpec::rbf(1.0, {1.0}), InputSlice::Time}};
    s.noise = VectorXd::Constant(1, 0.1);
    Panel p;
    SeriesInputs in;
    in.time = VectorXd::LinSpaced(2, 0.0, 1.0);
    in.covariates = MatrixXd::Zero(2, 0);
    p.inputs = {in};
    p.outputs = {(VectorXd(2) << 1.0, -0.5).finished()};
    SeriesInputs t;
    t.time = VectorXd::Constant(1, 0.4);
    t.covariates = MatrixXd::Zero(1, 0);
    const double k01 = std::exp(-0.5);
    const double det = 1.1 * 1.1 - k01 * k01;
    const double a = std::exp(-0.5 * 0.16);
    const double b = std::exp(-0.5 * 0.36);
    // [a b] * inv([[1.1, k01], [k01, 1.1]])
    const double w0 = (a * 1.1 - b * k01) / det;
    const double w1 = (b * 1.1 - a * k01) / det;
    const auto pred = posterior_predictive(FittedGp(s, p), {t});
    CHECK(pred.mean(0) == doctest::Approx(w0 * 1.0 + w1 * -0.5).epsilon(1e-12));
    CHECK(pred.cov(0, 0) == doctest::Approx(1.0 - (w0 * a + w1 * b)).epsilon(1e-12));
  }

  TEST_CASE("noiseless model interpolates its training points") {
    std::mt19937_64 rng(7);
    Panel p = testing::random_panel(rng, 2, 4, 6, 1);
    MogpStructure s = build_variant(Variant::TwoFactor, 2, 1);
    testing::randomize(s, rng);
    s.noise.setZero();
    const auto pred = posterior_predictive(FittedGp(s, p), p.inputs);
    CHECK((pred.mean - p.stacked_y()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(pred.cov.diagonal().maxCoeff() < 1e-6);
  }

  TEST_CASE("far test points revert to the prior") {
    std::mt19937_64 rng(8);
    Panel p = testing::random_panel(rng, 2, 4, 6, 1);
    MogpStructure s = build_variant(Variant::TwoFactor, 2, 1);
    testing::randomize(s, rng);
    VectorXd far = VectorXd::Constant(1, 1e4);
    const std::vector<SeriesInputs> test{single_point(1e5, far), single_point(2e5, far)};
    const auto pred = posterior_predictive(FittedGp(s, p), test);
    CHECK(pred.mean.cwiseAbs().maxCoeff() < 1e-12);
    CHECK((pred.cov - assemble_covariance(s, test, test)).cwiseAbs().maxCoeff() < 1e-12);
  }

  TEST_CASE("property: predictive covariance never depends on outcomes") {
    std::mt19937_64 rng(9);
    for (int rep = 0; rep < 10; ++rep) {
      Panel p = testing::random_panel(rng, 3, 2, 6, 2);
      MogpStructure s = build_variant(Variant::TwoRbf, 3, 2);
      testing::randomize(s, rng);
      const auto test = random_test(rng, 3, 2);
      const auto a = posterior_predictive(FittedGp(s, p), test);
      for (auto& y : p.outputs) y = testing::random_matrix(rng, y.size(), 1, -5, 5);
      const auto b = posterior_predictive(FittedGp(s, p), test);
      CHECK(a.cov == b.cov);
    }
  }

  TEST_CASE("property: adding a training point never increases predictive variance") {
    std::mt19937_64 rng(10);
    for (int rep = 0; rep < 15; ++rep) {
      Panel p = testing::random_panel(rng, 2, 2, 6, 1);
      MogpStructure s = build_variant(Variant::TwoFactor, 2, 1);
      testing::randomize(s, rng);
      const auto test = random_test(rng, 2, 1);
      const auto before = posterior_predictive(FittedGp(s, p), test);
      Panel more = p;
      const int target = testing::uniform_int(rng, 0, 1);
      auto& in = more.inputs[target];
      in.time.conservativeResize(in.rows() + 1);
      in.time(in.rows() - 1) = testing::uniform(rng, 0, 10);
      in.covariates.conservativeResize(in.time.size(), Eigen::NoChange);
      in.covariates.row(in.time.size() - 1) = testing::random_matrix(rng, 1, 1);
      more.outputs[target].conservativeResize(in.time.size());
      more.outputs[target](in.time.size() - 1) = 0.3;
      const auto after = posterior_predictive(FittedGp(s, more), test);
      CHECK(((after.cov.diagonal() - before.cov.diagonal()).array() <= 1e-9).all());
    }
  }

  TEST_CASE("property: log likelihood is invariant to simultaneous permutation") {
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 10; ++rep) {
      const MatrixXd a = testing::random_matrix(rng, 7, 7);
      const MatrixXd s = a * a.transpose() + MatrixXd::Identity(7, 7);
      const VectorXd y = testing::random_matrix(rng, 7, 1);
      std::vector<int> perm(7);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      Eigen::PermutationMatrix<Eigen::Dynamic> pm(7);
      for (int i = 0; i < 7; ++i) pm.indices()(i) = perm[i];
      const MatrixXd sp = pm * s * pm.transpose();
      const VectorXd yp = pm * y;
      CHECK(std::abs(log_marginal_likelihood(y, s) - log_marginal_likelihood(yp, sp)) < 1e-10);
    }
  }

  TEST_CASE("property: identity coregionalization matches independent single-output fits") {
    std::mt19937_64 rng(12);
    for (int rep = 0; rep < 10; ++rep) {
      Panel p = testing::random_panel(rng, 3, 2, 8, 2);
      MogpStructure s = build_variant(Variant::Independent, 3, 2);
      testing::randomize(s, rng);
      const auto test = random_test(rng, 3, 2);
      const auto joint = posterior_predictive(FittedGp(s, p), test);
      Eigen::Index offset = 0;
      for (int i = 0; i < 3; ++i) {
        MogpStructure single = s;
        for (std::size_t q = 0; q < single.terms.size(); ++q) {
          auto& c = single.terms[q].coregionalization;
          c.loadings = VectorXd::Zero(1);
          c.nuggets = VectorXd::Constant(1, s.terms[q].coregionalization.nuggets(i));
        }
        single.noise = VectorXd::Constant(1, s.noise(i));
        Panel pi;
        pi.inputs = {p.inputs[i]};
        pi.outputs = {p.outputs[i]};
        const Eigen::Index n = test[i].rows();
        if (n == 0) continue;
        const auto own = posterior_predictive(FittedGp(single, pi), {test[i]});
        CHECK((joint.mean.segment(offset, n) - own.mean).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((joint.cov.block(offset, offset, n, n) - own.cov).cwiseAbs().maxCoeff() < 1e-10);
        offset += n;
      }
    }
  }

  TEST_CASE("sampling: degenerate, moments, determinism") {
    PredictiveDistribution zero;
    zero.mean = VectorXd::LinSpaced(3, 1.0, 3.0);
    zero.cov = MatrixXd::Zero(3, 3);
    const MatrixXd z = sample_predictive(zero, 5, 1);
    for (Eigen::Index r = 0; r < 5; ++r) CHECK((z.row(r).transpose() - zero.mean).cwiseAbs().maxCoeff() < 1e-15);

    PredictiveDistribution d;
    d.mean = (VectorXd(2) << 0.5, -1.0).finished();
    d.cov = (MatrixXd(2, 2) << 2.0, 0.6, 0.6, 1.0).finished();
    const int n = 50000;
    const MatrixXd x = sample_predictive(d, n, 42);
    const VectorXd mean = x.colwise().mean();
    const MatrixXd c = x.rowwise() - mean.transpose();
    const MatrixXd cov = c.transpose() * c / (n - 1);
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) {
        // Standard error of a sample covariance: sqrt((s_ii s_jj + s_ij^2) / n).
        const double se = std::sqrt((d.cov(i, i) * d.cov(j, j) + d.cov(i, j) * d.cov(i, j)) / n);
        CHECK(std::abs(cov(i, j) - d.cov(i, j)) < 3.0 * se);
      }
    }
    CHECK(sample_predictive(d, 10, 7) == sample_predictive(d, 10, 7));
    CHECK_THROWS_AS(sample_predictive(d, 0, 7), ConfigError);
  }
}
