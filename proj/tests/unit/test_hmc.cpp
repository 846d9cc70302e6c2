#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "synthgp/errors.hpp"
#include "synthgp/hmc.hpp"

using namespace synthgp;

namespace {

LogDensity gaussian(const MatrixXd& cov) {
  const MatrixXd precision = cov.inverse();
  return [precision](const VectorXd& x, VectorXd& g) {
    g = -precision * x;
    return -0.5 * x.dot(precision * x);
  };
}

double hamiltonian(const LogDensity& f, const VectorXd& x, const VectorXd& p) {
  VectorXd g;
  return -f(x, g) + 0.5 * p.squaredNorm();
}

struct SmallProblem {
  MogpStructure structure;
  Panel data;
};

SmallProblem small_problem(std::mt19937_64& rng, int m) {
  SmallProblem s;
  s.data = testing::random_panel(rng, m, 3, 6, 1);
  s.structure = build_variant(Variant::TwoFactor, m, 1);
  testing::randomize(s.structure, rng);
  return s;
}

std::vector<SeriesInputs> treated_test(int m, int h) {
  std::vector<SeriesInputs> test(m);
  for (auto& t : test) {
    t.time.resize(0);
    t.covariates = MatrixXd::Zero(0, 1);
  }
  test[0].time = VectorXd::LinSpaced(h, 8.0, 8.0 + 0.7 * (h - 1));
  test[0].covariates = MatrixXd::Constant(h, 1, 0.2);
  return test;
}

}  // namespace

TEST_SUITE("hmc") {
  TEST_CASE("leapfrog is time reversible") {
    std::mt19937_64 rng(1);
    const auto f = gaussian((MatrixXd(2, 2) << 1.0, 0.8, 0.8, 1.0).finished());
    const VectorXd x = testing::random_matrix(rng, 2, 1);
    const VectorXd p = testing::random_matrix(rng, 2, 1);
    const auto fwd = leapfrog(f, x, p, 0.05, 25);
    const auto back = leapfrog(f, fwd.position, -fwd.momentum, 0.05, 25);
    CHECK((back.position - x).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((back.momentum + p).cwiseAbs().maxCoeff() < 1e-8);
  }

  TEST_CASE("property: energy error on a standard Gaussian is small") {
    std::mt19937_64 rng(2);
    const auto f = gaussian(MatrixXd::Identity(3, 3));
    for (int rep = 0; rep < 50; ++rep) {
      const VectorXd x = testing::random_matrix(rng, 3, 1, -2, 2);
      const VectorXd p = testing::random_matrix(rng, 3, 1, -2, 2);
      const auto r = leapfrog(f, x, p, 0.1, 10);
      CHECK(std::abs(hamiltonian(f, r.position, r.momentum) - hamiltonian(f, x, p)) < 0.01);
    }
  }

  TEST_CASE("free particle moves in a straight line") {
    const LogDensity flat = [](const VectorXd& x, VectorXd& g) {
      g = VectorXd::Zero(x.size());
      return 0.0;
    };
    const VectorXd x = (VectorXd(2) << 0.3, -1.0).finished();
    const VectorXd p = (VectorXd(2) << 1.5, 2.0).finished();
    const auto r = leapfrog(flat, x, p, 0.25, 8);
    CHECK(r.position == x + 0.25 * 8 * p);
    CHECK(r.momentum == p);
  }

  TEST_CASE("property: one leapfrog step preserves volume") {
    std::mt19937_64 rng(3);
    const MatrixXd a = testing::random_matrix(rng, 2, 2);
    const auto f = gaussian(a * a.transpose() + MatrixXd::Identity(2, 2));
    VectorXd state = testing::random_matrix(rng, 4, 1);
    const auto map = [&](const VectorXd& s) {
      const auto r = leapfrog(f, s.head(2), s.tail(2), 0.1, 1);
      VectorXd out(4);
      out << r.position, r.momentum;
      return out;
    };
    MatrixXd jac(4, 4);
    for (int j = 0; j < 4; ++j) {
      VectorXd up = state;
      VectorXd down = state;
      up(j) += 1e-5;
      down(j) -= 1e-5;
      jac.col(j) = (map(up) - map(down)) / 2e-5;
    }
    CHECK(std::abs(jac.determinant() - 1.0) < 1e-6);
  }

  TEST_CASE("non-finite trajectory is flagged divergent") {
    const LogDensity wall = [](const VectorXd& x, VectorXd& g) {
      g = -x;
      return x(0) > 1.0 ? -std::numeric_limits<double>::infinity() : -0.5 * x.squaredNorm();
    };
    const auto r = leapfrog(wall, VectorXd::Zero(1), VectorXd::Constant(1, 5.0), 0.1, 20);
    CHECK(r.diverged);
  }

  TEST_CASE("correlated Gaussian moments") {
    const MatrixXd cov = (MatrixXd(2, 2) << 1.0, 0.8, 0.8, 1.0).finished();
    HmcConfig cfg;
    cfg.step_size = 0.15;
    cfg.leapfrog_steps = 15;
    cfg.seed = 11;
    const auto r = hmc_sample(gaussian(cov), VectorXd::Zero(2), cfg);
    CHECK(r.samples.rows() == 5000);
    CHECK(r.burn_in == 1250);
    const VectorXd mean = r.samples.colwise().mean();
    const MatrixXd c = r.samples.rowwise() - mean.transpose();
    const MatrixXd sample_cov = c.transpose() * c / (r.samples.rows() - 1);
    CHECK(mean.cwiseAbs().maxCoeff() < 0.05);
    CHECK((sample_cov - cov).cwiseAbs().maxCoeff() < 0.1);
    CHECK(r.acceptance > 0.5);
    CHECK(r.ess.minCoeff() > 100.0);
  }

  TEST_CASE("tiny steps are almost always accepted") {
    HmcConfig cfg;
    cfg.step_size = 1e-5;
    cfg.leapfrog_steps = 5;
    cfg.samples = 500;
    const auto r = hmc_sample(gaussian(MatrixXd::Identity(2, 2)), VectorXd::Ones(2), cfg);
    CHECK(r.acceptance > 0.99);
  }

  TEST_CASE("same seed gives the same chain") {
    HmcConfig cfg;
    cfg.samples = 200;
    cfg.step_size = 0.2;
    cfg.seed = 5;
    const auto f = gaussian(MatrixXd::Identity(2, 2));
    CHECK(hmc_sample(f, VectorXd::Zero(2), cfg).samples == hmc_sample(f, VectorXd::Zero(2), cfg).samples);
  }

  TEST_CASE("low acceptance emits a warning") {
    HmcConfig cfg;
    cfg.samples = 200;
    cfg.step_size = 50.0;
    cfg.leapfrog_steps = 3;
    const auto r = hmc_sample(gaussian(0.01 * MatrixXd::Identity(2, 2)), VectorXd::Zero(2), cfg);
    CHECK_FALSE(r.warnings.empty());
  }

  TEST_CASE("config validation") {
    HmcConfig cfg;
    cfg.step_size = 0.0;
    CHECK_THROWS_AS(cfg.validate(1), ConfigError);
    cfg = HmcConfig{};
    cfg.burn_in = 1.0;
    CHECK_THROWS_AS(cfg.validate(1), ConfigError);
    cfg = HmcConfig{};
    cfg.mass = (MatrixXd(2, 2) << 1.0, 2.0, 2.0, 1.0).finished();
    CHECK_THROWS_AS(cfg.validate(2), ConfigError);
    cfg = HmcConfig{};
    cfg.leapfrog_steps = 0;
    CHECK_THROWS_AS(cfg.validate(1), ConfigError);
    const LogDensity bad = [](const VectorXd& x, VectorXd& g) {
      g = x;
      return -std::numeric_limits<double>::infinity();
    };
    CHECK_THROWS_AS(hmc_sample(bad, VectorXd::Zero(1), HmcConfig{}), NumericalError);
  }

  TEST_CASE("effective sample size") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 1.0);
    VectorXd iid(4000);
    for (auto& v : iid) v = n(rng);
    CHECK(effective_sample_size(iid) > 3000.0);
    VectorXd ar(4000);
    ar(0) = 0.0;
    for (Eigen::Index i = 1; i < ar.size(); ++i) ar(i) = 0.9 * ar(i - 1) + n(rng);
    // AR(1) with phi = 0.9 has ESS ratio (1 - phi) / (1 + phi).
    const double expected = 4000.0 * 0.1 / 1.9;
    CHECK(effective_sample_size(ar) > 0.5 * expected);
    CHECK(effective_sample_size(ar) < 2.0 * expected);
    CHECK(effective_sample_size(VectorXd::Ones(10)) == 0.0);
  }

  TEST_CASE("burn-in convention") {
    HmcConfig cfg;
    CHECK(cfg.burn_in_iterations() == 1250);
    cfg.burn_in = 0.0;
    CHECK(cfg.burn_in_iterations() == 0);
  }

  TEST_CASE("prior alone recovers the loading prior moments") {
    std::mt19937_64 rng(5);
    auto prob = small_problem(rng, 2);
    const LoadingsPosterior post(prob.structure, prob.data, PriorSpec{}, false);
    CHECK(post.dim() == 4);
    const LogDensity prior = [&post](const VectorXd& z, VectorXd& g) { return post.log_prior(z, g); };
    HmcConfig cfg;
    cfg.step_size = 1.0;
    cfg.leapfrog_steps = 12;
    cfg.seed = 3;
    const auto r = hmc_sample(prior, VectorXd::Zero(4), cfg);
    for (Eigen::Index k = 0; k < 4; ++k) {
      const VectorXd col = r.samples.col(k);
      const double mean = col.mean();
      const double sd = std::sqrt((col.array() - mean).square().sum() / (col.size() - 1));
      CHECK(std::abs(mean) < 4.0 * 10.0 / std::sqrt(r.ess(k)));
      CHECK(std::abs(sd - 10.0) < 1.0);
    }
  }

  TEST_CASE("property: posterior gradient matches finite differences") {
    std::mt19937_64 rng(6);
    for (int rep = 0; rep < 8; ++rep) {
      auto prob = small_problem(rng, testing::uniform_int(rng, 2, 3));
      const bool noise = rep % 2 == 1;
      const LoadingsPosterior post(prob.structure, prob.data, PriorSpec{}, noise);
      VectorXd z = post.initial() + testing::random_matrix(rng, post.dim(), 1, -0.2, 0.2);
      VectorXd g;
      post.log_target(z, g);
      const VectorXd fd = testing::finite_difference(
          [&](const VectorXd& x) {
            VectorXd unused;
            return post.log_target(x, unused);
          },
          z);
      for (Eigen::Index i = 0; i < z.size(); ++i) CHECK(std::abs(g(i) - fd(i)) / std::max(1e-2, std::abs(fd(i))) < 1e-5);
    }
  }

  TEST_CASE("property: posterior equals marginal likelihood plus prior") {
    std::mt19937_64 rng(16);
    for (int rep = 0; rep < 6; ++rep) {
      auto prob = small_problem(rng, testing::uniform_int(rng, 2, 3));
      const bool noise = rep % 2 == 0;
      const LoadingsPosterior post(prob.structure, prob.data, PriorSpec{}, noise);
      const VectorXd z = post.initial() + testing::random_matrix(rng, post.dim(), 1, -0.3, 0.3);
      VectorXd g;
      VectorXd prior_grad;
      const double expected = lml_gradient(post.structure_at(z), prob.data).value + post.log_prior(z, prior_grad);
      CHECK(post.log_target(z, g) == doctest::Approx(expected).epsilon(1e-12));
    }
  }

  TEST_CASE("laplace mass recovers a Gaussian precision") {
    std::mt19937_64 rng(17);
    const MatrixXd a = testing::random_matrix(rng, 4, 4);
    const MatrixXd precision = a * a.transpose() + MatrixXd::Identity(4, 4);
    const VectorXd mu = testing::random_matrix(rng, 4, 1);
    const LogDensity target = [&](const VectorXd& x, VectorXd& g) {
      g = -precision * (x - mu);
      return -0.5 * (x - mu).dot(precision * (x - mu));
    };
    const MatrixXd m = laplace_mass(target, testing::random_matrix(rng, 4, 1));
    CHECK((m - precision).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(m == m.transpose());
  }

  TEST_CASE("laplace mass floors non-positive curvature") {
    const LogDensity saddle = [](const VectorXd& x, VectorXd& g) {
      g = VectorXd(2);
      g << -2.0 * x(0), 0.5 * x(1);
      return -x(0) * x(0) + 0.25 * x(1) * x(1);
    };
    const MatrixXd m = laplace_mass(saddle, VectorXd::Zero(2));
    CHECK(m(0, 0) == doctest::Approx(2.0));
    CHECK(m(1, 1) == doctest::Approx(2e-6));
    CHECK(Eigen::LLT<MatrixXd>(m).info() == Eigen::Success);
    const LogDensity flat = [](const VectorXd& x, VectorXd& g) {
      g = VectorXd::Zero(x.size());
      return 0.0;
    };
    CHECK_THROWS_AS(laplace_mass(flat, VectorXd::Zero(2)), NumericalError);
    CHECK_THROWS_AS(laplace_mass(saddle, VectorXd::Zero(2), 0.0), ConfigError);
  }

  TEST_CASE("huge noise leaves only the prior gradient") {
    std::mt19937_64 rng(7);
    auto prob = small_problem(rng, 2);
    prob.structure.noise.setConstant(1e12);
    PriorSpec priors;
    priors.loading_mean = 0.5;
    const LoadingsPosterior post(prob.structure, prob.data, priors, false);
    const VectorXd z = VectorXd::Constant(post.dim(), 0.5) + testing::random_matrix(rng, post.dim(), 1, -1, 1);
    VectorXd g;
    post.log_target(z, g);
    const VectorXd expected = -(z.array() - 0.5).matrix() / 100.0;
    CHECK((g - expected).cwiseAbs().maxCoeff() < 1e-8);
  }

  TEST_CASE("posterior coordinates and failure handling") {
    std::mt19937_64 rng(8);
    auto prob = small_problem(rng, 2);
    const LoadingsPosterior post(prob.structure, prob.data, PriorSpec{}, true);
    CHECK(post.dim() == 6);
    CHECK(post.coordinate_names().back() == "noise[1]");
    const VectorXd z = post.initial();
    CHECK(std::abs(z(4) - std::log(prob.structure.noise(0))) < 1e-15);
    const MogpStructure at = post.structure_at(z);
    CHECK(at.terms[0].coregionalization.nuggets == prob.structure.terms[0].coregionalization.nuggets);
    CHECK_THROWS_AS(LoadingsPosterior(build_variant(Variant::Independent, 2, 1), prob.data, PriorSpec{}, false),
                    ConfigError);
    PriorSpec bad;
    bad.loading_sd = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }

  TEST_CASE("identical draws give a degenerate mixture") {
    std::mt19937_64 rng(9);
    auto prob = small_problem(rng, 2);
    const LoadingsPosterior post(prob.structure, prob.data, PriorSpec{}, false);
    const auto test = treated_test(2, 4);
    MatrixXd draws(3, post.dim());
    for (int d = 0; d < 3; ++d) draws.row(d) = post.initial().transpose();
    const auto cf = counterfactual_posterior(post, draws, test, 5, 77, false);
    CHECK(cf.used == 3);
    CHECK(cf.paths.rows() == 15);
    const auto dist = posterior_predictive(FittedGp(prob.structure, prob.data), test);
    for (int d = 0; d < 3; ++d) {
      const MatrixXd own = sample_predictive(dist, 5, derive_seed(77, d));
      CHECK((cf.paths.middleRows(5 * d, 5) - own).cwiseAbs().maxCoeff() < 1e-12);
    }
  }

  TEST_CASE("trajectories are joint draws") {
    std::mt19937_64 rng(10);
    auto prob = small_problem(rng, 2);
    const LoadingsPosterior post(prob.structure, prob.data, PriorSpec{}, false);
    const auto test = treated_test(2, 3);
    const auto cf = counterfactual_posterior(post, post.initial().transpose(), test, 40000, 3, true);
    const auto dist = posterior_predictive(FittedGp(prob.structure, prob.data), test, true);
    const MatrixXd r = cf.paths.rowwise() - dist.mean.transpose();
    const double implied = dist.cov(0, 1) / std::sqrt(dist.cov(0, 0) * dist.cov(1, 1));
    const double observed = r.col(0).dot(r.col(1)) / (r.col(0).norm() * r.col(1).norm());
    const double se = (1.0 - implied * implied) / std::sqrt(40000.0);
    CHECK(std::abs(observed - implied) < 4.0 * se + 1e-3);
  }

  TEST_CASE("derived seeds differ by stream") {
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 0) != derive_seed(2, 0));
    CHECK(derive_seed(9, 4) == derive_seed(9, 4));
  }
}
