#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "../common/synthetic.hpp"
#include "helpers.hpp"
#include "synthgp/errors.hpp"
#include "synthgp/evaluation.hpp"

using namespace synthgp;

namespace {

// Full-table DTW with the three standard steps.
double dtw_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<std::vector<double>> d(n + 1, std::vector<double>(m + 1, INFINITY));
  d[0][0] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      d[i][j] = std::abs(a[i - 1] - b[j - 1]) + std::min({d[i - 1][j], d[i][j - 1], d[i - 1][j - 1]});
    }
  }
  return d[n][m];
}

std::vector<double> random_ints(std::mt19937_64& rng, int n) {
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = testing::uniform_int(rng, -5, 5);
  return v;
}

HeterotopicDataset screening_panel(const std::vector<std::vector<double>>& ys, int t0) {
  HeterotopicDataset ds;
  ds.covariate_names = {"x"};
  for (std::size_t i = 0; i < ys.size(); ++i) {
    SeriesRecord s;
    s.id = i == 0 ? "T" : std::string(1, static_cast<char>('a' + i - 1));
    for (std::size_t t = 0; t < ys[i].size(); ++t) s.times.push_back(static_cast<double>(t + 1));
    s.y = ys[i];
    s.covariates = MatrixXd::Zero(static_cast<Eigen::Index>(ys[i].size()), 1);
    if (i == 0) {
      s.is_treated = true;
      s.t0 = t0;
    }
    ds.series.push_back(s);
  }
  return ds;
}

SearchConfig quick_search() {
  SearchConfig cfg;
  cfg.es_samples = 50;
  cfg.fit.restarts = 1;
  cfg.fit.optimizer.max_iter = 30;
  cfg.defaults.noise_floor = 1e-4;
  return cfg;
}

}  // namespace

TEST_SUITE("evaluation") {
  TEST_CASE("train test split arithmetic") {
    const SplitIndices s = train_test_split(30, 2.0 / 3.0);
    CHECK(s.t_star == 20);
    CHECK(s.train.size() == 19);
    CHECK(s.test.size() == 11);
    for (std::size_t i = 1; i < s.train.size(); ++i) CHECK(s.train[i] == s.train[i - 1] + 1);
    CHECK(s.test.front() == s.train.back() + 1);
    CHECK(s.test.back() == 29);
    CHECK_THROWS_AS(train_test_split(30, 1.0), ConfigError);
    CHECK_THROWS_AS(train_test_split(5, 0.5), DataError);
  }

  TEST_CASE("mean squared error") {
    const VectorXd y = (VectorXd(2) << 1.0, 2.0).finished();
    const VectorXd m = (VectorXd(2) << 0.0, 3.0).finished();
    CHECK(mse(y, y) == 0.0);
    CHECK(mse(y, m) == 1.0);
    const VectorXd m2 = (VectorXd(2) << -1.0, 4.0).finished();
    CHECK(mse(y, m2) == 4.0 * mse(y, m));
    CHECK_THROWS_AS(mse(VectorXd(), VectorXd()), DataError);
  }

  TEST_CASE("log score") {
    const VectorXd y = VectorXd::Zero(1);
    CHECK(log_score(y, y, VectorXd::Ones(1)) == doctest::Approx(0.5 * std::log(2.0 * M_PI)).epsilon(1e-14));
    CHECK(log_score(y, y, VectorXd::Constant(1, 2.0)) > log_score(y, y, VectorXd::Ones(1)));
    std::mt19937_64 rng(1);
    for (int rep = 0; rep < 10; ++rep) {
      const VectorXd a = testing::random_matrix(rng, 5, 1, -2, 2);
      const VectorXd mu = testing::random_matrix(rng, 5, 1, -2, 2);
      const VectorXd sd = testing::random_matrix(rng, 5, 1, 0.2, 2);
      double oracle = 0.0;
      for (int t = 0; t < 5; ++t) {
        const MatrixXd s = MatrixXd::Constant(1, 1, sd(t) * sd(t));
        oracle -= testing::dense_log_density(VectorXd::Constant(1, a(t) - mu(t)), s);
      }
      CHECK(std::abs(log_score(a, mu, sd) - oracle / 5.0) < 1e-12);
    }
    CHECK_THROWS_AS(log_score(y, y, VectorXd::Zero(1)), NumericalError);
  }

  TEST_CASE("energy score") {
    const VectorXd y = (VectorXd(2) << 1.0, -1.0).finished();
    MatrixXd same(4, 2);
    for (int k = 0; k < 4; ++k) same.row(k) = y.transpose();
    CHECK(energy_score(y, same) == 0.0);
    const MatrixXd one = (MatrixXd(1, 2) << 4.0, 3.0).finished();
    CHECK(energy_score(y, one) == doctest::Approx(5.0));
    CHECK_THROWS_AS(energy_score(y, MatrixXd::Zero(3, 1)), DataError);
  }

  TEST_CASE("energy score at h = 1 is the normal CRPS") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 1.0);
    MatrixXd samples(100000, 1);
    for (Eigen::Index k = 0; k < samples.rows(); ++k) samples(k, 0) = n(rng);
    const double crps = 2.0 / std::sqrt(2.0 * M_PI) - 1.0 / std::sqrt(M_PI);
    CHECK(std::abs(energy_score(VectorXd::Zero(1), samples) / crps - 1.0) < 0.02);
  }

  TEST_CASE("property: energy score is non-negative and matches the pairwise form") {
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 30; ++rep) {
      const int h = testing::uniform_int(rng, 1, 4);
      const int n = testing::uniform_int(rng, 1, 30);
      const MatrixXd s = testing::random_matrix(rng, n, h, -3, 3);
      const VectorXd y = testing::random_matrix(rng, h, 1, -3, 3);
      double first = 0.0;
      double second = 0.0;
      for (int k = 0; k < n; ++k) {
        first += (s.row(k).transpose() - y).norm();
        for (int c = 0; c < n; ++c) second += (s.row(k) - s.row(c)).norm();
      }
      const double oracle = first / n - second / (2.0 * n * n);
      const double es = energy_score(y, s);
      CHECK(es >= 0.0);
      CHECK(std::abs(es - oracle) < 1e-10 * std::max(1.0, std::abs(oracle)));
    }
  }

  TEST_CASE("dtw hand examples") {
    const std::vector<double> a{1, 2, 3};
    const std::vector<double> b{1, 2, 2, 3};
    CHECK(dtw_distance(a, a) == 0.0);
    CHECK(dtw_distance(a, b) == 0.0);
    CHECK(dtw_distance(std::vector<double>{0, 0}, std::vector<double>{1, 1}) == 2.0);
    CHECK_THROWS_AS(dtw_distance(std::vector<double>{}, a), DataError);
  }

  TEST_CASE("property: dtw matches the quadratic oracle, is symmetric and bounded") {
    std::mt19937_64 rng(4);
    for (int rep = 0; rep < 100; ++rep) {
      const auto a = random_ints(rng, testing::uniform_int(rng, 1, 20));
      const auto b = random_ints(rng, testing::uniform_int(rng, 1, 20));
      CHECK(dtw_distance(a, b) == dtw_oracle(a, b));
      CHECK(dtw_distance(a, b) == dtw_distance(b, a));
      const auto c = random_ints(rng, static_cast<int>(a.size()));
      double direct = 0.0;
      for (std::size_t t = 0; t < a.size(); ++t) direct += std::abs(a[t] - c[t]);
      CHECK(dtw_distance(a, c) <= direct);
    }
  }

  TEST_CASE("screening ranks the identical candidate first") {
    const std::vector<double> base{1, 3, 2, 5, 4, 6, 9, 9};
    std::vector<double> scaled;
    for (double v : base) scaled.push_back(10.0 + 3.0 * v);
    const HeterotopicDataset ds =
        screening_panel({base, {5, 1, 4, 2, 6, 3, 0, 0}, scaled, {1, 1, 2, 2, 3, 3, 4, 4}}, 6);
    const ScreenResult r = screen_donors(ds, 2);
    REQUIRE(r.ranked.size() == 2);
    CHECK(r.ranked[0].id == "b");  // z-scoring removes the affine change
    CHECK(r.ranked[0].distance == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r.warnings.empty());
  }

  TEST_CASE("screening ties break by id and ignore candidate order") {
    const std::vector<double> t{1, 2, 3, 4, 5, 6, 7};
    const HeterotopicDataset ds = screening_panel({t, t, t, {7, 6, 5, 4, 3, 2, 1}}, 7);
    const ScreenResult a = screen_donors(ds, 3, {"c", "b", "a"});
    const ScreenResult b = screen_donors(ds, 3, {"a", "c", "b"});
    REQUIRE(a.ranked.size() == 3);
    CHECK(a.ranked[0].id == "a");
    CHECK(a.ranked[1].id == "b");
    for (std::size_t i = 0; i < 3; ++i) CHECK(a.ranked[i].id == b.ranked[i].id);
    const ScreenResult wide = screen_donors(ds, 8);
    CHECK(wide.ranked.size() == 3);
    CHECK(wide.warnings.size() == 1);
    CHECK_THROWS_AS(screen_donors(ds, 2, {"zz"}), DataError);
    CHECK_THROWS_AS(screen_donors(ds, 2, {"T"}), DataError);
  }

  TEST_CASE("combinations") {
    const std::vector<std::string> eight{"a", "b", "c", "d", "e", "f", "g", "h"};
    const auto all = combinations(eight, 4);
    CHECK(all.size() == 70);
    CHECK(all.front() == std::vector<std::string>{"a", "b", "c", "d"});
    CHECK(all.back() == std::vector<std::string>{"e", "f", "g", "h"});
    CHECK(std::is_sorted(all.begin(), all.end()));
    CHECK(combinations(eight, 8).size() == 1);
    CHECK_THROWS_AS(combinations(eight, 9), ConfigError);
  }

  TEST_CASE("model tags") {
    CHECK(model_spec_from_tag("2FGP").time_nu == MaternNu::Half);
    const ModelSpec m = model_spec_from_tag("2FGP-M32");
    CHECK(m.variant == Variant::TwoFactor);
    CHECK(m.time_nu == MaternNu::ThreeHalves);
    CHECK_THROWS_AS(model_spec_from_tag("2FGP-M72"), ConfigError);
    CHECK_THROWS_AS(model_spec_from_tag("BCI"), ConfigError);
  }

  TEST_CASE("single donor single model search") {
    synthetic::PanelSpec spec;
    spec.series = 2;
    spec.length = 24;
    spec.t0 = 18;
    const HeterotopicDataset ds = synthetic::make_panel(spec);
    SearchConfig cfg = quick_search();
    cfg.choose = 1;
    const auto cards = combination_search(ds, {"donor1"}, {model_spec_from_tag("2FGP")}, cfg);
    REQUIRE(cards.size() == 1);
    CHECK(cards[0].ok);
    CHECK(cards[0].mse >= 0.0);
    CHECK(cards[0].energy_score >= 0.0);
    CHECK(std::isfinite(cards[0].log_score));
    CHECK(cards[0].free_parameters == count_parameters(build_variant(Variant::TwoFactor, 2, 1)));
  }

  TEST_CASE("eight donors choose four enumerates seventy deterministic cards") {
    synthetic::PanelSpec spec;
    spec.series = 9;
    spec.length = 14;
    spec.t0 = 10;
    spec.seed = 5;
    const HeterotopicDataset ds = synthetic::make_panel(spec);
    std::vector<std::string> donors;
    for (int i = 1; i <= 8; ++i) donors.push_back("donor" + std::to_string(i));
    SearchConfig cfg = quick_search();
    cfg.jobs = 4;
    const auto a = combination_search(ds, donors, {model_spec_from_tag("SOGP")}, cfg);
    CHECK(a.size() == 70);
    cfg.jobs = 2;
    const auto b = combination_search(ds, donors, {model_spec_from_tag("SOGP")}, cfg);
    REQUIRE(b.size() == 70);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].index == b[i].index);
      CHECK(a[i].energy_score == b[i].energy_score);
    }
    for (std::size_t i = 1; i < a.size(); ++i) {
      if (a[i].ok && a[i - 1].ok) CHECK(a[i - 1].energy_score <= a[i].energy_score);
      if (a[i].ok) CHECK(a[i - 1].ok);
    }
  }

  TEST_CASE("failed fits are recorded, not fatal") {
    synthetic::PanelSpec spec;
    spec.series = 2;
    spec.length = 12;
    spec.t0 = 8;
    HeterotopicDataset ds = synthetic::make_panel(spec);
    ds.series[1].y[0] = std::nan("");
    const auto cards = combination_search(ds, {"donor1"}, {model_spec_from_tag("2FGP")}, [] {
      SearchConfig c = quick_search();
      c.choose = 1;
      return c;
    }());
    REQUIRE(cards.size() == 1);
    CHECK_FALSE(cards[0].ok);
    CHECK(cards[0].status.rfind("failed", 0) == 0);
  }
}
