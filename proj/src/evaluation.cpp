#include "synthgp/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <thread>

#include "synthgp/design.hpp"
#include "synthgp/errors.hpp"
#include "synthgp/gp_engine.hpp"
#include "synthgp/hmc.hpp"

namespace synthgp {

namespace {

std::vector<double> zscore(std::vector<double> v) {
  if (v.empty()) return v;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  for (double& x : v) x = sd > 0.0 ? (x - mean) / sd : 0.0;
  return v;
}

}  // namespace

SplitIndices train_test_split(int t0, double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must be in (0, 1)");
  if (t0 < 6) throw DataError("pre-intervention segment too short to split (need at least 6 points)");
  SplitIndices s;
  s.t_star = static_cast<int>(std::floor(ratio * t0));
  if (s.t_star < 2 || s.t_star > t0) throw DataError("split leaves an empty train or test part");
  for (int p = 1; p < s.t_star; ++p) s.train.push_back(p - 1);
  for (int p = s.t_star; p <= t0; ++p) s.test.push_back(p - 1);
  return s;
}

double mse(const VectorXd& y, const VectorXd& mean) {
  if (y.size() != mean.size()) throw DataError("mse: length mismatch");
  if (y.size() == 0) throw DataError("mse: empty test set");
  return (y - mean).squaredNorm() / static_cast<double>(y.size());
}

double log_score(const VectorXd& y, const VectorXd& mean, const VectorXd& sd) {
  if (y.size() != mean.size() || y.size() != sd.size()) throw DataError("log score: length mismatch");
  if (y.size() == 0) throw DataError("log score: empty test set");
  double total = 0.0;
  for (Eigen::Index t = 0; t < y.size(); ++t) {
    if (!(sd(t) > 0.0)) throw NumericalError("log score: predictive sd must be positive");
    const double z = (y(t) - mean(t)) / sd(t);
    total += 0.5 * z * z + std::log(sd(t)) + 0.5 * std::log(2.0 * std::numbers::pi);
  }
  return total / static_cast<double>(y.size());
}

double energy_score(const VectorXd& y, const MatrixXd& samples) {
  if (samples.cols() != y.size()) throw DataError("energy score: dimension mismatch");
  const Eigen::Index n = samples.rows();
  if (n < 1) throw DataError("energy score: need at least one sample");
  const auto nd = static_cast<double>(n);
  double first = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) first += (samples.row(k) - y.transpose()).norm();
  first /= nd;
  double pair_sum = 0.0;
  if (y.size() == 1) {
    // sum_{k,c} |x_k - x_c| = 2 sum_i (2i - n + 1) x_(i) over sorted values.
    std::vector<double> v(samples.data(), samples.data() + n);
    std::sort(v.begin(), v.end());
    for (Eigen::Index i = 0; i < n; ++i) pair_sum += 2.0 * (2.0 * static_cast<double>(i) - nd + 1.0) * v[i];
  } else {
    for (Eigen::Index k = 0; k < n; ++k) {
      for (Eigen::Index c = k + 1; c < n; ++c) pair_sum += 2.0 * (samples.row(k) - samples.row(c)).norm();
    }
  }
  return std::max(0.0, first - pair_sum / (2.0 * nd * nd));
}

double dtw_distance(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DataError("dtw: empty input");
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m + 1, inf);
  std::vector<double> cur(m + 1, inf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = inf;
    for (std::size_t j = 1; j <= m; ++j) {
      cur[j] = std::abs(a[i - 1] - b[j - 1]) + std::min({prev[j - 1], prev[j], cur[j - 1]});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

ScreenResult screen_donors(const HeterotopicDataset& dataset, int top_n, const std::vector<std::string>& candidates) {
  if (top_n < 1) throw ConfigError("screening: top_n must be at least 1");
  const SeriesRecord& treated = dataset.treated();
  const int t0 = treated.t0.value_or(treated.length());
  const double limit = treated.times[t0 - 1];
  const std::vector<double> target = zscore(std::vector<double>(treated.y.begin(), treated.y.begin() + t0));

  std::vector<std::string> ids = candidates;
  if (ids.empty()) {
    for (const auto& s : dataset.series) {
      if (!s.is_treated) ids.push_back(s.id);
    }
  }
  ScreenResult out;
  for (const auto& id : ids) {
    const int idx = dataset.index_of(id);
    if (idx < 0) throw DataError("screening: unknown candidate '" + id + "'");
    const auto& s = dataset.series[idx];
    if (s.is_treated) throw DataError("screening: the treated series cannot be a candidate");
    std::vector<double> pre;
    for (int r = 0; r < s.length() && s.times[r] <= limit; ++r) pre.push_back(s.y[r]);
    if (pre.empty()) {
      out.warnings.push_back("candidate '" + id + "' has no pre-intervention rows; skipped");
      continue;
    }
    out.ranked.push_back({id, dtw_distance(target, zscore(pre))});
  }
  std::sort(out.ranked.begin(), out.ranked.end(), [](const DonorRank& a, const DonorRank& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.id < b.id;
  });
  if (static_cast<int>(out.ranked.size()) < top_n) {
    out.warnings.push_back("only " + std::to_string(out.ranked.size()) + " candidates available for top_n = " +
                           std::to_string(top_n));
  } else {
    out.ranked.resize(static_cast<std::size_t>(top_n));
  }
  return out;
}

std::vector<std::vector<std::string>> combinations(const std::vector<std::string>& items, int k) {
  const int n = static_cast<int>(items.size());
  if (k < 1 || k > n) throw ConfigError("combinations: need 1 <= choose <= number of donors");
  std::vector<std::vector<std::string>> out;
  std::vector<int> idx(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) idx[i] = i;
  while (true) {
    std::vector<std::string> combo;
    for (int i : idx) combo.push_back(items[i]);
    out.push_back(std::move(combo));
    int pos = k - 1;
    while (pos >= 0 && idx[pos] == n - k + pos) --pos;
    if (pos < 0) break;
    ++idx[pos];
    for (int i = pos + 1; i < k; ++i) idx[i] = idx[i - 1] + 1;
  }
  return out;
}

ModelSpec model_spec_from_tag(const std::string& tag) {
  ModelSpec spec;
  spec.tag = tag;
  std::string base = tag;
  const auto dash = tag.find('-');
  if (dash != std::string::npos) {
    base = tag.substr(0, dash);
    const std::string suffix = tag.substr(dash + 1);
    if (suffix == "M12") {
      spec.time_nu = MaternNu::Half;
    } else if (suffix == "M32") {
      spec.time_nu = MaternNu::ThreeHalves;
    } else if (suffix == "M52") {
      spec.time_nu = MaternNu::FiveHalves;
    } else {
      throw ConfigError("unknown model tag suffix in '" + tag + "'");
    }
  }
  spec.variant = variant_from_string(base);
  return spec;
}

ScoreCard score_model(const HeterotopicDataset& dataset, const std::vector<std::string>& donors,
                      const ModelSpec& model, const SearchConfig& config, std::uint64_t seed) {
  ScoreCard card;
  card.model = model.tag;
  card.donors = donors;
  const auto start = std::chrono::steady_clock::now();
  try {
    const SeriesRecord& treated = dataset.treated();
    const int t0 = treated.t0.value_or(0);
    const SplitIndices split = train_test_split(t0, config.split_ratio);
    const ModelDesign design = make_design(dataset, donors, model.variant, split.t_star - 1, t0,
                                           treated.times[t0 - 1], config.standardize_outcomes);
    VariantDefaults defaults = config.defaults;
    defaults.time_nu = model.time_nu;
    defaults = defaults_for(design.train.inputs, defaults);
    const MogpStructure structure =
        build_variant(model.variant, design.train.outputs_count(), design.covariate_dims, defaults);
    FitConfig fc = config.fit;
    fc.seed = derive_seed(seed, 0);
    fc.optimizer.trace_path.reset();
    const FitResult fit = fit_ml2(structure, design.train, fc);
    const PredictiveDistribution dist = posterior_predictive(*fit.model, design.test, true);
    const double sc = design.treated_scale();
    const VectorXd mean = design.to_outcome_scale(dist.mean);
    const VectorXd sd = dist.cov.diagonal().cwiseMax(0.0).cwiseSqrt() * sc;
    const MatrixXd samples = design.to_outcome_scale(sample_predictive(dist, config.es_samples, derive_seed(seed, 1)));
    card.mse = mse(design.test_y, mean);
    card.log_score = log_score(design.test_y, mean, sd);
    card.energy_score = energy_score(design.test_y, samples);
    card.log_ml = fit.log_ml;
    card.free_parameters = count_parameters(structure);
    card.ok = std::isfinite(card.mse) && std::isfinite(card.log_score) && std::isfinite(card.energy_score);
    card.status = card.ok ? to_string(fit.best.status) : "failed: non-finite score";
  } catch (const std::exception& e) {
    card.ok = false;
    card.status = std::string("failed: ") + e.what();
  }
  card.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return card;
}

std::vector<ScoreCard> combination_search(const HeterotopicDataset& dataset, const std::vector<std::string>& donors,
                                          const std::vector<ModelSpec>& models, const SearchConfig& config) {
  if (models.empty()) throw ConfigError("combination search: no model tags configured");
  const auto combos = combinations(donors, config.choose);
  std::vector<ScoreCard> cards(combos.size() * models.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cards.size(); i = next++) {
      const auto& combo = combos[i / models.size()];
      const auto& model = models[i % models.size()];
      cards[i] = score_model(dataset, combo, model, config, derive_seed(config.seed, i));
      cards[i].index = static_cast<int>(i);
    }
  };
  const int jobs = std::max(1, std::min<int>(config.jobs, static_cast<int>(cards.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::stable_sort(cards.begin(), cards.end(), [](const ScoreCard& a, const ScoreCard& b) {
    if (a.ok != b.ok) return a.ok;
    if (!a.ok) return false;
    return a.energy_score < b.energy_score;
  });
  return cards;
}

}  // namespace synthgp
