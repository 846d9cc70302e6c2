#pragma once

// Pre-intervention model selection: contiguous train/test split, forecast
// scores, DTW donor screening, and the exhaustive donor-combination search.

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "synthgp/dataset.hpp"
#include "synthgp/fit.hpp"
#include "synthgp/kernels.hpp"
#include "synthgp/mogp_cov.hpp"

namespace synthgp {

struct SplitIndices {
  int t_star = 0;         // 1-based first test position
  std::vector<int> train;  // 0-based rows, positions [1, t_star)
  std::vector<int> test;   // 0-based rows, positions [t_star, t0]
};

// t_star = floor(ratio * t0). Needs 0 < ratio < 1, t0 >= 6, and both parts
// non-empty.
SplitIndices train_test_split(int t0, double ratio);

double mse(const VectorXd& y, const VectorXd& mean);
// Negative mean Gaussian log density (lower is better).
double log_score(const VectorXd& y, const VectorXd& mean, const VectorXd& sd);
// samples: N x h.
double energy_score(const VectorXd& y, const MatrixXd& samples);
// Local cost |a_s - b_t|, steps (1,0), (0,1), (1,1), no window.
double dtw_distance(std::span<const double> a, std::span<const double> b);

struct DonorRank {
  std::string id;
  double distance = 0.0;
};

struct ScreenResult {
  std::vector<DonorRank> ranked;
  std::vector<std::string> warnings;
};

// Ranks candidates (every untreated series when `candidates` is empty) by
// DTW distance between z-scored pre-intervention outcomes; ties go to the
// smaller id.
ScreenResult screen_donors(const HeterotopicDataset& dataset, int top_n,
                           const std::vector<std::string>& candidates = {});

// All k-subsets of `items` in lexicographic index order.
std::vector<std::vector<std::string>> combinations(const std::vector<std::string>& items, int k);

struct ModelSpec {
  std::string tag;
  Variant variant = Variant::TwoFactor;
  MaternNu time_nu = MaternNu::Half;
};

// "2FGP", "1FGP", "2RBF", "INGP", "SOGP", optionally suffixed "-M12",
// "-M32" or "-M52" to pick the Matern smoothness.
ModelSpec model_spec_from_tag(const std::string& tag);

struct ScoreCard {
  int index = 0;  // enumeration order
  std::string model;
  std::vector<std::string> donors;
  bool ok = false;
  std::string status;
  double mse = 0.0;
  double log_score = 0.0;
  double energy_score = 0.0;
  double log_ml = 0.0;
  int free_parameters = 0;
  double wall_seconds = 0.0;
};

struct SearchConfig {
  double split_ratio = 2.0 / 3.0;
  int choose = 4;
  int es_samples = 1000;
  bool standardize_outcomes = true;
  VariantDefaults defaults;
  FitConfig fit;
  int jobs = 1;
  std::uint64_t seed = 0;
};

// Scores of one model on one donor set over the pre-intervention split.
ScoreCard score_model(const HeterotopicDataset& dataset, const std::vector<std::string>& donors,
                      const ModelSpec& model, const SearchConfig& config, std::uint64_t seed);

// Fits every (combination x model) pair and returns the cards sorted by
// energy score (failed fits last, ties by enumeration order).
std::vector<ScoreCard> combination_search(const HeterotopicDataset& dataset, const std::vector<std::string>& donors,
                                          const std::vector<ModelSpec>& models, const SearchConfig& config);

}  // namespace synthgp
