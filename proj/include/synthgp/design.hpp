#pragma once

// Turns a panel plus a donor choice into model training data and the
// treated series' forecast inputs.

#include <string>
#include <vector>

#include "synthgp/dataset.hpp"
#include "synthgp/mogp_cov.hpp"

namespace synthgp {

struct ModelDesign {
  Variant variant = Variant::TwoFactor;
  Panel train;                     // treated series first, then donors
  std::vector<SeriesInputs> test;  // only the treated block has rows
  VectorXd test_y;                 // observed treated outcomes, original scale
  std::vector<double> test_times;
  std::vector<std::string> series_ids;
  int covariate_dims = 0;
  // Per panel series: model value = (y - center) / scale.
  std::vector<double> center;
  std::vector<double> scale;

  // Maps treated-series model values back to the outcome scale.
  [[nodiscard]] double treated_scale() const { return scale.front(); }
  [[nodiscard]] double treated_center() const { return center.front(); }
  [[nodiscard]] MatrixXd to_outcome_scale(const MatrixXd& treated_values) const;
};

// Treated rows [0, train_end) are training data and rows [train_end,
// test_end) are forecast targets. Donor rows are kept when their time is
// <= donor_time_limit. For the single-output variant the donors become
// covariates of the treated series, matched on time.
ModelDesign make_design(const HeterotopicDataset& dataset, const std::vector<std::string>& donors, Variant variant,
                        int train_end, int test_end, double donor_time_limit, bool standardize_outcomes);

}  // namespace synthgp
