#include "synthgp/design.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "synthgp/errors.hpp"

namespace synthgp {

namespace {

void scale_of(const std::vector<double>& v, double& center, double& scale) {
  center = 0.0;
  scale = 1.0;
  if (v.empty()) return;
  for (double x : v) center += x;
  center /= static_cast<double>(v.size());
  if (v.size() < 2) return;
  double ss = 0.0;
  for (double x : v) ss += (x - center) * (x - center);
  const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
  if (sd > 0.0 && std::isfinite(sd)) scale = sd;
}

SeriesInputs rows_of(const SeriesRecord& s, int begin, int end) {
  SeriesInputs in;
  const int n = std::max(0, end - begin);
  in.time.resize(n);
  in.covariates.resize(n, s.covariates.cols());
  for (int r = 0; r < n; ++r) {
    in.time(r) = s.times[begin + r];
    in.covariates.row(r) = s.covariates.row(begin + r);
  }
  return in;
}

}  // namespace

MatrixXd ModelDesign::to_outcome_scale(const MatrixXd& treated_values) const {
  return (treated_values.array() * treated_scale() + treated_center()).matrix();
}

ModelDesign make_design(const HeterotopicDataset& dataset, const std::vector<std::string>& donors, Variant variant,
                        int train_end, int test_end, double donor_time_limit, bool standardize_outcomes) {
  const SeriesRecord& treated = dataset.treated();
  if (train_end < 1 || train_end > test_end || test_end > treated.length()) {
    throw DataError("design: invalid treated row range");
  }
  std::vector<const SeriesRecord*> donor_records;
  for (const auto& id : donors) {
    const int idx = dataset.index_of(id);
    if (idx < 0) throw DataError("design: unknown donor '" + id + "'");
    if (dataset.series[idx].is_treated) throw DataError("design: the treated series cannot be a donor");
    donor_records.push_back(&dataset.series[idx]);
  }

  ModelDesign d;
  d.variant = variant;
  d.series_ids.push_back(treated.id);
  d.test_y.resize(test_end - train_end);
  for (int r = train_end; r < test_end; ++r) {
    d.test_y(r - train_end) = treated.y[r];
    d.test_times.push_back(treated.times[r]);
  }

  if (variant == Variant::SingleOutput) {
    // Donor outcomes at the treated series' times become extra covariates.
    std::vector<std::map<double, double>> lookup;
    for (const auto* s : donor_records) {
      std::map<double, double> m;
      for (int r = 0; r < s->length(); ++r) m[s->times[r]] = s->y[r];
      lookup.push_back(std::move(m));
    }
    std::vector<double> dcenter(donor_records.size());
    std::vector<double> dscale(donor_records.size());
    for (std::size_t k = 0; k < donor_records.size(); ++k) {
      std::vector<double> pre;
      for (int r = 0; r < donor_records[k]->length(); ++r) {
        if (donor_records[k]->times[r] <= donor_time_limit) pre.push_back(donor_records[k]->y[r]);
      }
      scale_of(pre, dcenter[k], dscale[k]);
    }
    const Eigen::Index base_cols = treated.covariates.cols();
    const auto extra = static_cast<Eigen::Index>(donor_records.size());
    auto build = [&](int begin, int end, std::vector<double>* y, bool strict) {
      SeriesInputs in;
      std::vector<int> kept;
      for (int r = begin; r < end; ++r) {
        bool ok = true;
        for (const auto& m : lookup) ok = ok && m.count(treated.times[r]) > 0;
        if (ok) {
          kept.push_back(r);
        } else if (strict) {
          throw DataError("design: a donor has no observation at forecast time " +
                          std::to_string(treated.times[r]));
        }
      }
      in.time.resize(static_cast<Eigen::Index>(kept.size()));
      in.covariates.resize(static_cast<Eigen::Index>(kept.size()), base_cols + extra);
      for (std::size_t i = 0; i < kept.size(); ++i) {
        const int r = kept[i];
        const auto ii = static_cast<Eigen::Index>(i);
        in.time(ii) = treated.times[r];
        if (base_cols > 0) in.covariates.row(ii).head(base_cols) = treated.covariates.row(r);
        for (Eigen::Index k = 0; k < extra; ++k) {
          in.covariates(ii, base_cols + k) = (lookup[k].at(treated.times[r]) - dcenter[k]) / dscale[k];
        }
        if (y) y->push_back(treated.y[r]);
      }
      return in;
    };
    std::vector<double> ty;
    SeriesInputs train = build(0, train_end, &ty, false);
    if (train.rows() < 2) throw DataError("design: too few time points shared with the donors");
    double c = 0.0;
    double sc = 1.0;
    if (standardize_outcomes) scale_of(ty, c, sc);
    VectorXd y(static_cast<Eigen::Index>(ty.size()));
    for (std::size_t i = 0; i < ty.size(); ++i) y(static_cast<Eigen::Index>(i)) = (ty[i] - c) / sc;
    d.train.inputs = {train};
    d.train.outputs = {y};
    d.test = {build(train_end, test_end, nullptr, true)};
    d.center = {c};
    d.scale = {sc};
    d.covariate_dims = static_cast<int>(base_cols + extra);
    return d;
  }

  d.covariate_dims = static_cast<int>(treated.covariates.cols());
  auto add = [&](const SeriesRecord& s, int begin, int end) {
    std::vector<double> y(s.y.begin() + begin, s.y.begin() + end);
    double c = 0.0;
    double sc = 1.0;
    if (standardize_outcomes) scale_of(y, c, sc);
    VectorXd v(static_cast<Eigen::Index>(y.size()));
    for (std::size_t i = 0; i < y.size(); ++i) v(static_cast<Eigen::Index>(i)) = (y[i] - c) / sc;
    d.train.inputs.push_back(rows_of(s, begin, end));
    d.train.outputs.push_back(v);
    d.center.push_back(c);
    d.scale.push_back(sc);
  };
  add(treated, 0, train_end);
  for (const auto* s : donor_records) {
    if (s->covariates.cols() != treated.covariates.cols()) throw DataError("design: covariate count differs");
    const int end = static_cast<int>(std::upper_bound(s->times.begin(), s->times.end(), donor_time_limit) -
                                     s->times.begin());
    if (end < 1) throw DataError("design: donor '" + s->id + "' has no rows in the training window");
    add(*s, 0, end);
    d.series_ids.push_back(s->id);
  }
  d.test.resize(d.train.inputs.size());
  d.test[0] = rows_of(treated, train_end, test_end);
  for (std::size_t i = 1; i < d.test.size(); ++i) {
    d.test[i].time.resize(0);
    d.test[i].covariates.resize(0, treated.covariates.cols());
  }
  return d;
}

}  // namespace synthgp
