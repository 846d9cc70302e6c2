#pragma once

// Panel ingestion, time alignment, and outcome/covariate transforms.
//
// A panel is stored in the heterotopic layout: every series keeps its own
// time grid, outcome vector, and covariate matrix. Series lengths may differ.

#include <Eigen/Dense>
#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace synthgp {

struct SeriesRecord {
  std::string id;
  std::vector<double> times;      // strictly increasing
  std::vector<double> y;          // one per time
  Eigen::MatrixXd covariates;     // times.size() x d
  bool is_treated = false;
  // Number of pre-intervention observations on the treated series;
  // positions [0, t0) are pre, [t0, T) are post.
  std::optional<int> t0;

  [[nodiscard]] int length() const { return static_cast<int>(times.size()); }
};

struct HeterotopicDataset {
  std::vector<SeriesRecord> series;
  std::vector<std::string> covariate_names;
  std::string alignment_rule = "none";
  std::vector<std::string> transforms;
  int dropped_rows = 0;

  [[nodiscard]] int total_T() const;
  [[nodiscard]] int treated_index() const;  // throws DataError if not exactly one
  [[nodiscard]] int index_of(const std::string& id) const;  // -1 if absent
  [[nodiscard]] const SeriesRecord& treated() const { return series.at(treated_index()); }

  // Checks every record invariant; throws DataError on the first violation.
  void validate() const;
};

enum class TimeFormat { Numeric, Date };

struct CsvSchema {
  std::string series_column = "series_id";
  std::string time_column = "time";
  std::string outcome_column = "y";
  std::vector<std::string> covariates;
  TimeFormat time_format = TimeFormat::Numeric;
};

struct IngestResult {
  HeterotopicDataset dataset;  // treatment not yet assigned
  int dropped_rows = 0;
  std::vector<std::string> warnings;
};

// Reads a long-format table (one row per series/time). Rows with a missing
// outcome or covariate are dropped and counted. Date times become day
// numbers since 1970-01-01.
IngestResult ingest_csv(const std::filesystem::path& path, const CsvSchema& schema);

// Marks `treated_id` as the treated series with t0 = number of its
// observations whose time is <= `last_pre_time`.
void assign_treatment(HeterotopicDataset& dataset, const std::string& treated_id, double last_pre_time);

// ---------------------------------------------------------------------------
// Time alignment

using Date = std::chrono::sys_days;

// Parses YYYY-MM-DD.
Date parse_date(const std::string& text);
double day_number(Date date);

struct ThresholdRule {
  // A row qualifies when y > level (level = 0 gives "first nonzero report").
  double level = 0.0;
  bool inclusive = false;  // y >= level instead
  [[nodiscard]] bool qualifies(double y) const { return inclusive ? y >= level : y > level; }
  [[nodiscard]] std::string describe() const;
};

struct AlignedSeries {
  bool excluded = false;       // never satisfied the rule
  int first_row = 0;           // first qualifying row
  std::vector<double> times;   // relative index for rows [first_row, end)
};

struct AlignmentResult {
  std::vector<AlignedSeries> series;
  std::vector<std::string> warnings;
};

// The earliest qualifying date in the panel maps to t = 1; every other date
// maps to 1 + (periods elapsed since that date).
AlignmentResult align_times(const std::vector<std::vector<Date>>& dates,
                            const std::vector<std::vector<double>>& y, const ThresholdRule& rule,
                            double period_days = 7.0);

// Applies align_times to a dataset ingested in date mode (times are day
// numbers). Excluded series are removed; rows before the first qualifying
// date are dropped.
std::vector<std::string> align_dataset(HeterotopicDataset& dataset, const ThresholdRule& rule,
                                       double period_days = 7.0);

// ---------------------------------------------------------------------------
// Transforms

// log((y / population) * per + floor). Throws DataError on negative counts.
std::vector<double> transform_log_per_capita(std::span<const double> y, double population, double per,
                                             double floor = 0.5);

struct PcaResult {
  Eigen::VectorXd scores;
  Eigen::VectorXd loadings;           // over the kept columns
  double explained_variance_ratio = 0.0;
  std::vector<int> kept_columns;
  std::vector<std::string> warnings;  // dropped constant columns
};

// First principal component of the column-standardized matrix (correlation
// PCA). The sign is fixed so the first nonzero loading is positive.
PcaResult pca_first_component(const Eigen::MatrixXd& x);

// Replaces the named covariate columns of every series by their first
// principal component (computed per series).
std::vector<std::string> apply_pca(HeterotopicDataset& dataset, const std::vector<std::string>& columns,
                                   const std::string& new_name);

// z-scores each covariate column within each series. Constant columns
// become zero.
void standardize_covariates(HeterotopicDataset& dataset);

// ---------------------------------------------------------------------------
// Export / re-import

// Writes the dataset as long-format CSV plus a JSON sidecar with the
// treatment assignment, alignment rule, transforms, and drop count.
void export_dataset(const HeterotopicDataset& dataset, const std::filesystem::path& csv_path,
                    const std::filesystem::path& meta_path);

HeterotopicDataset load_exported(const std::filesystem::path& csv_path, const std::filesystem::path& meta_path);

}  // namespace synthgp
