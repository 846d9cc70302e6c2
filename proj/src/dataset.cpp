#include "synthgp/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "synthgp/csv.hpp"
#include "synthgp/errors.hpp"

namespace synthgp {

namespace {

bool is_missing(const std::string& s) {
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "null" || s == "NULL";
}

double parse_number(const std::string& s, const std::string& column) {
  double value = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  while (begin < end && *begin == ' ') ++begin;
  while (end > begin && end[-1] == ' ') --end;
  if (begin < end && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end) {
    throw DataError("non-numeric value '" + s + "' in column '" + column + "'");
  }
  return value;
}

struct Row {
  double time;
  double y;
  std::vector<double> covariates;
};

}  // namespace

int HeterotopicDataset::total_T() const {
  int total = 0;
  for (const auto& s : series) total += s.length();
  return total;
}

int HeterotopicDataset::treated_index() const {
  int found = -1;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series[i].is_treated) {
      if (found >= 0) throw DataError("more than one treated series in panel");
      found = static_cast<int>(i);
    }
  }
  if (found < 0) throw DataError("panel has no treated series");
  return found;
}

int HeterotopicDataset::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series[i].id == id) return static_cast<int>(i);
  }
  return -1;
}

void HeterotopicDataset::validate() const {
  const auto d = static_cast<Eigen::Index>(covariate_names.size());
  for (const auto& s : series) {
    if (s.times.empty()) throw DataError("series '" + s.id + "' is empty");
    if (s.y.size() != s.times.size()) throw DataError("series '" + s.id + "': y length differs from times");
    if (s.covariates.rows() != static_cast<Eigen::Index>(s.times.size()) || s.covariates.cols() != d) {
      throw DataError("series '" + s.id + "': covariate matrix shape mismatch");
    }
    for (std::size_t t = 1; t < s.times.size(); ++t) {
      if (!(s.times[t] > s.times[t - 1])) throw DataError("series '" + s.id + "': times not strictly increasing");
    }
    if (s.is_treated) {
      if (!s.t0 || *s.t0 < 1 || *s.t0 >= s.length()) {
        throw DataError("treated series '" + s.id + "' needs 1 <= t0 < T");
      }
    }
  }
  static_cast<void>(treated_index());
}

IngestResult ingest_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  const csv::Table table = csv::read(path);
  auto require = [&](const std::string& name) {
    const int c = table.column(name);
    if (c < 0) throw DataError("missing mandatory column '" + name + "' in " + path.string());
    return c;
  };
  const int id_col = require(schema.series_column);
  const int time_col = require(schema.time_column);
  const int y_col = require(schema.outcome_column);
  std::vector<int> cov_cols;
  for (const auto& name : schema.covariates) cov_cols.push_back(require(name));

  IngestResult result;
  std::vector<std::string> order;
  std::unordered_map<std::string, std::vector<Row>> rows;
  for (const auto& fields : table.rows) {
    const std::string& id = fields[id_col];
    if (id.empty()) throw DataError("empty series id");
    if (!rows.contains(id)) order.push_back(id);
    auto& bucket = rows[id];

    bool missing = is_missing(fields[time_col]) || is_missing(fields[y_col]);
    for (int c : cov_cols) missing = missing || is_missing(fields[c]);
    if (missing) {
      ++result.dropped_rows;
      continue;
    }
    Row row;
    row.time = schema.time_format == TimeFormat::Date ? day_number(parse_date(fields[time_col]))
                                                      : parse_number(fields[time_col], schema.time_column);
    row.y = parse_number(fields[y_col], schema.outcome_column);
    for (std::size_t k = 0; k < cov_cols.size(); ++k) {
      row.covariates.push_back(parse_number(fields[cov_cols[k]], schema.covariates[k]));
    }
    bucket.push_back(std::move(row));
  }

  auto& ds = result.dataset;
  ds.covariate_names = schema.covariates;
  ds.dropped_rows = result.dropped_rows;
  for (const auto& id : order) {
    auto& bucket = rows[id];
    if (bucket.empty()) throw DataError("series '" + id + "' is empty after dropping missing rows");
    std::stable_sort(bucket.begin(), bucket.end(), [](const Row& a, const Row& b) { return a.time < b.time; });
    SeriesRecord rec;
    rec.id = id;
    rec.covariates.resize(static_cast<Eigen::Index>(bucket.size()), static_cast<Eigen::Index>(cov_cols.size()));
    for (std::size_t t = 0; t < bucket.size(); ++t) {
      if (t > 0 && bucket[t].time == bucket[t - 1].time) {
        throw DataError("duplicate (series_id, time) pair for series '" + id + "'");
      }
      rec.times.push_back(bucket[t].time);
      rec.y.push_back(bucket[t].y);
      for (std::size_t k = 0; k < cov_cols.size(); ++k) {
        rec.covariates(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = bucket[t].covariates[k];
      }
    }
    ds.series.push_back(std::move(rec));
  }
  if (result.dropped_rows > 0) {
    result.warnings.push_back("dropped " + std::to_string(result.dropped_rows) + " row(s) with missing values");
  }
  return result;
}

void assign_treatment(HeterotopicDataset& dataset, const std::string& treated_id, double last_pre_time) {
  const int idx = dataset.index_of(treated_id);
  if (idx < 0) throw DataError("treated series '" + treated_id + "' not found in panel");
  for (auto& s : dataset.series) {
    s.is_treated = false;
    s.t0.reset();
  }
  auto& treated = dataset.series[idx];
  treated.is_treated = true;
  const auto pre = std::count_if(treated.times.begin(), treated.times.end(),
                                 [&](double t) { return t <= last_pre_time; });
  treated.t0 = static_cast<int>(pre);
  if (pre < 1 || pre >= treated.length()) {
    throw DataError("intervention leaves no pre- or post-intervention data on '" + treated_id + "'");
  }
}

// ---------------------------------------------------------------------------

Date parse_date(const std::string& text) {
  int y = 0;
  unsigned m = 0;
  unsigned d = 0;
  char dash1 = 0;
  char dash2 = 0;
  std::istringstream in(text);
  if (!(in >> y >> dash1 >> m >> dash2 >> d) || dash1 != '-' || dash2 != '-') {
    throw DataError("invalid ISO-8601 date '" + text + "'");
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw DataError("invalid calendar date '" + text + "'");
  return Date{ymd};
}

double day_number(Date date) { return static_cast<double>(date.time_since_epoch().count()); }

std::string ThresholdRule::describe() const {
  std::ostringstream out;
  out << "t=1 at the earliest date with y " << (inclusive ? ">= " : "> ") << level;
  return out.str();
}

AlignmentResult align_times(const std::vector<std::vector<Date>>& dates, const std::vector<std::vector<double>>& y,
                            const ThresholdRule& rule, double period_days) {
  if (dates.size() != y.size()) throw DataError("align_times: dates and outcomes disagree on series count");
  if (!(period_days > 0.0)) throw ConfigError("align_times: period must be positive");
  AlignmentResult result;
  result.series.resize(dates.size());
  std::optional<Date> earliest;
  for (std::size_t i = 0; i < dates.size(); ++i) {
    if (dates[i].size() != y[i].size()) throw DataError("align_times: dates and outcomes differ in length");
    auto& out = result.series[i];
    const auto it = std::find_if(y[i].begin(), y[i].end(), [&](double v) { return rule.qualifies(v); });
    if (it == y[i].end()) {
      out.excluded = true;
      result.warnings.push_back("series " + std::to_string(i) + " never satisfies the threshold rule; excluded");
      continue;
    }
    out.first_row = static_cast<int>(it - y[i].begin());
    const Date first = dates[i][out.first_row];
    if (!earliest || first < *earliest) earliest = first;
  }
  if (!earliest) throw DataError("align_times: no series satisfies the threshold rule");
  for (std::size_t i = 0; i < dates.size(); ++i) {
    auto& out = result.series[i];
    if (out.excluded) continue;
    for (std::size_t r = out.first_row; r < dates[i].size(); ++r) {
      const double elapsed = static_cast<double>((dates[i][r] - *earliest).count());
      out.times.push_back(1.0 + elapsed / period_days);
    }
  }
  return result;
}

std::vector<std::string> align_dataset(HeterotopicDataset& dataset, const ThresholdRule& rule, double period_days) {
  std::vector<std::vector<Date>> dates;
  std::vector<std::vector<double>> ys;
  for (const auto& s : dataset.series) {
    std::vector<Date> d;
    for (double t : s.times) d.emplace_back(std::chrono::days{static_cast<long>(std::llround(t))});
    dates.push_back(std::move(d));
    ys.push_back(s.y);
  }
  AlignmentResult aligned = align_times(dates, ys, rule, period_days);
  std::vector<std::string> warnings;
  std::vector<SeriesRecord> kept;
  for (std::size_t i = 0; i < dataset.series.size(); ++i) {
    auto& s = dataset.series[i];
    const auto& a = aligned.series[i];
    if (a.excluded) {
      warnings.push_back("series '" + s.id + "' never satisfies the threshold rule; excluded");
      continue;
    }
    const int first = a.first_row;
    const int n = s.length() - first;
    SeriesRecord rec;
    rec.id = s.id;
    rec.times = a.times;
    rec.y.assign(s.y.begin() + first, s.y.end());
    rec.covariates = s.covariates.bottomRows(n);
    rec.is_treated = s.is_treated;
    if (s.t0) rec.t0 = *s.t0 - first;
    kept.push_back(std::move(rec));
  }
  dataset.series = std::move(kept);
  std::ostringstream rule_text;
  rule_text << rule.describe() << "; period " << period_days << " days";
  dataset.alignment_rule = rule_text.str();
  return warnings;
}

// ---------------------------------------------------------------------------

std::vector<double> transform_log_per_capita(std::span<const double> y, double population, double per, double floor) {
  if (!(population > 0.0)) throw DataError("population must be positive");
  if (!(per > 0.0)) throw ConfigError("per-capita scale must be positive");
  if (floor < 0.0) throw ConfigError("log floor must be non-negative");
  std::vector<double> out;
  out.reserve(y.size());
  for (double v : y) {
    if (v < 0.0) throw DataError("negative count in log transform");
    out.push_back(std::log(v / population * per + floor));
  }
  return out;
}

PcaResult pca_first_component(const Eigen::MatrixXd& x) {
  const Eigen::Index n = x.rows();
  if (n < 2) throw DataError("PCA needs at least two rows");
  PcaResult result;
  std::vector<Eigen::VectorXd> standardized;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const Eigen::VectorXd col = x.col(c);
    const double mean = col.mean();
    const double sd = std::sqrt((col.array() - mean).square().sum() / static_cast<double>(n - 1));
    if (!(sd > 0.0)) {
      result.warnings.push_back("PCA column " + std::to_string(c) + " has zero variance; dropped");
      continue;
    }
    result.kept_columns.push_back(static_cast<int>(c));
    standardized.push_back((col.array() - mean) / sd);
  }
  if (standardized.empty()) throw DataError("PCA: every column is constant");

  Eigen::MatrixXd z(n, static_cast<Eigen::Index>(standardized.size()));
  for (std::size_t c = 0; c < standardized.size(); ++c) z.col(static_cast<Eigen::Index>(c)) = standardized[c];
  const Eigen::MatrixXd corr = (z.transpose() * z) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(corr);
  const Eigen::Index top = corr.rows() - 1;  // eigenvalues ascending
  Eigen::VectorXd v = eig.eigenvectors().col(top);
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::abs(v(i)) > 1e-12) {
      if (v(i) < 0.0) v = -v;
      break;
    }
  }
  result.loadings = v;
  result.scores = z * v;
  result.explained_variance_ratio = eig.eigenvalues()(top) / corr.trace();
  return result;
}

std::vector<std::string> apply_pca(HeterotopicDataset& dataset, const std::vector<std::string>& columns,
                                   const std::string& new_name) {
  std::vector<int> idx;
  for (const auto& name : columns) {
    const auto it = std::find(dataset.covariate_names.begin(), dataset.covariate_names.end(), name);
    if (it == dataset.covariate_names.end()) throw ConfigError("PCA column '" + name + "' is not a covariate");
    idx.push_back(static_cast<int>(it - dataset.covariate_names.begin()));
  }
  if (idx.empty()) throw ConfigError("PCA needs at least one column");
  std::vector<int> rest;
  for (int c = 0; c < static_cast<int>(dataset.covariate_names.size()); ++c) {
    if (std::find(idx.begin(), idx.end(), c) == idx.end()) rest.push_back(c);
  }
  std::vector<std::string> warnings;
  std::ostringstream note;
  note << "pca(" << new_name << ")";
  for (auto& s : dataset.series) {
    Eigen::MatrixXd block(s.covariates.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) block.col(static_cast<Eigen::Index>(k)) = s.covariates.col(idx[k]);
    PcaResult pca = pca_first_component(block);
    for (const auto& w : pca.warnings) warnings.push_back(s.id + ": " + w);
    note << " " << s.id << ":" << pca.explained_variance_ratio;
    Eigen::MatrixXd next(s.covariates.rows(), static_cast<Eigen::Index>(rest.size() + 1));
    for (std::size_t k = 0; k < rest.size(); ++k) next.col(static_cast<Eigen::Index>(k)) = s.covariates.col(rest[k]);
    next.col(static_cast<Eigen::Index>(rest.size())) = pca.scores;
    s.covariates = std::move(next);
  }
  std::vector<std::string> names;
  for (int c : rest) names.push_back(dataset.covariate_names[c]);
  names.push_back(new_name);
  dataset.covariate_names = std::move(names);
  dataset.transforms.push_back(note.str());
  return warnings;
}

void standardize_covariates(HeterotopicDataset& dataset) {
  for (auto& s : dataset.series) {
    const Eigen::Index n = s.covariates.rows();
    for (Eigen::Index c = 0; c < s.covariates.cols(); ++c) {
      auto col = s.covariates.col(c);
      const double mean = col.mean();
      const double var = n > 1 ? (col.array() - mean).square().sum() / static_cast<double>(n - 1) : 0.0;
      if (var > 0.0) {
        col = (col.array() - mean) / std::sqrt(var);
      } else {
        col.setZero();
      }
    }
  }
  dataset.transforms.emplace_back("zscore(covariates, per series)");
}

// ---------------------------------------------------------------------------

void export_dataset(const HeterotopicDataset& dataset, const std::filesystem::path& csv_path,
                    const std::filesystem::path& meta_path) {
  std::ofstream out(csv_path, std::ios::binary);
  if (!out) throw Error("cannot write " + csv_path.string());
  out << "series_id,time,y";
  for (const auto& name : dataset.covariate_names) out << ',' << csv::escape(name);
  out << '\n';
  for (const auto& s : dataset.series) {
    for (int t = 0; t < s.length(); ++t) {
      out << csv::escape(s.id) << ',' << csv::format_double(s.times[t]) << ',' << csv::format_double(s.y[t]);
      for (Eigen::Index c = 0; c < s.covariates.cols(); ++c) out << ',' << csv::format_double(s.covariates(t, c));
      out << '\n';
    }
  }

  nlohmann::ordered_json meta;
  meta["format"] = "synthgp-dataset";
  meta["version"] = 1;
  meta["covariates"] = dataset.covariate_names;
  meta["alignment_rule"] = dataset.alignment_rule;
  meta["transforms"] = dataset.transforms;
  meta["dropped_rows"] = dataset.dropped_rows;
  meta["total_T"] = dataset.total_T();
  nlohmann::ordered_json series = nlohmann::ordered_json::array();
  for (const auto& s : dataset.series) {
    nlohmann::ordered_json entry;
    entry["id"] = s.id;
    entry["length"] = s.length();
    entry["treated"] = s.is_treated;
    if (s.t0) entry["t0"] = *s.t0;
    series.push_back(entry);
  }
  meta["series"] = series;
  std::ofstream mout(meta_path, std::ios::binary);
  if (!mout) throw Error("cannot write " + meta_path.string());
  mout << meta.dump(2) << '\n';
}

HeterotopicDataset load_exported(const std::filesystem::path& csv_path, const std::filesystem::path& meta_path) {
  std::ifstream min(meta_path);
  if (!min) throw DataError("cannot open dataset metadata " + meta_path.string());
  const auto meta = nlohmann::json::parse(min);
  CsvSchema schema;
  schema.covariates = meta.at("covariates").get<std::vector<std::string>>();
  IngestResult ingested = ingest_csv(csv_path, schema);
  HeterotopicDataset ds = std::move(ingested.dataset);
  ds.alignment_rule = meta.at("alignment_rule").get<std::string>();
  ds.transforms = meta.at("transforms").get<std::vector<std::string>>();
  ds.dropped_rows = meta.at("dropped_rows").get<int>();
  for (const auto& entry : meta.at("series")) {
    const int idx = ds.index_of(entry.at("id").get<std::string>());
    if (idx < 0) throw DataError("metadata names a series missing from the CSV");
    auto& s = ds.series[idx];
    s.is_treated = entry.at("treated").get<bool>();
    if (entry.contains("t0")) s.t0 = entry.at("t0").get<int>();
  }
  ds.validate();
  return ds;
}

}  // namespace synthgp
