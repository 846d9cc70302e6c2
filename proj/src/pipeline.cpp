#include "synthgp/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "synthgp/causal.hpp"
#include "synthgp/csv.hpp"
#include "synthgp/errors.hpp"
#include "synthgp/evaluation.hpp"
#include "synthgp/fit.hpp"
#include "synthgp/hmc.hpp"

namespace synthgp {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

// Stream indices for derive_seed, one per stochastic component.
constexpr std::uint64_t kSeedCompare = 1;
constexpr std::uint64_t kSeedFit = 2;
constexpr std::uint64_t kSeedLambdaChain = 3;
constexpr std::uint64_t kSeedNoiseChain = 4;
constexpr std::uint64_t kSeedEffect = 5;

fs::path out_path(const RunConfig& c, const std::string& name) { return c.output_dir / name; }

void need(const RunConfig& c, const std::string& name, const std::string& producer) {
  if (!fs::exists(out_path(c, name))) {
    throw MissingArtifactError("missing upstream artifact " + out_path(c, name).string() + "; run '" + producer +
                               "' first");
  }
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot open " + path.string());
  return json::parse(in);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void write_json(const fs::path& path, const ordered_json& doc) { write_text(path, doc.dump(2) + "\n"); }

std::string fmt(double v) { return csv::format_double(v); }

std::string band_name(double pct) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "q%04.1f", pct);
  return buf;
}

std::pair<std::string, std::string> band_names(double level) {
  return {band_name(50.0 * (1.0 - level)), band_name(100.0 - 50.0 * (1.0 - level))};
}

void write_matrix_csv(const fs::path& path, const MatrixXd& m) {
  std::ostringstream out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      out << fmt(m(r, c));
    }
    out << '\n';
  }
  write_text(path, out.str());
}

std::vector<std::string> read_donors_csv(const fs::path& path) {
  const csv::Table t = csv::read(path);
  const int c = t.column("series_id");
  if (c < 0) throw DataError("donor file lacks a series_id column");
  std::vector<std::string> ids;
  for (const auto& row : t.rows) ids.push_back(row.at(c));
  return ids;
}

HeterotopicDataset load_dataset(const RunConfig& c) {
  need(c, "dataset.csv", "screen");
  need(c, "dataset.meta.json", "screen");
  return load_exported(out_path(c, "dataset.csv"), out_path(c, "dataset.meta.json"));
}

double parse_last_pre(const RunConfig& c) {
  if (c.data.schema.time_format == TimeFormat::Date) {
    try {
      return day_number(parse_date(c.data.last_pre));
    } catch (const std::exception&) {
      throw ConfigError("data.last_pre_time: expected an ISO date in date mode");
    }
  }
  try {
    std::size_t used = 0;
    const double v = std::stod(c.data.last_pre, &used);
    if (used != c.data.last_pre.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("data.last_pre_time: expected a number");
  }
}

ModelDesign fit_design(const HeterotopicDataset& ds, const std::vector<std::string>& donors, Variant variant,
                       bool standardize) {
  const SeriesRecord& treated = ds.treated();
  return make_design(ds, donors, variant, *treated.t0, treated.length(), std::numeric_limits<double>::infinity(),
                     standardize);
}

ordered_json vec_json(const VectorXd& v) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

ordered_json matrix_json(const MatrixXd& m) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) a.push_back(vec_json(m.row(r).transpose()));
  return a;
}

void write_samples(const fs::path& path, const ordered_json& header, const std::vector<std::string>& names,
                   const MatrixXd& samples) {
  std::ostringstream out;
  out << "# " << header.dump() << '\n';
  out << "draw";
  for (const auto& n : names) out << ',' << csv::escape(n);
  out << '\n';
  for (Eigen::Index r = 0; r < samples.rows(); ++r) {
    out << r;
    for (Eigen::Index c = 0; c < samples.cols(); ++c) out << ',' << fmt(samples(r, c));
    out << '\n';
  }
  write_text(path, out.str());
}

ordered_json chain_diagnostics(const HmcResult& r, const std::vector<std::string>& names) {
  ordered_json d;
  d["samples"] = r.samples.rows();
  d["burn_in"] = r.burn_in;
  d["acceptance"] = r.acceptance;
  d["divergences"] = r.divergences;
  ordered_json ess;
  for (std::size_t i = 0; i < names.size(); ++i) ess[names[i]] = r.ess(static_cast<Eigen::Index>(i));
  d["ess"] = ess;
  d["warnings"] = r.warnings;
  return d;
}

MatrixXd thin_rows(const MatrixXd& samples, int draws) {
  const Eigen::Index n = samples.rows();
  const Eigen::Index k = std::min<Eigen::Index>(draws, n);
  MatrixXd out(k, samples.cols());
  for (Eigen::Index i = 0; i < k; ++i) out.row(i) = samples.row(i * n / k);
  return out;
}

void write_band_csvs(const RunConfig& c, const CausalReport& r, const ModelDesign& d, const MatrixXd& cf,
                     StageResult& result) {
  const auto [lo, hi] = band_names(r.level);
  const std::string tier = to_string(r.tier);
  {
    std::ostringstream out;
    out << "time,mean,sd,median," << lo << ',' << hi << '\n';
    for (std::size_t t = 0; t < r.times.size(); ++t) {
      const Summary& s = r.pointwise.per_time[t];
      out << fmt(r.times[t]) << ',' << fmt(s.mean) << ',' << fmt(std::sqrt(s.variance)) << ',' << fmt(s.median)
          << ',' << fmt(s.lower) << ',' << fmt(s.upper) << '\n';
    }
    write_text(out_path(c, "pointwise_" + tier + ".csv"), out.str());
    result.artifacts.push_back("pointwise_" + tier + ".csv");
  }
  {
    std::ostringstream out;
    out << "time,mean,sd,median," << lo << ',' << hi << '\n';
    for (std::size_t t = 0; t < r.times.size(); ++t) {
      const Summary s = summarize(r.cumulative_trajectory.col(static_cast<Eigen::Index>(t)), r.level);
      out << fmt(r.times[t]) << ',' << fmt(s.mean) << ',' << fmt(std::sqrt(s.variance)) << ',' << fmt(s.median)
          << ',' << fmt(s.lower) << ',' << fmt(s.upper) << '\n';
    }
    write_text(out_path(c, "cumulative_" + tier + ".csv"), out.str());
    result.artifacts.push_back("cumulative_" + tier + ".csv");
  }
  {
    std::ostringstream out;
    out << "time,series,mean,sd," << lo << ',' << hi << ",observed\n";
    for (Eigen::Index t = 0; t < cf.cols(); ++t) {
      const Summary s = summarize(cf.col(t), r.level);
      out << fmt(r.times[t]) << ',' << csv::escape(d.series_ids.front()) << ',' << fmt(s.mean) << ','
          << fmt(std::sqrt(s.variance)) << ',' << fmt(s.lower) << ',' << fmt(s.upper) << ',' << fmt(d.test_y(t))
          << '\n';
    }
    write_text(out_path(c, "counterfactual_" + tier + ".csv"), out.str());
    result.artifacts.push_back("counterfactual_" + tier + ".csv");
  }
}

}  // namespace

// ---------------------------------------------------------------------------

HeterotopicDataset prepare_dataset(const RunConfig& c, std::vector<std::string>& warnings) {
  IngestResult ingested = ingest_csv(c.data.path, c.data.schema);
  warnings.insert(warnings.end(), ingested.warnings.begin(), ingested.warnings.end());
  HeterotopicDataset ds = std::move(ingested.dataset);
  if (ds.index_of(c.data.treated) < 0) throw ConfigError("data.treated: series '" + c.data.treated + "' not found");
  assign_treatment(ds, c.data.treated, parse_last_pre(c));
  if (c.data.align) {
    const auto w = align_dataset(ds, c.data.threshold, c.data.period_days);
    warnings.insert(warnings.end(), w.begin(), w.end());
    if (ds.index_of(c.data.treated) < 0) throw DataError("the treated series never satisfies the threshold rule");
  }
  if (c.data.log_per_capita) {
    for (auto& s : ds.series) {
      const auto it = c.data.population.find(s.id);
      if (it == c.data.population.end()) {
        throw ConfigError("data.log_per_capita.population: no population for series '" + s.id + "'");
      }
      s.y = transform_log_per_capita(s.y, it->second, c.data.per, c.data.log_floor);
    }
    ds.transforms.push_back("log per capita (per " + fmt(c.data.per) + ", floor " + fmt(c.data.log_floor) + ")");
  }
  if (!c.data.pca_columns.empty()) {
    const auto w = apply_pca(ds, c.data.pca_columns, c.data.pca_name);
    warnings.insert(warnings.end(), w.begin(), w.end());
  }
  if (c.data.standardize_covariates) standardize_covariates(ds);
  ds.validate();
  return ds;
}

StageResult run_screen(const RunConfig& c) {
  StageResult r;
  r.stage = "screen";
  fs::create_directories(c.output_dir);
  const HeterotopicDataset ds = prepare_dataset(c, r.warnings);
  export_dataset(ds, out_path(c, "dataset.csv"), out_path(c, "dataset.meta.json"));
  r.artifacts = {"dataset.csv", "dataset.meta.json"};

  const ScreenResult screen = screen_donors(ds, c.screening.top_n, c.screening.candidates);
  r.warnings.insert(r.warnings.end(), screen.warnings.begin(), screen.warnings.end());
  std::ostringstream out;
  out << "rank,series_id,distance\n";
  for (std::size_t i = 0; i < screen.ranked.size(); ++i) {
    out << i + 1 << ',' << csv::escape(screen.ranked[i].id) << ',' << fmt(screen.ranked[i].distance) << '\n';
  }
  write_text(out_path(c, "donors.csv"), out.str());
  r.artifacts.push_back("donors.csv");
  return r;
}

StageResult run_compare(const RunConfig& c) {
  StageResult r;
  r.stage = "compare";
  const HeterotopicDataset ds = load_dataset(c);
  std::vector<std::string> donors = c.screening.donors;
  if (donors.empty()) {
    need(c, "donors.csv", "screen");
    donors = read_donors_csv(out_path(c, "donors.csv"));
  }
  std::vector<ModelSpec> models;
  for (const auto& tag : c.models.tags) models.push_back(model_spec_from_tag(tag));

  SearchConfig sc;
  sc.split_ratio = c.screening.split_ratio;
  sc.choose = std::min<int>(c.screening.choose, static_cast<int>(donors.size()));
  if (sc.choose < c.screening.choose) {
    r.warnings.push_back("fewer donors than screening.choose; using " + std::to_string(sc.choose));
  }
  sc.es_samples = c.screening.es_samples;
  sc.standardize_outcomes = c.models.standardize_outcomes;
  sc.defaults = c.models.defaults;
  sc.fit = c.fit;
  sc.jobs = c.jobs;
  sc.seed = derive_seed(c.seed, kSeedCompare);
  const std::vector<ScoreCard> cards = combination_search(ds, donors, models, sc);

  std::ostringstream out;
  out << "rank,model,donors,status,mse,log_score,energy_score,log_ml,free_parameters\n";
  for (std::size_t i = 0; i < cards.size(); ++i) {
    const auto& k = cards[i];
    std::string combo;
    for (std::size_t j = 0; j < k.donors.size(); ++j) combo += (j ? ";" : "") + k.donors[j];
    out << i + 1 << ',' << k.model << ',' << csv::escape(combo) << ',' << csv::escape(k.status) << ','
        << (k.ok ? fmt(k.mse) : "") << ',' << (k.ok ? fmt(k.log_score) : "") << ','
        << (k.ok ? fmt(k.energy_score) : "") << ',' << (k.ok ? fmt(k.log_ml) : "") << ',' << k.free_parameters
        << '\n';
  }
  write_text(out_path(c, "scorecards.csv"), out.str());
  r.artifacts.push_back("scorecards.csv");

  if (cards.empty() || !cards.front().ok) throw NumericalError("compare: every model fit failed");
  const ScoreCard& best = cards.front();
  ordered_json sel;
  sel["model"] = best.model;
  sel["donors"] = best.donors;
  sel["energy_score"] = best.energy_score;
  sel["mse"] = best.mse;
  sel["log_score"] = best.log_score;
  sel["fits"] = cards.size();
  sel["failed"] = std::count_if(cards.begin(), cards.end(), [](const ScoreCard& k) { return !k.ok; });
  write_json(out_path(c, "selection.json"), sel);
  r.artifacts.push_back("selection.json");
  return r;
}

ordered_json structure_to_json(const MogpStructure& s, MaternNu time_nu, int covariate_dims) {
  ordered_json j;
  j["variant"] = to_string(s.variant);
  j["time_nu"] = nu_value(time_nu);
  j["outputs"] = s.outputs();
  j["covariate_dims"] = covariate_dims;
  j["noise_floor"] = s.noise_floor;
  ordered_json params = ordered_json::array();
  for (const auto& h : parameter_table(s)) {
    params.push_back({{"name", h.name}, {"value", h.value}, {"free", h.free}});
  }
  j["parameters"] = params;
  return j;
}

MogpStructure structure_from_json(const json& doc) {
  VariantDefaults defaults;
  defaults.time_nu = nu_from_value(doc.at("time_nu").get<double>());
  defaults.noise_floor = doc.at("noise_floor").get<double>();
  MogpStructure s = build_variant(variant_from_string(doc.at("variant").get<std::string>()),
                                  doc.at("outputs").get<int>(), doc.at("covariate_dims").get<int>(), defaults);
  auto table = parameter_table(s);
  const auto& params = doc.at("parameters");
  if (params.size() != table.size()) throw DataError("fit record does not match the model structure");
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (params[i].at("name").get<std::string>() != table[i].name) {
      throw DataError("fit record parameter order does not match the model structure");
    }
    table[i].value = params[i].at("value").get<double>();
  }
  apply_parameters(s, table);
  return s;
}

StageResult run_fit(const RunConfig& c) {
  StageResult r;
  r.stage = "fit";
  need(c, "selection.json", "compare");
  const HeterotopicDataset ds = load_dataset(c);
  const json sel = read_json(out_path(c, "selection.json"));
  const ModelSpec spec = model_spec_from_tag(sel.at("model").get<std::string>());
  const auto donors = sel.at("donors").get<std::vector<std::string>>();
  const ModelDesign design = fit_design(ds, donors, spec.variant, c.models.standardize_outcomes);

  VariantDefaults defaults = c.models.defaults;
  defaults.time_nu = spec.time_nu;
  defaults = defaults_for(design.train.inputs, defaults);
  const MogpStructure initial =
      build_variant(spec.variant, design.train.outputs_count(), design.covariate_dims, defaults);
  FitConfig fc = c.fit;
  fc.seed = derive_seed(c.seed, kSeedFit);
  fc.optimizer.trace_path = out_path(c, "optimizer_trace.csv");
  const FitResult fit = fit_ml2(initial, design.train, fc);
  r.artifacts.push_back("optimizer_trace.csv");
  if (fit.best.status == OptimizerStatus::LineSearchFailed || fit.best.status == OptimizerStatus::MaxIterations) {
    r.warnings.push_back("optimizer stopped with status " + to_string(fit.best.status));
  }
  for (const auto& h : parameter_table(fit.structure)) {
    if (h.kind == ParamKind::Noise && h.value < c.models.noise_floor) {
      throw NumericalError("fitted noise below the configured floor");
    }
  }

  ordered_json rec;
  rec["model"] = spec.tag;
  rec["treated"] = design.series_ids.front();
  rec["donors"] = donors;
  rec["series"] = design.series_ids;
  rec["standardize_outcomes"] = c.models.standardize_outcomes;
  rec["center"] = design.center;
  rec["scale"] = design.scale;
  rec["train_rows"] = design.train.total();
  rec["horizon"] = design.test_y.size();
  rec["log_ml"] = fit.log_ml;
  rec["initial_log_ml"] = fit.initial_log_ml;
  rec["status"] = to_string(fit.best.status);
  rec["iterations"] = fit.best.iterations;
  rec["best_restart"] = fit.best_restart;
  rec["jitter"] = fit.model->jitter();
  rec["free_parameters"] = count_parameters(fit.structure);
  rec["structure"] = structure_to_json(fit.structure, spec.time_nu, design.covariate_dims);
  ordered_json coreg = ordered_json::array();
  for (const auto& t : fit.structure.terms) coreg.push_back(matrix_json(t.coregionalization.matrix()));
  rec["coregionalization"] = coreg;
  write_json(out_path(c, "fit.json"), rec);
  r.artifacts.push_back("fit.json");

  write_matrix_csv(out_path(c, "kernel_matrix.csv"), assemble_covariance(fit.structure, design.train.inputs));
  r.artifacts.push_back("kernel_matrix.csv");
  for (int q = 0; q < static_cast<int>(fit.structure.terms.size()); ++q) {
    const std::string name = "kernel_term" + std::to_string(q + 1) + ".csv";
    write_matrix_csv(out_path(c, name), assemble_term(fit.structure, q, design.train.inputs, design.train.inputs));
    r.artifacts.push_back(name);
  }
  return r;
}

LoadedFit load_fit(const RunConfig& c) {
  need(c, "fit.json", "fit");
  const HeterotopicDataset ds = load_dataset(c);
  LoadedFit f;
  f.record = read_json(out_path(c, "fit.json"));
  const ModelSpec spec = model_spec_from_tag(f.record.at("model").get<std::string>());
  f.design = fit_design(ds, f.record.at("donors").get<std::vector<std::string>>(), spec.variant,
                        f.record.at("standardize_outcomes").get<bool>());
  f.structure = structure_from_json(f.record.at("structure"));
  return f;
}

StageResult run_infer(const RunConfig& c) {
  StageResult r;
  r.stage = "infer";
  const LoadedFit f = load_fit(c);
  ordered_json diag;
  diag["step_size"] = c.hmc.chain.step_size;
  diag["leapfrog_steps"] = c.hmc.chain.leapfrog_steps;
  diag["samples"] = c.hmc.chain.samples;
  diag["burn_in_fraction"] = c.hmc.chain.burn_in;
  diag["mass"] = c.hmc.laplace_mass ? "laplace" : "identity";
  diag["prior"] = {{"loading_mean", c.hmc.priors.loading_mean},
                   {"loading_sd", c.hmc.priors.loading_sd},
                   {"noise_shape", c.hmc.priors.noise_shape},
                   {"noise_rate", c.hmc.priors.noise_rate}};

  auto run_chain = [&](bool sample_noise, std::uint64_t stream, const std::string& file, const std::string& key) {
    const LoadingsPosterior post(f.structure, f.design.train, c.hmc.priors, sample_noise);
    HmcConfig hc = c.hmc.chain;
    hc.seed = derive_seed(c.seed, stream);
    if (c.hmc.laplace_mass) hc.mass = laplace_mass(post.density(), post.initial());
    const HmcResult res = hmc_sample(post.density(), post.initial(), hc);
    const auto names = post.coordinate_names();
    MatrixXd out = res.samples;
    if (sample_noise) {
      // Noise coordinates are stored on the natural scale.
      const Eigen::Index k = out.cols() - f.structure.outputs();
      out.rightCols(out.cols() - k) = out.rightCols(out.cols() - k).array().exp().matrix();
    }
    ordered_json header;
    header["model"] = f.record.at("model");
    header["sample_noise"] = sample_noise;
    header["step_size"] = hc.step_size;
    header["leapfrog_steps"] = hc.leapfrog_steps;
    header["burn_in"] = res.burn_in;
    header["seed"] = hc.seed;
    header["fixed"] = f.record.at("structure");
    write_samples(out_path(c, file), header, names, out);
    r.artifacts.push_back(file);
    diag[key] = chain_diagnostics(res, names);
    for (const auto& w : res.warnings) r.warnings.push_back(key + ": " + w);
  };

  bool has_loadings = false;
  for (const auto& t : f.structure.terms) has_loadings = has_loadings || !t.coregionalization.loadings_frozen;
  if (has_loadings) {
    run_chain(false, kSeedLambdaChain, "lambda_samples.csv", "lambda");
  } else {
    r.warnings.push_back("model has no free loadings; the lambda chain was skipped");
    diag["lambda"] = nullptr;
  }
  if (c.hmc.sample_noise) {
    run_chain(true, kSeedNoiseChain, "lambda_noise_samples.csv", "lambda_noise");
  } else {
    diag["lambda_noise"] = nullptr;
  }
  write_json(out_path(c, "hmc_diagnostics.json"), diag);
  r.artifacts.push_back("hmc_diagnostics.json");
  return r;
}

MatrixXd read_sample_csv(const fs::path& path, std::vector<std::string>* names) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot open " + path.string());
  std::stringstream body;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#') continue;
    body << line << '\n';
  }
  const csv::Table t = csv::parse(body);
  if (t.header.empty() || t.header[0] != "draw") throw DataError("sample file lacks a draw column: " + path.string());
  const auto cols = static_cast<Eigen::Index>(t.header.size() - 1);
  if (names) names->assign(t.header.begin() + 1, t.header.end());
  MatrixXd m(static_cast<Eigen::Index>(t.rows.size()), cols);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    if (static_cast<Eigen::Index>(t.rows[r].size()) != cols + 1) throw DataError("ragged sample file " + path.string());
    for (Eigen::Index c = 0; c < cols; ++c) m(static_cast<Eigen::Index>(r), c) = std::stod(t.rows[r][c + 1]);
  }
  return m;
}

StageResult run_effect(const RunConfig& c) {
  StageResult r;
  r.stage = "effect";
  need(c, "hmc_diagnostics.json", "infer");
  const LoadedFit f = load_fit(c);
  const json diag = read_json(out_path(c, "hmc_diagnostics.json"));
  const ModelDesign& d = f.design;
  if (d.test_y.size() == 0) throw DataError("effect: the treated series has no post-intervention rows");

  ordered_json report;
  report["treated"] = d.series_ids.front();
  report["donors"] = f.record.at("donors");
  report["model"] = f.record.at("model");
  report["horizon"] = d.test_y.size();
  report["include_noise"] = c.effects.include_noise;
  report["log_scale"] = c.effects.log_scale;
  ordered_json tiers;

  auto finish_tier = [&](UncertaintyTier tier, const MatrixXd& model_paths, int used, int skipped) {
    const MatrixXd cf = d.to_outcome_scale(model_paths);
    if (cf.rows() < 2) throw NumericalError("effect: too few counterfactual trajectories for tier " + to_string(tier));
    const CausalReport rep = build_report(d.test_y, cf, d.test_times, tier, c.effects.level, c.effects.log_scale);
    ordered_json j = report_json(rep);
    j["draws_used"] = used;
    j["draws_skipped"] = skipped;
    tiers[to_string(tier)] = j;
    write_band_csvs(c, rep, d, cf, r);
  };

  {
    const FittedGp model(f.structure, d.train);
    const PredictiveDistribution dist = posterior_predictive(model, d.test, c.effects.include_noise);
    const MatrixXd paths = sample_predictive(dist, c.effects.function_samples, derive_seed(c.seed, kSeedEffect));
    finish_tier(UncertaintyTier::FunctionOnly, paths, 1, 0);
  }
  auto sampled_tier = [&](UncertaintyTier tier, const std::string& file, bool noise, std::uint64_t stream) {
    need(c, file, "infer");
    MatrixXd samples = read_sample_csv(out_path(c, file));
    const LoadingsPosterior post(f.structure, d.train, c.hmc.priors, noise);
    if (samples.cols() != post.dim()) throw DataError("effect: " + file + " does not match the fitted model");
    if (noise) {
      const Eigen::Index m = f.structure.outputs();
      samples.rightCols(m) = samples.rightCols(m).array().log().matrix();
    }
    const MatrixXd draws = thin_rows(samples, c.effects.draws);
    const CounterfactualSamples cs = counterfactual_posterior(post, draws, d.test, c.effects.trajectories_per_draw,
                                                              derive_seed(c.seed, kSeedEffect + stream),
                                                              c.effects.include_noise);
    if (cs.skipped > 0) r.warnings.push_back(to_string(tier) + ": " + std::to_string(cs.skipped) + " draws skipped");
    finish_tier(tier, cs.paths, cs.used, cs.skipped);
  };
  if (!diag.at("lambda").is_null()) sampled_tier(UncertaintyTier::Loadings, "lambda_samples.csv", false, 1);
  if (!diag.at("lambda_noise").is_null()) {
    sampled_tier(UncertaintyTier::LoadingsNoise, "lambda_noise_samples.csv", true, 2);
  }
  report["tiers"] = tiers;
  write_json(out_path(c, "effect_report.json"), report);
  r.artifacts.push_back("effect_report.json");
  return r;
}

StageResult run_report(const RunConfig& c) {
  StageResult r;
  r.stage = "report";
  need(c, "effect_report.json", "effect");
  need(c, "selection.json", "compare");
  need(c, "fit.json", "fit");
  need(c, "hmc_diagnostics.json", "infer");
  ordered_json j;
  j["version"] = SYNTHGP_VERSION;
  j["config_hash"] = c.hash();
  j["selection"] = read_json(out_path(c, "selection.json"));
  const json fit = read_json(out_path(c, "fit.json"));
  j["fit"] = {{"model", fit.at("model")},       {"log_ml", fit.at("log_ml")}, {"status", fit.at("status")},
              {"free_parameters", fit.at("free_parameters")}, {"coregionalization", fit.at("coregionalization")}};
  j["hmc"] = read_json(out_path(c, "hmc_diagnostics.json"));
  const json effect = read_json(out_path(c, "effect_report.json"));
  ordered_json tiers;
  for (auto it = effect.at("tiers").begin(); it != effect.at("tiers").end(); ++it) {
    ordered_json t;
    t["average"] = it.value().at("average");
    t["cumulative"] = it.value().at("cumulative");
    if (it.value().contains("multiplicative")) t["multiplicative_average"] = it.value().at("multiplicative").at("average");
    tiers[it.key()] = t;
  }
  j["effects"] = tiers;
  write_json(out_path(c, "report.json"), j);
  r.artifacts.push_back("report.json");
  return r;
}

StageResult run_stage(const std::string& stage, const RunConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  StageResult r;
  if (stage == "screen") {
    r = run_screen(config);
  } else if (stage == "compare") {
    r = run_compare(config);
  } else if (stage == "fit") {
    r = run_fit(config);
  } else if (stage == "infer") {
    r = run_infer(config);
  } else if (stage == "effect") {
    r = run_effect(config);
  } else if (stage == "report") {
    r = run_report(config);
  } else {
    throw ConfigError("unknown stage '" + stage + "'");
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const fs::path manifest_path = out_path(config, "manifest.json");
  ordered_json manifest;
  if (fs::exists(manifest_path)) {
    try {
      std::ifstream in(manifest_path);
      manifest = ordered_json::parse(in);
      if (manifest.value("config_hash", "") != config.hash()) manifest = ordered_json();
    } catch (const std::exception&) {
      manifest = ordered_json();
    }
  }
  manifest["version"] = SYNTHGP_VERSION;
  manifest["config_hash"] = config.hash();
  manifest["seed"] = config.seed;
  auto& stages = manifest["stages"];
  stages[stage] = {{"status", "ok"}, {"artifacts", r.artifacts}, {"warnings", r.warnings}};
  manifest["timings"][stage] = r.seconds;
  write_json(manifest_path, manifest);
  return r;
}

}  // namespace synthgp
