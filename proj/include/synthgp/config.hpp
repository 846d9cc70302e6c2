#pragma once

// Run configuration: one JSON document with sections data, screening,
// models, optimizer, hmc, effects, output, and seed.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "synthgp/dataset.hpp"
#include "synthgp/evaluation.hpp"
#include "synthgp/fit.hpp"
#include "synthgp/hmc.hpp"
#include "synthgp/mogp_cov.hpp"

namespace synthgp {

struct DataConfig {
  std::filesystem::path path;
  CsvSchema schema;
  std::string treated;
  // Last pre-intervention time: a number, or an ISO date in date mode.
  std::string last_pre;
  bool align = false;
  ThresholdRule threshold;
  double period_days = 7.0;
  bool log_per_capita = false;
  std::map<std::string, double> population;
  double per = 1e6;
  double log_floor = 0.5;
  std::vector<std::string> pca_columns;
  std::string pca_name = "pc1";
  bool standardize_covariates = true;
};

struct ScreeningConfig {
  int top_n = 8;
  std::vector<std::string> candidates;  // empty = every untreated series
  std::vector<std::string> donors;      // explicit donor list skips screening output
  int choose = 4;
  double split_ratio = 2.0 / 3.0;
  int es_samples = 1000;
};

struct ModelsConfig {
  std::vector<std::string> tags = {"2FGP", "1FGP", "2RBF", "INGP", "SOGP"};
  double noise_floor = 0.0;
  bool standardize_outcomes = true;
  VariantDefaults defaults;
};

struct HmcSection {
  HmcConfig chain;
  PriorSpec priors;
  bool sample_noise = true;
  bool laplace_mass = false;  // "mass": "laplace" instead of the identity
};

struct EffectsConfig {
  double level = 0.95;
  bool log_scale = false;
  int function_samples = 2000;
  int draws = 200;  // posterior draws used per sampled tier
  int trajectories_per_draw = 10;
  bool include_noise = true;
};

struct RunConfig {
  DataConfig data;
  ScreeningConfig screening;
  ModelsConfig models;
  FitConfig fit;
  HmcSection hmc;
  EffectsConfig effects;
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;
  int jobs = 1;

  // Canonical JSON of every resolved value (defaults filled in).
  [[nodiscard]] nlohmann::ordered_json to_json() const;
  // FNV-1a over the canonical JSON text, as 16 hex digits.
  [[nodiscard]] std::string hash() const;
};

// Parses and validates; relative data paths resolve against the config's
// directory. Throws ConfigError naming the offending field.
RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);

}  // namespace synthgp
