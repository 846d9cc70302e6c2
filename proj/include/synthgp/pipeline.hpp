#pragma once

// File-based stages of a run: screen, compare, fit, infer, effect, report.
// Every stage reads its upstream artifacts from the output directory and
// throws MissingArtifactError when one is absent.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "synthgp/config.hpp"
#include "synthgp/design.hpp"
#include "synthgp/gp_engine.hpp"

namespace synthgp {

struct StageResult {
  std::string stage;
  std::vector<std::string> artifacts;  // file names inside the output directory
  std::vector<std::string> warnings;
  double seconds = 0.0;
};

// Ingests the configured CSV and applies treatment, alignment, and
// transforms.
HeterotopicDataset prepare_dataset(const RunConfig& config, std::vector<std::string>& warnings);

StageResult run_screen(const RunConfig& config);
StageResult run_compare(const RunConfig& config);
StageResult run_fit(const RunConfig& config);
StageResult run_infer(const RunConfig& config);
StageResult run_effect(const RunConfig& config);
StageResult run_report(const RunConfig& config);

// Runs the named stage and records it in manifest.json.
StageResult run_stage(const std::string& stage, const RunConfig& config);

// Model persistence: variant, Matern smoothness, shape, and every
// hyperparameter by name.
nlohmann::ordered_json structure_to_json(const MogpStructure& structure, MaternNu time_nu, int covariate_dims);
MogpStructure structure_from_json(const nlohmann::json& doc);

// The fitted model and its design, rebuilt from fit.json and dataset.csv.
struct LoadedFit {
  ModelDesign design;
  MogpStructure structure;
  nlohmann::json record;
};
LoadedFit load_fit(const RunConfig& config);

// Reads a sample CSV written by the infer stage (skips '#' header lines).
MatrixXd read_sample_csv(const std::filesystem::path& path, std::vector<std::string>* names = nullptr);

}  // namespace synthgp
