// synthgp command-line tool: screen | compare | fit | infer | effect | report.

#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "synthgp/config.hpp"
#include "synthgp/errors.hpp"
#include "synthgp/pipeline.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitMissing = 4;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  int jobs = 1;
};

int run(const std::string& stage, const Options& opt) {
  try {
    synthgp::RunConfig config = synthgp::load_config(opt.config);
    if (opt.seed) config.seed = *opt.seed;
    if (opt.out) config.output_dir = *opt.out;
    if (opt.jobs < 1) throw synthgp::ConfigError("--jobs must be at least 1");
    config.jobs = opt.jobs;
    const synthgp::StageResult r = synthgp::run_stage(stage, config);
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
    for (const auto& a : r.artifacts) std::cout << (config.output_dir / a).string() << '\n';
    return 0;
  } catch (const synthgp::MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitMissing;
  } catch (const synthgp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const synthgp::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const synthgp::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian synthetic control with multi-output Gaussian processes"};
  app.set_version_flag("--version", std::string(SYNTHGP_VERSION));
  app.require_subcommand(1);

  Options opt;
  const struct {
    const char* name;
    const char* help;
  } stages[] = {
      {"screen", "ingest the panel and rank donors by DTW distance"},
      {"compare", "score every donor combination and model on the pre-intervention split"},
      {"fit", "fit the selected model on the full pre-intervention data"},
      {"infer", "sample the coregionalization loadings with HMC"},
      {"effect", "sample counterfactuals and compute causal effects"},
      {"report", "bundle the selection, fit, sampler, and effect summaries"},
  };
  std::string chosen;
  for (const auto& s : stages) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", opt.config, "run configuration (JSON)")->required();
    sub->add_option("--seed", opt.seed, "overrides the configured seed");
    sub->add_option("--out", opt.out, "output directory (overrides output.dir)");
    sub->add_option("--jobs", opt.jobs, "worker threads for the combination search")->capture_default_str();
    sub->callback([&chosen, name = std::string(s.name)] { chosen = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  return run(chosen, opt);
}
