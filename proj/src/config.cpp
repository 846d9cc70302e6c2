#include "synthgp/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "synthgp/csv.hpp"
#include "synthgp/errors.hpp"

namespace synthgp {

namespace {

using nlohmann::json;

class Section {
 public:
  Section(const json& doc, std::string name) : name_(std::move(name)) {
    if (doc.is_null()) {
      obj_ = json::object();
    } else if (!doc.is_object()) {
      throw ConfigError(name_ + ": expected an object");
    } else {
      obj_ = doc;
    }
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!obj_.contains(key) || obj_.at(key).is_null()) return fallback;
    try {
      return obj_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(field(key) + ": wrong type");
    }
  }

  json sub(const std::string& key) {
    seen_.insert(key);
    return obj_.contains(key) ? obj_.at(key) : json();
  }

  [[nodiscard]] bool has(const std::string& key) const { return obj_.contains(key) && !obj_.at(key).is_null(); }
  [[nodiscard]] std::string field(const std::string& key) const { return name_ + "." + key; }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()) + ": unknown field");
    }
  }

 private:
  json obj_;
  std::string name_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field + ": " + what);
}

}  // namespace

RunConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) throw ConfigError("config: top level must be an object");
  Section top(doc, "config");
  RunConfig c;

  {
    Section s(top.sub("data"), "data");
    require(s.has("path"), s.field("path"), "required");
    c.data.path = s.get<std::string>("path", "");
    if (c.data.path.is_relative()) c.data.path = base_dir / c.data.path;
    require(std::filesystem::exists(c.data.path), s.field("path"), "file not found: " + c.data.path.string());
    c.data.schema.series_column = s.get<std::string>("series_column", "series_id");
    c.data.schema.time_column = s.get<std::string>("time_column", "time");
    c.data.schema.outcome_column = s.get<std::string>("outcome_column", "y");
    c.data.schema.covariates = s.get<std::vector<std::string>>("covariates", {});
    const std::string fmt = s.get<std::string>("time_format", "numeric");
    require(fmt == "numeric" || fmt == "date", s.field("time_format"), "must be 'numeric' or 'date'");
    c.data.schema.time_format = fmt == "date" ? TimeFormat::Date : TimeFormat::Numeric;
    require(s.has("treated"), s.field("treated"), "required");
    c.data.treated = s.get<std::string>("treated", "");
    require(s.has("last_pre_time"), s.field("last_pre_time"), "required");
    const json lp = s.sub("last_pre_time");
    if (lp.is_number()) {
      c.data.last_pre = csv::format_double(lp.get<double>());
    } else if (lp.is_string()) {
      c.data.last_pre = lp.get<std::string>();
    } else {
      throw ConfigError(s.field("last_pre_time") + ": expected a number or a date string");
    }
    if (s.has("alignment")) {
      Section a(s.sub("alignment"), "data.alignment");
      c.data.align = a.get<bool>("enabled", true);
      c.data.threshold.level = a.get<double>("threshold", 0.0);
      c.data.threshold.inclusive = a.get<bool>("inclusive", false);
      c.data.period_days = a.get<double>("period_days", 7.0);
      require(c.data.period_days > 0.0, a.field("period_days"), "must be positive");
      a.finish();
      require(!c.data.align || c.data.schema.time_format == TimeFormat::Date, a.field("enabled"),
              "alignment needs time_format 'date'");
    }
    if (s.has("log_per_capita")) {
      Section l(s.sub("log_per_capita"), "data.log_per_capita");
      c.data.log_per_capita = l.get<bool>("enabled", true);
      c.data.population = l.get<std::map<std::string, double>>("population", {});
      c.data.per = l.get<double>("per", 1e6);
      c.data.log_floor = l.get<double>("floor", 0.5);
      require(c.data.per > 0.0, l.field("per"), "must be positive");
      require(c.data.log_floor >= 0.0, l.field("floor"), "must be non-negative");
      for (const auto& [id, pop] : c.data.population) require(pop > 0.0, l.field("population." + id), "must be positive");
      l.finish();
    }
    if (s.has("pca")) {
      Section p(s.sub("pca"), "data.pca");
      c.data.pca_columns = p.get<std::vector<std::string>>("columns", {});
      c.data.pca_name = p.get<std::string>("name", "pc1");
      require(c.data.pca_columns.size() >= 2, p.field("columns"), "needs at least two columns");
      p.finish();
    }
    c.data.standardize_covariates = s.get<bool>("standardize_covariates", true);
    s.finish();
  }

  {
    Section s(top.sub("screening"), "screening");
    c.screening.top_n = s.get<int>("top_n", 8);
    c.screening.candidates = s.get<std::vector<std::string>>("candidates", {});
    c.screening.donors = s.get<std::vector<std::string>>("donors", {});
    c.screening.choose = s.get<int>("choose", 4);
    c.screening.split_ratio = s.get<double>("split_ratio", 2.0 / 3.0);
    c.screening.es_samples = s.get<int>("es_samples", 1000);
    require(c.screening.top_n >= 1, s.field("top_n"), "must be at least 1");
    require(c.screening.choose >= 1, s.field("choose"), "must be at least 1");
    require(c.screening.split_ratio > 0.0 && c.screening.split_ratio < 1.0, s.field("split_ratio"),
            "must be in (0, 1)");
    require(c.screening.es_samples >= 1, s.field("es_samples"), "must be at least 1");
    s.finish();
  }

  {
    Section s(top.sub("models"), "models");
    c.models.tags = s.get<std::vector<std::string>>("tags", c.models.tags);
    require(!c.models.tags.empty(), s.field("tags"), "must not be empty");
    for (const auto& t : c.models.tags) {
      try {
        static_cast<void>(model_spec_from_tag(t));
      } catch (const ConfigError& e) {
        throw ConfigError(s.field("tags") + ": " + e.what());
      }
    }
    c.models.noise_floor = s.get<double>("noise_floor", 0.0);
    require(c.models.noise_floor >= 0.0, s.field("noise_floor"), "must be non-negative");
    c.models.standardize_outcomes = s.get<bool>("standardize_outcomes", true);
    if (s.has("initial")) {
      Section i(s.sub("initial"), "models.initial");
      c.models.defaults.loading = i.get<double>("loading", 1.0);
      c.models.defaults.nugget = i.get<double>("nugget", 0.5);
      c.models.defaults.variance = i.get<double>("variance", 1.0);
      c.models.defaults.noise = i.get<double>("noise", 0.1);
      require(c.models.defaults.nugget > 0.0, i.field("nugget"), "must be positive");
      require(c.models.defaults.variance > 0.0, i.field("variance"), "must be positive");
      require(c.models.defaults.noise > 0.0, i.field("noise"), "must be positive");
      i.finish();
    }
    c.models.defaults.noise_floor = c.models.noise_floor;
    c.models.defaults.noise = std::max(c.models.defaults.noise, c.models.noise_floor);
    s.finish();
  }

  {
    Section s(top.sub("optimizer"), "optimizer");
    c.fit.optimizer.memory = s.get<int>("memory", 20);
    c.fit.optimizer.max_iter = s.get<int>("max_iter", 500);
    c.fit.optimizer.grad_tol = s.get<double>("grad_tol", 1e-5);
    c.fit.optimizer.f_tol = s.get<double>("f_tol", 0.0);
    c.fit.restarts = s.get<int>("restarts", 3);
    c.fit.jitter_sd = s.get<double>("jitter_sd", 0.5);
    require(c.fit.optimizer.memory >= 1, s.field("memory"), "must be at least 1");
    require(c.fit.optimizer.max_iter >= 1, s.field("max_iter"), "must be at least 1");
    require(c.fit.optimizer.grad_tol > 0.0, s.field("grad_tol"), "must be positive");
    require(c.fit.restarts >= 1, s.field("restarts"), "must be at least 1");
    require(c.fit.jitter_sd >= 0.0, s.field("jitter_sd"), "must be non-negative");
    s.finish();
  }

  {
    Section s(top.sub("hmc"), "hmc");
    c.hmc.chain.step_size = s.get<double>("step_size", 0.01);
    c.hmc.chain.leapfrog_steps = s.get<int>("leapfrog_steps", 20);
    c.hmc.chain.samples = s.get<int>("samples", 5000);
    c.hmc.chain.burn_in = s.get<double>("burn_in", 0.2);
    c.hmc.sample_noise = s.get<bool>("sample_noise", true);
    const std::string mass = s.get<std::string>("mass", "identity");
    require(mass == "identity" || mass == "laplace", s.field("mass"), "must be 'identity' or 'laplace'");
    c.hmc.laplace_mass = mass == "laplace";
    if (s.has("prior")) {
      Section p(s.sub("prior"), "hmc.prior");
      c.hmc.priors.loading_mean = p.get<double>("loading_mean", 0.0);
      c.hmc.priors.loading_sd = p.get<double>("loading_sd", 10.0);
      c.hmc.priors.noise_shape = p.get<double>("noise_shape", 0.1);
      c.hmc.priors.noise_rate = p.get<double>("noise_rate", 1.0);
      p.finish();
    }
    try {
      c.hmc.chain.validate(0);
      c.hmc.priors.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("hmc: ") + e.what());
    }
    s.finish();
  }

  {
    Section s(top.sub("effects"), "effects");
    c.effects.level = s.get<double>("level", 0.95);
    c.effects.log_scale = s.get<bool>("log_scale", c.data.log_per_capita);
    c.effects.function_samples = s.get<int>("function_samples", 2000);
    c.effects.draws = s.get<int>("draws", 200);
    c.effects.trajectories_per_draw = s.get<int>("trajectories_per_draw", 10);
    c.effects.include_noise = s.get<bool>("include_noise", true);
    require(c.effects.level > 0.0 && c.effects.level < 1.0, s.field("level"), "must be in (0, 1)");
    require(c.effects.function_samples >= 2, s.field("function_samples"), "must be at least 2");
    require(c.effects.draws >= 1, s.field("draws"), "must be at least 1");
    require(c.effects.trajectories_per_draw >= 1, s.field("trajectories_per_draw"), "must be at least 1");
    s.finish();
  }

  {
    Section s(top.sub("output"), "output");
    c.output_dir = s.get<std::string>("dir", "out");
    if (c.output_dir.is_relative()) c.output_dir = base_dir / c.output_dir;
    s.finish();
  }

  const json seed = top.sub("seed");
  if (!seed.is_null()) {
    require(seed.is_number_unsigned() || (seed.is_number_integer() && seed.get<long long>() >= 0), "config.seed",
            "must be a non-negative integer");
    c.seed = seed.get<std::uint64_t>();
  }
  top.finish();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return parse_config(doc, std::filesystem::absolute(path).parent_path());
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  auto& d = j["data"];
  d["path"] = data.path.filename().string();
  d["series_column"] = data.schema.series_column;
  d["time_column"] = data.schema.time_column;
  d["outcome_column"] = data.schema.outcome_column;
  d["covariates"] = data.schema.covariates;
  d["time_format"] = data.schema.time_format == TimeFormat::Date ? "date" : "numeric";
  d["treated"] = data.treated;
  d["last_pre_time"] = data.last_pre;
  d["alignment"] = {{"enabled", data.align}, {"threshold", data.threshold.level},
                    {"inclusive", data.threshold.inclusive}, {"period_days", data.period_days}};
  d["log_per_capita"] = {{"enabled", data.log_per_capita}, {"population", data.population}, {"per", data.per},
                         {"floor", data.log_floor}};
  d["pca"] = {{"columns", data.pca_columns}, {"name", data.pca_name}};
  d["standardize_covariates"] = data.standardize_covariates;
  j["screening"] = {{"top_n", screening.top_n},           {"candidates", screening.candidates},
                    {"donors", screening.donors},         {"choose", screening.choose},
                    {"split_ratio", screening.split_ratio}, {"es_samples", screening.es_samples}};
  j["models"] = {{"tags", models.tags},
                 {"noise_floor", models.noise_floor},
                 {"standardize_outcomes", models.standardize_outcomes},
                 {"initial",
                  {{"loading", models.defaults.loading},
                   {"nugget", models.defaults.nugget},
                   {"variance", models.defaults.variance},
                   {"noise", models.defaults.noise}}}};
  j["optimizer"] = {{"memory", fit.optimizer.memory},     {"max_iter", fit.optimizer.max_iter},
                    {"grad_tol", fit.optimizer.grad_tol}, {"f_tol", fit.optimizer.f_tol},
                    {"restarts", fit.restarts},           {"jitter_sd", fit.jitter_sd}};
  j["hmc"] = {{"step_size", hmc.chain.step_size},
              {"leapfrog_steps", hmc.chain.leapfrog_steps},
              {"samples", hmc.chain.samples},
              {"burn_in", hmc.chain.burn_in},
              {"sample_noise", hmc.sample_noise},
              {"mass", hmc.laplace_mass ? "laplace" : "identity"},
              {"prior",
               {{"loading_mean", hmc.priors.loading_mean},
                {"loading_sd", hmc.priors.loading_sd},
                {"noise_shape", hmc.priors.noise_shape},
                {"noise_rate", hmc.priors.noise_rate}}}};
  j["effects"] = {{"level", effects.level},
                  {"log_scale", effects.log_scale},
                  {"function_samples", effects.function_samples},
                  {"draws", effects.draws},
                  {"trajectories_per_draw", effects.trajectories_per_draw},
                  {"include_noise", effects.include_noise}};
  j["seed"] = seed;
  return j;
}

std::string RunConfig::hash() const {
  const std::string text = to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace synthgp
