#include "synthgp/mogp_cov.hpp"

#include <algorithm>
#include <cmath>

#include "synthgp/errors.hpp"

namespace synthgp {

Eigen::Index Panel::total() const {
  Eigen::Index n = 0;
  for (const auto& s : inputs) n += s.rows();
  return n;
}

VectorXd Panel::stacked_y() const {
  VectorXd y(total());
  Eigen::Index offset = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (outputs[i].size() != inputs[i].rows()) throw DataError("panel outputs and inputs disagree in length");
    y.segment(offset, outputs[i].size()) = outputs[i];
    offset += outputs[i].size();
  }
  return y;
}

std::string to_string(InputSlice slice) {
  switch (slice) {
    case InputSlice::Time:
      return "time";
    case InputSlice::Covariates:
      return "covariates";
    case InputSlice::All:
      return "all";
  }
  return "all";
}

InputSlice slice_from_string(const std::string& name) {
  if (name == "time") return InputSlice::Time;
  if (name == "covariates") return InputSlice::Covariates;
  if (name == "all") return InputSlice::All;
  throw ConfigError("unknown input slice '" + name + "'");
}

MatrixXd stack_slice(const std::vector<SeriesInputs>& inputs, InputSlice slice) {
  Eigen::Index rows = 0;
  Eigen::Index cols = -1;
  Eigen::Index empty_cols = -1;  // width declared by series without rows
  for (const auto& s : inputs) {
    if (s.covariates.rows() != s.rows() && s.covariates.size() > 0) {
      throw DataError("series inputs: covariate rows differ from time length");
    }
    rows += s.rows();
    const Eigen::Index c = slice == InputSlice::Time ? 1
                           : slice == InputSlice::Covariates ? s.covariates.cols()
                                                             : 1 + s.covariates.cols();
    if (s.rows() == 0) {
      if (empty_cols < 0) empty_cols = c;
      continue;
    }
    if (cols >= 0 && c != cols) throw ConfigError("incompatible input slices across series");
    cols = c;
  }
  if (cols < 0) cols = empty_cols >= 0 ? empty_cols : (slice == InputSlice::Time ? 1 : 0);
  if (slice != InputSlice::Time && cols == 0) {
    for (const auto& s : inputs) {
      if (s.rows() > 0) throw ConfigError("input slice '" + to_string(slice) + "' is empty");
    }
  }
  MatrixXd out(rows, cols);
  Eigen::Index offset = 0;
  for (const auto& s : inputs) {
    const Eigen::Index n = s.rows();
    if (n == 0) continue;
    switch (slice) {
      case InputSlice::Time:
        out.block(offset, 0, n, 1) = s.time;
        break;
      case InputSlice::Covariates:
        out.block(offset, 0, n, cols) = s.covariates;
        break;
      case InputSlice::All:
        out.block(offset, 0, n, 1) = s.time;
        out.block(offset, 1, n, cols - 1) = s.covariates;
        break;
    }
    offset += n;
  }
  return out;
}

std::vector<int> block_owner(const std::vector<SeriesInputs>& inputs) {
  std::vector<int> owner;
  for (std::size_t i = 0; i < inputs.size(); ++i) owner.insert(owner.end(), inputs[i].rows(), static_cast<int>(i));
  return owner;
}

MatrixXd CoregionalizationMatrix::matrix() const {
  return loadings * loadings.transpose() + MatrixXd(nuggets.asDiagonal());
}

CoregionalizationMatrix CoregionalizationMatrix::identity(int m) {
  CoregionalizationMatrix b;
  b.loadings = VectorXd::Zero(m);
  b.nuggets = VectorXd::Ones(m);
  b.loadings_frozen = true;
  b.nuggets_frozen = true;
  return b;
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::TwoFactor:
      return "2FGP";
    case Variant::OneFactor:
      return "1FGP";
    case Variant::TwoRbf:
      return "2RBF";
    case Variant::Independent:
      return "INGP";
    case Variant::SingleOutput:
      return "SOGP";
  }
  return "?";
}

Variant variant_from_string(const std::string& tag) {
  if (tag == "2FGP") return Variant::TwoFactor;
  if (tag == "1FGP") return Variant::OneFactor;
  if (tag == "2RBF") return Variant::TwoRbf;
  if (tag == "INGP") return Variant::Independent;
  if (tag == "SOGP") return Variant::SingleOutput;
  throw ConfigError("unknown model variant '" + tag + "'");
}

void MogpStructure::validate(Eigen::Index covariate_dims) const {
  const int m = outputs();
  if (m < 1) throw ConfigError("structure needs at least one output");
  if (variant == Variant::SingleOutput && m != 1) throw ConfigError("SOGP structures have exactly one output");
  if (terms.empty()) throw ConfigError("structure has no latent terms");
  for (const auto& t : terms) {
    if (t.coregionalization.size() != m || t.coregionalization.nuggets.size() != m) {
      throw ConfigError("coregionalization size does not match the number of outputs");
    }
    if ((t.coregionalization.nuggets.array() < 0.0).any()) throw ConfigError("nuggets must be non-negative");
    const Eigen::Index width = t.slice == InputSlice::Time         ? 1
                               : t.slice == InputSlice::Covariates ? covariate_dims
                                                                   : 1 + covariate_dims;
    t.kernel.validate(width);
  }
  if ((noise.array() < 0.0).any()) throw ConfigError("noise variances must be non-negative");
}

namespace {

// Expands an m x m matrix onto the stacked row/column owners.
MatrixXd expand(const MatrixXd& b, const std::vector<int>& rows, const std::vector<int>& cols) {
  MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    for (std::size_t i = 0; i < rows.size(); ++i) out(i, j) = b(rows[i], cols[j]);
  }
  return out;
}

void check_series_count(const MogpStructure& s, const std::vector<SeriesInputs>& a,
                        const std::vector<SeriesInputs>& b) {
  if (static_cast<int>(a.size()) != s.outputs() || static_cast<int>(b.size()) != s.outputs()) {
    throw ConfigError("input sets must provide one entry per output series");
  }
}

}  // namespace

MatrixXd assemble_term(const MogpStructure& structure, int term, const std::vector<SeriesInputs>& a,
                       const std::vector<SeriesInputs>& b) {
  check_series_count(structure, a, b);
  const auto& t = structure.terms.at(term);
  const MatrixXd xa = stack_slice(a, t.slice);
  const MatrixXd xb = stack_slice(b, t.slice);
  const MatrixXd g = t.kernel.gram(xa, xb);
  return expand(t.coregionalization.matrix(), block_owner(a), block_owner(b)).cwiseProduct(g);
}

MatrixXd assemble_covariance(const MogpStructure& structure, const std::vector<SeriesInputs>& a,
                             const std::vector<SeriesInputs>& b) {
  check_series_count(structure, a, b);
  Eigen::Index na = 0;
  Eigen::Index nb = 0;
  for (const auto& s : a) na += s.rows();
  for (const auto& s : b) nb += s.rows();
  MatrixXd k = MatrixXd::Zero(na, nb);
  for (int q = 0; q < static_cast<int>(structure.terms.size()); ++q) k += assemble_term(structure, q, a, b);
  return k;
}

// ---------------------------------------------------------------------------

std::vector<Hyperparameter> parameter_table(const MogpStructure& structure) {
  std::vector<Hyperparameter> table;
  const int m = structure.outputs();
  for (int q = 0; q < static_cast<int>(structure.terms.size()); ++q) {
    const auto& t = structure.terms[q];
    const std::string prefix = "term" + std::to_string(q + 1) + ".";
    for (int j = 0; j < m; ++j) {
      Hyperparameter h;
      h.name = prefix + "loading[" + std::to_string(j) + "]";
      h.kind = ParamKind::Loading;
      h.term = q;
      h.index = j;
      h.value = t.coregionalization.loadings(j);
      h.free = !t.coregionalization.loadings_frozen;
      h.transform = Transform::Identity;
      // The first loading is kept non-negative to remove the sign symmetry.
      h.lower = j == 0 ? 0.0 : -std::numeric_limits<double>::infinity();
      table.push_back(h);
    }
    for (int j = 0; j < m; ++j) {
      Hyperparameter h;
      h.name = prefix + "nugget[" + std::to_string(j) + "]";
      h.kind = ParamKind::Nugget;
      h.term = q;
      h.index = j;
      h.value = t.coregionalization.nuggets(j);
      h.free = !t.coregionalization.nuggets_frozen;
      table.push_back(h);
    }
    const auto names = t.kernel.param_names();
    const auto values = t.kernel.params();
    for (int p = 0; p < static_cast<int>(values.size()); ++p) {
      Hyperparameter h;
      h.name = prefix + names[p];
      h.kind = ParamKind::Kernel;
      h.term = q;
      h.index = p;
      h.value = values[p];
      h.free = !t.kernel_frozen;
      table.push_back(h);
    }
  }
  for (int j = 0; j < m; ++j) {
    Hyperparameter h;
    h.name = "noise[" + std::to_string(j) + "]";
    h.kind = ParamKind::Noise;
    h.index = j;
    h.value = structure.noise(j);
    h.free = !structure.noise_frozen;
    h.lower = structure.noise_floor;
    table.push_back(h);
  }
  return table;
}

void apply_parameters(MogpStructure& structure, const std::vector<Hyperparameter>& table) {
  std::vector<std::vector<double>> kernel_values(structure.terms.size());
  for (std::size_t q = 0; q < structure.terms.size(); ++q) kernel_values[q] = structure.terms[q].kernel.params();
  for (const auto& h : table) {
    switch (h.kind) {
      case ParamKind::Loading:
        structure.terms.at(h.term).coregionalization.loadings(h.index) = h.value;
        break;
      case ParamKind::Nugget:
        structure.terms.at(h.term).coregionalization.nuggets(h.index) = h.value;
        break;
      case ParamKind::Kernel:
        kernel_values.at(h.term).at(h.index) = h.value;
        break;
      case ParamKind::Noise:
        structure.noise(h.index) = h.value;
        break;
    }
  }
  for (std::size_t q = 0; q < structure.terms.size(); ++q) structure.terms[q].kernel.set_params(kernel_values[q]);
}

int count_parameters(const MogpStructure& structure) {
  const auto table = parameter_table(structure);
  return static_cast<int>(std::count_if(table.begin(), table.end(), [](const Hyperparameter& h) { return h.free; }));
}

// ---------------------------------------------------------------------------

std::vector<double> default_lengthscales(const std::vector<SeriesInputs>& inputs, InputSlice slice) {
  const MatrixXd x = stack_slice(inputs, slice);
  std::vector<double> out;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    std::vector<double> d;
    d.reserve(static_cast<std::size_t>(x.rows() * (x.rows() - 1) / 2));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = i + 1; j < x.rows(); ++j) d.push_back(std::abs(x(i, c) - x(j, c)));
    }
    double med = 0.0;
    if (!d.empty()) {
      const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
      std::nth_element(d.begin(), mid, d.end());
      med = *mid;
    }
    out.push_back(med > 0.0 && std::isfinite(med) ? med : 1.0);
  }
  return out;
}

VariantDefaults defaults_for(const std::vector<SeriesInputs>& inputs, VariantDefaults base) {
  bool has_covariates = false;
  for (const auto& s : inputs) has_covariates = has_covariates || (s.rows() > 0 && s.covariates.cols() > 0);
  if (!base.time_lengthscale) base.time_lengthscale = default_lengthscales(inputs, InputSlice::Time).front();
  if (!base.covariate_lengthscales && has_covariates) {
    base.covariate_lengthscales = default_lengthscales(inputs, InputSlice::Covariates);
  }
  if (!base.all_lengthscales) base.all_lengthscales = default_lengthscales(inputs, InputSlice::All);
  return base;
}

MogpStructure build_variant(Variant variant, int m, int d, const VariantDefaults& defaults) {
  if (m < 1) throw ConfigError("build_variant: need at least one output");
  if (variant == Variant::SingleOutput && m != 1) throw ConfigError("build_variant: SOGP takes m = 1");
  if (d < 0) throw ConfigError("build_variant: negative covariate count");
  const bool needs_covariates =
      variant == Variant::TwoFactor || variant == Variant::TwoRbf || variant == Variant::Independent;
  if (needs_covariates && d < 1) throw ConfigError("build_variant: " + to_string(variant) + " needs covariates");

  auto pick = [](const std::optional<std::vector<double>>& v, std::size_t n) {
    std::vector<double> out = v ? *v : std::vector<double>(n, 1.0);
    if (out.size() != n) throw ConfigError("build_variant: lengthscale count does not match inputs");
    return out;
  };
  auto coreg = [&] {
    CoregionalizationMatrix b;
    b.loadings = VectorXd::Constant(m, defaults.loading);
    b.nuggets = VectorXd::Constant(m, defaults.nugget);
    return b;
  };
  const double time_l = defaults.time_lengthscale.value_or(1.0);

  MogpStructure s;
  s.variant = variant;
  s.noise = VectorXd::Constant(m, defaults.noise);
  s.noise_floor = defaults.noise_floor;
  switch (variant) {
    case Variant::TwoFactor:
    case Variant::Independent: {
      LatentTerm cov{coreg(), KernelSpec::rbf(defaults.variance, pick(defaults.covariate_lengthscales, d)),
                     InputSlice::Covariates};
      LatentTerm time{coreg(), KernelSpec::matern(defaults.time_nu, defaults.variance, time_l), InputSlice::Time};
      if (variant == Variant::Independent) {
        cov.coregionalization = CoregionalizationMatrix::identity(m);
        time.coregionalization = CoregionalizationMatrix::identity(m);
      }
      s.terms = {cov, time};
      break;
    }
    case Variant::TwoRbf: {
      LatentTerm cov{coreg(), KernelSpec::rbf(defaults.variance, pick(defaults.covariate_lengthscales, d)),
                     InputSlice::Covariates};
      LatentTerm time{coreg(), KernelSpec::rbf(defaults.variance, {time_l}, false), InputSlice::Time};
      s.terms = {cov, time};
      break;
    }
    case Variant::OneFactor: {
      const auto all = pick(defaults.all_lengthscales, static_cast<std::size_t>(d + 1));
      double mean_l = 0.0;
      for (double l : all) mean_l += l;
      mean_l /= static_cast<double>(all.size());
      KernelSpec k = KernelSpec::sum({KernelSpec::rbf(defaults.variance, all),
                                      KernelSpec::matern(defaults.time_nu, defaults.variance, mean_l)});
      s.terms = {LatentTerm{coreg(), k, InputSlice::All}};
      break;
    }
    case Variant::SingleOutput: {
      const auto all = pick(defaults.all_lengthscales, static_cast<std::size_t>(d + 1));
      double mean_l = 0.0;
      for (double l : all) mean_l += l;
      mean_l /= static_cast<double>(all.size());
      LatentTerm only{CoregionalizationMatrix::identity(1), KernelSpec::rbf(defaults.variance, {mean_l}, false),
                      InputSlice::All};
      s.terms = {only};
      break;
    }
  }
  return s;
}

}  // namespace synthgp
