#pragma once

// Linear model of coregionalization over heterotopic series.
//
// The covariance between point s of series i and point t of series j is
//   sum_q B_q[i, j] * k_q(x_{i,s}, x_{j,t}),   B_q = l_q l_q' + diag(kappa_q)
// where each latent term reads one slice of the inputs (time, covariates,
// or both). Series may have different lengths, so the matrix is assembled
// block-wise rather than as a literal Kronecker product.

#include <Eigen/Dense>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "synthgp/kernels.hpp"

namespace synthgp {

// Model inputs for one series: a time column plus a covariate matrix with
// the same number of rows. Either may be used by a latent term.
struct SeriesInputs {
  VectorXd time;
  MatrixXd covariates;  // rows == time.size()

  [[nodiscard]] Eigen::Index rows() const { return time.size(); }
};

// Training data: inputs and outcomes per series (series order defines the
// block order of every assembled matrix).
struct Panel {
  std::vector<SeriesInputs> inputs;
  std::vector<VectorXd> outputs;

  [[nodiscard]] int outputs_count() const { return static_cast<int>(inputs.size()); }
  [[nodiscard]] Eigen::Index total() const;
  [[nodiscard]] VectorXd stacked_y() const;
};

enum class InputSlice { Time, Covariates, All };

std::string to_string(InputSlice slice);
InputSlice slice_from_string(const std::string& name);

// Stacks the slice of every series vertically.
MatrixXd stack_slice(const std::vector<SeriesInputs>& inputs, InputSlice slice);

struct CoregionalizationMatrix {
  VectorXd loadings;  // lambda, length m
  VectorXd nuggets;   // kappa, length m, positive
  bool loadings_frozen = false;
  bool nuggets_frozen = false;

  [[nodiscard]] MatrixXd matrix() const;
  [[nodiscard]] int size() const { return static_cast<int>(loadings.size()); }

  static CoregionalizationMatrix identity(int m);
};

struct LatentTerm {
  CoregionalizationMatrix coregionalization;
  KernelSpec kernel;
  InputSlice slice = InputSlice::All;
  bool kernel_frozen = false;
};

enum class Variant { TwoFactor, OneFactor, TwoRbf, Independent, SingleOutput };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& tag);  // "2FGP", "1FGP", "2RBF", "INGP", "SOGP"

struct MogpStructure {
  Variant variant = Variant::TwoFactor;
  std::vector<LatentTerm> terms;
  VectorXd noise;  // omega^2 per series
  bool noise_frozen = false;
  double noise_floor = 0.0;  // lower bound on every omega^2 while optimizing

  [[nodiscard]] int outputs() const { return static_cast<int>(noise.size()); }
  void validate(Eigen::Index covariate_dims) const;
};

// Cross-covariance K(A, B) between two input sets over the same m series.
MatrixXd assemble_covariance(const MogpStructure& structure, const std::vector<SeriesInputs>& a,
                             const std::vector<SeriesInputs>& b);
inline MatrixXd assemble_covariance(const MogpStructure& structure, const std::vector<SeriesInputs>& inputs) {
  return assemble_covariance(structure, inputs, inputs);
}

// One term's contribution B_q (x) K_q, for inspection exports.
MatrixXd assemble_term(const MogpStructure& structure, int term, const std::vector<SeriesInputs>& a,
                       const std::vector<SeriesInputs>& b);

// Series index of each stacked row.
std::vector<int> block_owner(const std::vector<SeriesInputs>& inputs);

// ---------------------------------------------------------------------------
// Hyperparameter table

enum class ParamKind { Loading, Nugget, Kernel, Noise };
enum class Transform { Log, Identity };

struct Hyperparameter {
  std::string name;
  ParamKind kind = ParamKind::Kernel;
  int term = -1;   // latent term (Loading, Nugget, Kernel)
  int index = 0;   // series index, or flattened kernel index
  double value = 0.0;
  bool free = true;
  Transform transform = Transform::Log;
  double lower = 0.0;  // natural scale bounds used while optimizing
  double upper = std::numeric_limits<double>::infinity();
};

// Every hyperparameter in a fixed order: per term loadings, nuggets, kernel
// parameters; then noises. Frozen entries are included with free = false.
std::vector<Hyperparameter> parameter_table(const MogpStructure& structure);

// Writes back the values of a table produced by parameter_table.
void apply_parameters(MogpStructure& structure, const std::vector<Hyperparameter>& table);

// Number of free hyperparameters under the variant's freezing rules.
int count_parameters(const MogpStructure& structure);

// ---------------------------------------------------------------------------
// Variant constructors

struct VariantDefaults {
  double loading = 1.0;
  double nugget = 0.5;
  double variance = 1.0;
  double noise = 0.1;
  double noise_floor = 0.0;
  MaternNu time_nu = MaternNu::Half;
  // Initial lengthscales; when absent they are the median pairwise distance
  // of the relevant input dimension (see default_lengthscales).
  std::optional<std::vector<double>> covariate_lengthscales;
  std::optional<double> time_lengthscale;
  std::optional<std::vector<double>> all_lengthscales;  // time then covariates
};

// m outputs, d covariates (time excluded).
//  2FGP: B1 (x) RBF-ARD(covariates) + B2 (x) Matern(time)
//  1FGP: B1 (x) (RBF-ARD(all) + Matern(all))
//  2RBF: B1 (x) RBF-ARD(covariates) + B2 (x) RBF(time)
//  INGP: the 2FGP kernels with every B_q = I frozen
//  SOGP: m = 1, one isotropic RBF over all inputs, B = [1] frozen
MogpStructure build_variant(Variant variant, int m, int d, const VariantDefaults& defaults = {});

// Median pairwise distance per column of the stacked slice (1.0 for
// degenerate columns).
std::vector<double> default_lengthscales(const std::vector<SeriesInputs>& inputs, InputSlice slice);

// Fills the data-dependent defaults (lengthscales) for a panel.
VariantDefaults defaults_for(const std::vector<SeriesInputs>& inputs, VariantDefaults base = {});

}  // namespace synthgp
