#pragma once

// Covariance functions and their closure under sum and product.
//
// Inputs are row-major point sets: an (n x d) matrix holds n points of
// dimension d. Each kernel node reads the columns listed in its
// active_dims (all columns when empty). Hyperparameters are kept on their
// natural (positive) scale; the optimizer works on logs.

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace synthgp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class KernelKind { RbfArd, Matern, OrnsteinUhlenbeck, Linear, Sum, Product };

// Matérn smoothness restricted to the closed-form half-integers.
enum class MaternNu { Half, ThreeHalves, FiveHalves };

double nu_value(MaternNu nu);
MaternNu nu_from_value(double nu);  // throws ConfigError unless 0.5, 1.5, 2.5

class KernelSpec {
 public:
  // RBF with one lengthscale per input column (ARD) when ard is true, or a
  // single shared lengthscale otherwise.
  static KernelSpec rbf(double variance, std::vector<double> lengthscales, bool ard = true,
                        std::vector<int> active_dims = {});
  static KernelSpec matern(MaternNu nu, double variance, double lengthscale, std::vector<int> active_dims = {});
  // (variance / (2 drift)) * exp(-drift * r)
  static KernelSpec ornstein_uhlenbeck(double variance, double drift, std::vector<int> active_dims = {});
  static KernelSpec linear(double variance, std::vector<int> active_dims = {});
  static KernelSpec sum(std::vector<KernelSpec> children);
  static KernelSpec product(std::vector<KernelSpec> children);

  [[nodiscard]] KernelKind kind() const { return kind_; }
  [[nodiscard]] bool ard() const { return ard_; }
  [[nodiscard]] MaternNu nu() const { return nu_; }
  [[nodiscard]] const std::vector<int>& active_dims() const { return active_dims_; }
  [[nodiscard]] const std::vector<KernelSpec>& children() const { return children_; }
  [[nodiscard]] bool stationary() const;

  // Flattened hyperparameters, pre-order over the tree.
  [[nodiscard]] int num_params() const;
  [[nodiscard]] std::vector<double> params() const;
  void set_params(const std::vector<double>& values);
  [[nodiscard]] std::vector<std::string> param_names() const;

  // k(x_s, x_t) for two full input rows (active_dims applied here).
  [[nodiscard]] double eval(const Eigen::Ref<const VectorXd>& xs, const Eigen::Ref<const VectorXd>& xt) const;

  [[nodiscard]] MatrixXd gram(const Eigen::Ref<const MatrixXd>& xa, const Eigen::Ref<const MatrixXd>& xb) const;

  // Elementwise partial derivative of the gram with respect to flattened
  // hyperparameter `index` (natural scale).
  [[nodiscard]] MatrixXd gram_grad(const Eigen::Ref<const MatrixXd>& xa, const Eigen::Ref<const MatrixXd>& xb,
                                   int index) const;

  // Checks positivity and dimension consistency against an input width.
  void validate(Eigen::Index input_dims) const;

  [[nodiscard]] std::string describe() const;

 private:
  KernelKind kind_ = KernelKind::RbfArd;
  bool ard_ = true;
  MaternNu nu_ = MaternNu::Half;
  std::vector<double> params_;  // leaf hyperparameters, variance first
  std::vector<int> active_dims_;
  std::vector<KernelSpec> children_;

  [[nodiscard]] MatrixXd select(const Eigen::Ref<const MatrixXd>& x) const;
  [[nodiscard]] MatrixXd leaf_gram(const MatrixXd& a, const MatrixXd& b) const;
  [[nodiscard]] MatrixXd leaf_grad(const MatrixXd& a, const MatrixXd& b, int index) const;
};

// Closed-form base kernels, exposed for direct evaluation.
double rbf_ard_eval(const Eigen::Ref<const VectorXd>& xs, const Eigen::Ref<const VectorXd>& xt, double variance,
                    const Eigen::Ref<const VectorXd>& lengthscales);
double matern_eval(double distance, MaternNu nu, double variance, double lengthscale);
double ou_time_eval(double lag, double variance, double drift);

}  // namespace synthgp
