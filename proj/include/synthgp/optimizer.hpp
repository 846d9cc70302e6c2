#pragma once

// Bound-constrained limited-memory BFGS (L-BFGS-B).
//
// Each iteration computes the generalized Cauchy point along the projected
// steepest-descent path, minimizes the quadratic model over the variables
// that are still free there, truncates that step to the box, and runs a
// strong-Wolfe line search along the resulting feasible direction. When the
// Wolfe search fails the step falls back to projected backtracking on the
// Armijo condition alone.

#include <Eigen/Dense>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace synthgp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// f(x), writing the gradient into grad. May return +inf or NaN to signal
// an infeasible trial point (treated as a failed step).
using Objective = std::function<double(const VectorXd& x, VectorXd& grad)>;

struct OptimizerConfig {
  int memory = 20;
  int max_iter = 500;
  double grad_tol = 1e-5;   // projected-gradient infinity norm
  double f_tol = 0.0;       // relative reduction stop; 0 disables
  VectorXd lower;           // empty = unbounded; entries may be -inf
  VectorXd upper;           // empty = unbounded; entries may be +inf
  int max_line_search = 40;
  std::optional<std::filesystem::path> trace_path;  // CSV iter,f,proj_grad
};

enum class OptimizerStatus { Converged, ConvergedTrivially, FunctionTolerance, MaxIterations, LineSearchFailed };

std::string to_string(OptimizerStatus status);

struct TraceEntry {
  int iteration = 0;
  double f = 0.0;
  double projected_grad = 0.0;
  double step = 0.0;
  double directional_derivative = 0.0;
  double f_previous = 0.0;
};

struct OptimizerResult {
  VectorXd x;
  double f = 0.0;
  VectorXd gradient;
  OptimizerStatus status = OptimizerStatus::MaxIterations;
  int iterations = 0;
  int evaluations = 0;
  double projected_grad = 0.0;
  std::vector<TraceEntry> trace;
  // Every point the objective was evaluated at (for bound audits).
  std::vector<VectorXd> evaluated;
};

// Limited-memory BFGS approximation B = theta I - W M W' built from the
// most recent correction pairs (compact representation).
class CompactLbfgs {
 public:
  explicit CompactLbfgs(int memory) : memory_(memory) {}

  // Stores (s, y) when s'y is safely positive; returns whether it was kept.
  bool update(const VectorXd& s, const VectorXd& y);
  void reset();

  [[nodiscard]] int pairs() const { return static_cast<int>(s_.size()); }
  [[nodiscard]] double theta() const { return theta_; }
  void set_theta(double theta) { theta_ = theta; }

  // Dense B for problem dimension n.
  [[nodiscard]] MatrixXd dense(Eigen::Index n) const;
  [[nodiscard]] const std::vector<VectorXd>& s_history() const { return s_; }
  [[nodiscard]] const std::vector<VectorXd>& y_history() const { return y_; }

 private:
  int memory_;
  double theta_ = 1.0;
  std::vector<VectorXd> s_;
  std::vector<VectorXd> y_;
};

// Projected gradient P(x - g) - x.
VectorXd projected_gradient(const VectorXd& x, const VectorXd& g, const VectorXd& lower, const VectorXd& upper);

OptimizerResult lbfgsb_minimize(const Objective& f, const VectorXd& x0, const OptimizerConfig& config);

}  // namespace synthgp
