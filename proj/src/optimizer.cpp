#include "synthgp/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "synthgp/csv.hpp"
#include "synthgp/errors.hpp"

namespace synthgp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kC1 = 1e-4;
constexpr double kC2 = 0.9;

VectorXd clamp_to(const VectorXd& x, const VectorXd& lower, const VectorXd& upper) {
  return x.cwiseMax(lower).cwiseMin(upper);
}

// Largest a >= 0 with lower <= x + a d <= upper.
double max_feasible_step(const VectorXd& x, const VectorXd& d, const VectorXd& lower, const VectorXd& upper) {
  double a = kInf;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (d(i) > 0.0 && std::isfinite(upper(i))) a = std::min(a, (upper(i) - x(i)) / d(i));
    if (d(i) < 0.0 && std::isfinite(lower(i))) a = std::min(a, (lower(i) - x(i)) / d(i));
  }
  return std::max(a, 0.0);
}

struct CauchyPoint {
  VectorXd x;
  std::vector<bool> fixed;
};

// Generalized Cauchy point: first local minimizer of the quadratic model
// m(z) = g'z + z'Bz/2 along the projected path x(t) = P(x - t g).
CauchyPoint cauchy_point(const VectorXd& x, const VectorXd& g, const VectorXd& lower, const VectorXd& upper,
                         const MatrixXd& b) {
  const Eigen::Index n = x.size();
  VectorXd t(n);
  VectorXd d = -g;
  CauchyPoint out;
  out.fixed.assign(static_cast<std::size_t>(n), false);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (g(i) < 0.0 && std::isfinite(upper(i))) {
      t(i) = (x(i) - upper(i)) / g(i);
    } else if (g(i) > 0.0 && std::isfinite(lower(i))) {
      t(i) = (x(i) - lower(i)) / g(i);
    } else {
      t(i) = kInf;
    }
    if (t(i) <= 0.0) {
      t(i) = 0.0;
      d(i) = 0.0;
      out.fixed[i] = true;
    }
  }
  std::vector<Eigen::Index> order;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (t(i) > 0.0 && std::isfinite(t(i))) order.push_back(i);
  }
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index c) { return t(a) < t(c); });

  VectorXd z = VectorXd::Zero(n);
  double t_prev = 0.0;
  std::size_t k = 0;
  while (d.squaredNorm() > 0.0) {
    const VectorXd bd = b * d;
    const double fp = g.dot(d) + z.dot(bd);
    const double fpp = d.dot(bd);
    if (fp >= 0.0) break;
    const double t_next = k < order.size() ? t(order[k]) : kInf;
    const double dt = t_next - t_prev;
    const double dt_min = fpp > 0.0 ? -fp / fpp : kInf;
    if (dt_min < dt) {
      z += dt_min * d;
      break;
    }
    if (!std::isfinite(t_next)) break;  // non-positive curvature with no bound ahead
    z += dt * d;
    t_prev = t_next;
    while (k < order.size() && t(order[k]) <= t_next) {
      const Eigen::Index i = order[k];
      z(i) = (d(i) > 0.0 ? upper(i) : lower(i)) - x(i);
      d(i) = 0.0;
      out.fixed[i] = true;
      ++k;
    }
  }
  out.x = clamp_to(x + z, lower, upper);
  return out;
}

// Minimizes the model over the free variables of the Cauchy point, then
// truncates the step so the result stays inside the box.
VectorXd subspace_minimum(const VectorXd& x, const VectorXd& g, const VectorXd& lower, const VectorXd& upper,
                          const MatrixXd& b, const CauchyPoint& cp) {
  std::vector<Eigen::Index> free;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (!cp.fixed[i]) free.push_back(i);
  }
  if (free.empty()) return cp.x;
  const auto nf = static_cast<Eigen::Index>(free.size());
  const VectorXd r = g + b * (cp.x - x);
  MatrixXd bff(nf, nf);
  VectorXd rf(nf);
  for (Eigen::Index a = 0; a < nf; ++a) {
    rf(a) = r(free[a]);
    for (Eigen::Index c = 0; c < nf; ++c) bff(a, c) = b(free[a], free[c]);
  }
  Eigen::LDLT<MatrixXd> ldlt(bff);
  if (ldlt.info() != Eigen::Success) return cp.x;
  const VectorXd du = ldlt.solve(-rf);
  if (!du.allFinite()) return cp.x;
  double alpha = 1.0;
  for (Eigen::Index a = 0; a < nf; ++a) {
    const Eigen::Index i = free[a];
    if (du(a) > 0.0 && std::isfinite(upper(i))) alpha = std::min(alpha, (upper(i) - cp.x(i)) / du(a));
    if (du(a) < 0.0 && std::isfinite(lower(i))) alpha = std::min(alpha, (lower(i) - cp.x(i)) / du(a));
  }
  alpha = std::max(alpha, 0.0);
  VectorXd out = cp.x;
  for (Eigen::Index a = 0; a < nf; ++a) out(free[a]) += alpha * du(a);
  return clamp_to(out, lower, upper);
}

struct Evaluator {
  const Objective& f;
  const VectorXd& lower;
  const VectorXd& upper;
  OptimizerResult& result;

  double operator()(const VectorXd& x, VectorXd& grad) const {
    grad.resize(x.size());
    ++result.evaluations;
    result.evaluated.push_back(x);
    double value = f(x, grad);
    if (!std::isfinite(value) || !grad.allFinite()) value = kInf;
    return value;
  }
};

struct LineSearchOutcome {
  bool ok = false;
  double step = 0.0;
  double f = 0.0;
  VectorXd x;
  VectorXd g;
};

double interpolate(double lo, double f_lo, double df_lo, double hi, double f_hi) {
  const double width = hi - lo;
  double a = lo + 0.5 * width;
  if (std::isfinite(f_hi)) {
    const double denom = 2.0 * (f_hi - f_lo - df_lo * width);
    if (denom > 0.0) a = lo - df_lo * width * width / denom;
  }
  const double lo_guard = lo + 0.1 * width;
  const double hi_guard = hi - 0.1 * width;
  if (width > 0.0) {
    a = std::clamp(a, lo_guard, hi_guard);
  } else {
    a = std::clamp(a, hi_guard, lo_guard);
  }
  return a;
}

// Strong-Wolfe search on phi(a) = f(x + a d), a in (0, a_max].
LineSearchOutcome wolfe_search(const Evaluator& eval, const VectorXd& x, double f0, const VectorXd& d, double dphi0,
                               double a_init, double a_max, int max_evals) {
  LineSearchOutcome best;
  auto point = [&](double a) { return clamp_to(x + a * d, eval.lower, eval.upper); };

  double a_prev = 0.0;
  double f_prev = f0;
  double dphi_prev = dphi0;
  double a = std::min(a_init, a_max);
  int evals = 0;

  auto zoom = [&](double lo, double f_lo, double dphi_lo, double hi, double f_hi) -> LineSearchOutcome {
    LineSearchOutcome out;
    while (evals < max_evals) {
      const double aj = interpolate(lo, f_lo, dphi_lo, hi, f_hi);
      VectorXd xj = point(aj);
      VectorXd gj;
      const double fj = eval(xj, gj);
      ++evals;
      if (!(fj <= f0 + kC1 * aj * dphi0) || fj >= f_lo) {
        hi = aj;
        f_hi = fj;
      } else {
        const double dphi = gj.dot(d);
        if (std::abs(dphi) <= -kC2 * dphi0) return {true, aj, fj, std::move(xj), std::move(gj)};
        if (dphi * (hi - lo) >= 0.0) {
          hi = lo;
          f_hi = f_lo;
        }
        lo = aj;
        f_lo = fj;
        dphi_lo = dphi;
        out = {false, aj, fj, std::move(xj), std::move(gj)};
      }
      if (std::abs(hi - lo) <= 1e-16 * std::max(1.0, std::abs(lo))) break;
    }
    // Keep the best sufficient-decrease point if curvature was never met.
    if (out.step > 0.0) out.ok = true;
    return out;
  };

  while (evals < max_evals) {
    VectorXd xa = point(a);
    VectorXd ga;
    const double fa = eval(xa, ga);
    ++evals;
    if (!(fa <= f0 + kC1 * a * dphi0) || (a_prev > 0.0 && fa >= f_prev)) {
      return zoom(a_prev, f_prev, dphi_prev, a, fa);
    }
    const double dphi = ga.dot(d);
    if (std::abs(dphi) <= -kC2 * dphi0) return {true, a, fa, std::move(xa), std::move(ga)};
    if (dphi >= 0.0) return zoom(a, fa, dphi, a_prev, f_prev);
    if (a >= a_max) return {true, a, fa, std::move(xa), std::move(ga)};  // sufficient decrease at the box edge
    a_prev = a;
    f_prev = fa;
    dphi_prev = dphi;
    best = {true, a, fa, std::move(xa), std::move(ga)};
    a = std::min(2.0 * a, a_max);
  }
  return best;
}

// Armijo-only backtracking along the feasible direction.
LineSearchOutcome backtrack(const Evaluator& eval, const VectorXd& x, double f0, const VectorXd& d, double dphi0,
                            double a_start) {
  double a = a_start;
  for (int k = 0; k < 60; ++k) {
    VectorXd xa = clamp_to(x + a * d, eval.lower, eval.upper);
    VectorXd ga;
    const double fa = eval(xa, ga);
    if (fa <= f0 + kC1 * a * dphi0) return {true, a, fa, std::move(xa), std::move(ga)};
    a *= 0.5;
  }
  return {};
}

void write_trace(const std::filesystem::path& path, const std::vector<TraceEntry>& trace) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write optimizer trace " + path.string());
  out << "iter,f,proj_grad\n";
  for (const auto& t : trace) {
    out << t.iteration << ',' << csv::format_double(t.f) << ',' << csv::format_double(t.projected_grad) << '\n';
  }
}

}  // namespace

std::string to_string(OptimizerStatus status) {
  switch (status) {
    case OptimizerStatus::Converged:
      return "converged";
    case OptimizerStatus::ConvergedTrivially:
      return "converged-trivially";
    case OptimizerStatus::FunctionTolerance:
      return "function-tolerance";
    case OptimizerStatus::MaxIterations:
      return "max-iterations";
    case OptimizerStatus::LineSearchFailed:
      return "line-search-failed";
  }
  return "?";
}

bool CompactLbfgs::update(const VectorXd& s, const VectorXd& y) {
  const double sy = s.dot(y);
  const double yy = y.squaredNorm();
  if (!(sy > std::numeric_limits<double>::epsilon() * yy) || !(yy > 0.0)) return false;
  s_.push_back(s);
  y_.push_back(y);
  if (static_cast<int>(s_.size()) > memory_) {
    s_.erase(s_.begin());
    y_.erase(y_.begin());
  }
  theta_ = yy / sy;
  return true;
}

void CompactLbfgs::reset() {
  s_.clear();
  y_.clear();
  theta_ = 1.0;
}

MatrixXd CompactLbfgs::dense(Eigen::Index n) const {
  MatrixXd b = theta_ * MatrixXd::Identity(n, n);
  const auto k = static_cast<Eigen::Index>(s_.size());
  if (k == 0) return b;
  MatrixXd s(n, k);
  MatrixXd y(n, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    s.col(j) = s_[j];
    y.col(j) = y_[j];
  }
  const MatrixXd sy = s.transpose() * y;
  MatrixXd middle = MatrixXd::Zero(2 * k, 2 * k);
  for (Eigen::Index j = 0; j < k; ++j) middle(j, j) = -sy(j, j);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      middle(k + i, j) = sy(i, j);  // L
      middle(j, k + i) = sy(i, j);  // L'
    }
  }
  middle.bottomRightCorner(k, k) = theta_ * s.transpose() * s;
  MatrixXd w(n, 2 * k);
  w.leftCols(k) = y;
  w.rightCols(k) = theta_ * s;
  const MatrixXd m_inv_wt = middle.fullPivLu().solve(w.transpose());
  b -= w * m_inv_wt;
  return 0.5 * (b + b.transpose());
}

VectorXd projected_gradient(const VectorXd& x, const VectorXd& g, const VectorXd& lower, const VectorXd& upper) {
  return clamp_to(x - g, lower, upper) - x;
}

OptimizerResult lbfgsb_minimize(const Objective& f, const VectorXd& x0, const OptimizerConfig& config) {
  if (config.memory < 1) throw ConfigError("optimizer memory must be at least 1");
  const Eigen::Index n = x0.size();
  const VectorXd lower = config.lower.size() ? config.lower : VectorXd::Constant(n, -kInf);
  const VectorXd upper = config.upper.size() ? config.upper : VectorXd::Constant(n, kInf);
  if (lower.size() != n || upper.size() != n) throw ConfigError("optimizer bounds have the wrong dimension");
  if ((lower.array() > upper.array()).any()) throw ConfigError("optimizer bounds have lower > upper");

  OptimizerResult result;
  if (n == 0) {
    result.x = x0;
    result.gradient = VectorXd();
    VectorXd g;
    result.f = f(x0, g);
    result.evaluations = 1;
    result.status = OptimizerStatus::ConvergedTrivially;
    return result;
  }
  if ((x0.array() < lower.array()).any() || (x0.array() > upper.array()).any()) {
    throw ConfigError("optimizer start point violates the bounds");
  }

  Evaluator eval{f, lower, upper, result};
  VectorXd x = x0;
  VectorXd g;
  double fx = eval(x, g);
  if (!std::isfinite(fx)) throw NumericalError("objective is not finite at the start point");

  CompactLbfgs memory(config.memory);
  result.status = OptimizerStatus::MaxIterations;
  int iter = 0;
  for (; iter < config.max_iter; ++iter) {
    const double pg = projected_gradient(x, g, lower, upper).lpNorm<Eigen::Infinity>();
    result.projected_grad = pg;
    if (pg < config.grad_tol) {
      result.status = OptimizerStatus::Converged;
      break;
    }

    const MatrixXd b = memory.dense(n);
    const CauchyPoint cp = cauchy_point(x, g, lower, upper, b);
    const VectorXd target = subspace_minimum(x, g, lower, upper, b, cp);
    VectorXd d = target - x;
    double dphi0 = g.dot(d);
    bool steepest = memory.pairs() == 0;
    if (!(dphi0 < 0.0)) {
      memory.reset();
      d = projected_gradient(x, g, lower, upper);
      dphi0 = g.dot(d);
      steepest = true;
      if (!(dphi0 < 0.0)) {
        result.status = OptimizerStatus::Converged;
        break;
      }
    }
    const double a_max = max_feasible_step(x, d, lower, upper);
    const double a_init = steepest ? std::min(1.0, 1.0 / d.norm()) : 1.0;

    LineSearchOutcome ls = wolfe_search(eval, x, fx, d, dphi0, a_init, a_max, config.max_line_search);
    if (!ls.ok) ls = backtrack(eval, x, fx, d, dphi0, std::min(a_init, a_max));
    if (!ls.ok) {
      if (!steepest) {
        // Retry once from a clean memory before giving up.
        memory.reset();
        --iter;
        if (result.evaluations > 50 * config.max_iter) {
          result.status = OptimizerStatus::LineSearchFailed;
          break;
        }
        continue;
      }
      result.status = OptimizerStatus::LineSearchFailed;
      break;
    }

    TraceEntry entry;
    entry.iteration = iter + 1;
    entry.f_previous = fx;
    entry.step = ls.step;
    entry.directional_derivative = dphi0;

    memory.update(ls.x - x, ls.g - g);
    const double f_prev = fx;
    x = std::move(ls.x);
    g = std::move(ls.g);
    fx = ls.f;
    entry.f = fx;
    entry.projected_grad = projected_gradient(x, g, lower, upper).lpNorm<Eigen::Infinity>();
    result.trace.push_back(entry);
    result.projected_grad = entry.projected_grad;

    if (entry.projected_grad < config.grad_tol) {
      result.status = OptimizerStatus::Converged;
      ++iter;
      break;
    }
    if (config.f_tol > 0.0 &&
        (f_prev - fx) <= config.f_tol * std::max({std::abs(f_prev), std::abs(fx), 1.0})) {
      result.status = OptimizerStatus::FunctionTolerance;
      ++iter;
      break;
    }
  }
  result.iterations = iter;
  result.x = x;
  result.f = fx;
  result.gradient = g;
  if (config.trace_path) write_trace(*config.trace_path, result.trace);
  return result;
}

}  // namespace synthgp
