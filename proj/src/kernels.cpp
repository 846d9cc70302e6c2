#include "synthgp/kernels.hpp"

#include <cmath>
#include <sstream>

#include "synthgp/errors.hpp"

namespace synthgp {

namespace {

const double kSqrt3 = std::sqrt(3.0);
const double kSqrt5 = std::sqrt(5.0);

// Squared Euclidean distances between rows, optionally scaled per column.
MatrixXd squared_distances(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd d(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      double acc = 0.0;
      for (Eigen::Index c = 0; c < a.cols(); ++c) {
        const double diff = a(i, c) - b(j, c);
        acc += diff * diff;
      }
      d(i, j) = acc;
    }
  }
  return d;
}

double matern_shape(double scaled, MaternNu nu) {
  // k / variance as a function of a = sqrt(2 nu) r / l
  switch (nu) {
    case MaternNu::Half:
      return std::exp(-scaled);
    case MaternNu::ThreeHalves:
      return (1.0 + scaled) * std::exp(-scaled);
    case MaternNu::FiveHalves:
      return (1.0 + scaled + scaled * scaled / 3.0) * std::exp(-scaled);
  }
  return 0.0;
}

double matern_scale(MaternNu nu) {
  switch (nu) {
    case MaternNu::Half:
      return 1.0;
    case MaternNu::ThreeHalves:
      return kSqrt3;
    case MaternNu::FiveHalves:
      return kSqrt5;
  }
  return 1.0;
}

// d(k / variance) / d(lengthscale), given a and l.
double matern_dl(double scaled, double lengthscale, MaternNu nu) {
  const double e = std::exp(-scaled);
  switch (nu) {
    case MaternNu::Half:
      return scaled * e / lengthscale;
    case MaternNu::ThreeHalves:
      return scaled * scaled * e / lengthscale;
    case MaternNu::FiveHalves:
      return scaled * scaled * (1.0 + scaled) * e / (3.0 * lengthscale);
  }
  return 0.0;
}

}  // namespace

double nu_value(MaternNu nu) {
  switch (nu) {
    case MaternNu::Half:
      return 0.5;
    case MaternNu::ThreeHalves:
      return 1.5;
    case MaternNu::FiveHalves:
      return 2.5;
  }
  return 0.0;
}

MaternNu nu_from_value(double nu) {
  if (nu == 0.5) return MaternNu::Half;
  if (nu == 1.5) return MaternNu::ThreeHalves;
  if (nu == 2.5) return MaternNu::FiveHalves;
  throw ConfigError("unsupported Matern smoothness " + std::to_string(nu) + " (use 0.5, 1.5 or 2.5)");
}

double rbf_ard_eval(const Eigen::Ref<const VectorXd>& xs, const Eigen::Ref<const VectorXd>& xt, double variance,
                    const Eigen::Ref<const VectorXd>& lengthscales) {
  if (xs.size() != xt.size() || xs.size() != lengthscales.size()) {
    throw ConfigError("rbf_ard_eval: dimension mismatch");
  }
  const double q = ((xs - xt).array() / lengthscales.array()).square().sum();
  return variance * std::exp(-0.5 * q);
}

double matern_eval(double distance, MaternNu nu, double variance, double lengthscale) {
  if (!(lengthscale > 0.0)) throw ConfigError("matern_eval: lengthscale must be positive");
  return variance * matern_shape(matern_scale(nu) * std::abs(distance) / lengthscale, nu);
}

double ou_time_eval(double lag, double variance, double drift) {
  if (!(drift > 0.0)) throw ConfigError("ou_time_eval: drift must be positive");
  return variance / (2.0 * drift) * std::exp(-drift * std::abs(lag));
}

// ---------------------------------------------------------------------------

KernelSpec KernelSpec::rbf(double variance, std::vector<double> lengthscales, bool ard, std::vector<int> active_dims) {
  if (lengthscales.empty()) throw ConfigError("rbf kernel needs at least one lengthscale");
  if (!ard && lengthscales.size() != 1) throw ConfigError("non-ARD rbf kernel takes exactly one lengthscale");
  KernelSpec k;
  k.kind_ = KernelKind::RbfArd;
  k.ard_ = ard;
  k.params_.push_back(variance);
  k.params_.insert(k.params_.end(), lengthscales.begin(), lengthscales.end());
  k.active_dims_ = std::move(active_dims);
  return k;
}

KernelSpec KernelSpec::matern(MaternNu nu, double variance, double lengthscale, std::vector<int> active_dims) {
  KernelSpec k;
  k.kind_ = KernelKind::Matern;
  k.nu_ = nu;
  k.params_ = {variance, lengthscale};
  k.active_dims_ = std::move(active_dims);
  return k;
}

KernelSpec KernelSpec::ornstein_uhlenbeck(double variance, double drift, std::vector<int> active_dims) {
  KernelSpec k;
  k.kind_ = KernelKind::OrnsteinUhlenbeck;
  k.params_ = {variance, drift};
  k.active_dims_ = std::move(active_dims);
  return k;
}

KernelSpec KernelSpec::linear(double variance, std::vector<int> active_dims) {
  KernelSpec k;
  k.kind_ = KernelKind::Linear;
  k.params_ = {variance};
  k.active_dims_ = std::move(active_dims);
  return k;
}

KernelSpec KernelSpec::sum(std::vector<KernelSpec> children) {
  if (children.size() < 2) throw ConfigError("sum kernel needs at least two children");
  KernelSpec k;
  k.kind_ = KernelKind::Sum;
  k.children_ = std::move(children);
  return k;
}

KernelSpec KernelSpec::product(std::vector<KernelSpec> children) {
  if (children.size() < 2) throw ConfigError("product kernel needs at least two children");
  KernelSpec k;
  k.kind_ = KernelKind::Product;
  k.children_ = std::move(children);
  return k;
}

bool KernelSpec::stationary() const {
  switch (kind_) {
    case KernelKind::Linear:
      return false;
    case KernelKind::Sum:
    case KernelKind::Product:
      for (const auto& c : children_) {
        if (!c.stationary()) return false;
      }
      return true;
    default:
      return true;
  }
}

int KernelSpec::num_params() const {
  if (children_.empty()) return static_cast<int>(params_.size());
  int n = 0;
  for (const auto& c : children_) n += c.num_params();
  return n;
}

std::vector<double> KernelSpec::params() const {
  if (children_.empty()) return params_;
  std::vector<double> out;
  for (const auto& c : children_) {
    auto p = c.params();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

void KernelSpec::set_params(const std::vector<double>& values) {
  if (static_cast<int>(values.size()) != num_params()) throw ConfigError("set_params: wrong parameter count");
  if (children_.empty()) {
    params_ = values;
    return;
  }
  auto it = values.begin();
  for (auto& c : children_) {
    const int n = c.num_params();
    c.set_params(std::vector<double>(it, it + n));
    it += n;
  }
}

std::vector<std::string> KernelSpec::param_names() const {
  std::vector<std::string> names;
  switch (kind_) {
    case KernelKind::RbfArd:
      names.emplace_back("rbf.variance");
      if (ard_) {
        for (std::size_t r = 1; r < params_.size(); ++r) names.push_back("rbf.lengthscale[" + std::to_string(r - 1) + "]");
      } else {
        names.emplace_back("rbf.lengthscale");
      }
      break;
    case KernelKind::Matern:
      names.emplace_back("matern.variance");
      names.emplace_back("matern.lengthscale");
      break;
    case KernelKind::OrnsteinUhlenbeck:
      names.emplace_back("ou.variance");
      names.emplace_back("ou.drift");
      break;
    case KernelKind::Linear:
      names.emplace_back("linear.variance");
      break;
    case KernelKind::Sum:
    case KernelKind::Product:
      for (std::size_t c = 0; c < children_.size(); ++c) {
        const std::string prefix = (kind_ == KernelKind::Sum ? "sum[" : "prod[") + std::to_string(c) + "].";
        for (const auto& n : children_[c].param_names()) names.push_back(prefix + n);
      }
      break;
  }
  return names;
}

MatrixXd KernelSpec::select(const Eigen::Ref<const MatrixXd>& x) const {
  if (active_dims_.empty()) return x;
  MatrixXd out(x.rows(), static_cast<Eigen::Index>(active_dims_.size()));
  for (std::size_t k = 0; k < active_dims_.size(); ++k) {
    const int c = active_dims_[k];
    if (c < 0 || c >= x.cols()) throw ConfigError("kernel active dimension out of range");
    out.col(static_cast<Eigen::Index>(k)) = x.col(c);
  }
  return out;
}

void KernelSpec::validate(Eigen::Index input_dims) const {
  if (!children_.empty()) {
    for (const auto& c : children_) c.validate(input_dims);
    return;
  }
  for (int c : active_dims_) {
    if (c < 0 || c >= input_dims) throw ConfigError("kernel active dimension out of range");
  }
  const Eigen::Index width = active_dims_.empty() ? input_dims : static_cast<Eigen::Index>(active_dims_.size());
  for (double p : params_) {
    if (!(p > 0.0) || !std::isfinite(p)) throw ConfigError("kernel hyperparameters must be positive and finite");
  }
  if (kind_ == KernelKind::RbfArd && ard_ && static_cast<Eigen::Index>(params_.size()) - 1 != width) {
    throw ConfigError("ARD rbf kernel has " + std::to_string(params_.size() - 1) + " lengthscales for " +
                      std::to_string(width) + " input dimensions");
  }
}

double KernelSpec::eval(const Eigen::Ref<const VectorXd>& xs, const Eigen::Ref<const VectorXd>& xt) const {
  const MatrixXd a = xs.transpose();
  const MatrixXd b = xt.transpose();
  return gram(a, b)(0, 0);
}

MatrixXd KernelSpec::leaf_gram(const MatrixXd& a, const MatrixXd& b) const {
  const double variance = params_[0];
  switch (kind_) {
    case KernelKind::RbfArd: {
      if (ard_ && static_cast<Eigen::Index>(params_.size()) - 1 != a.cols()) {
        throw ConfigError("rbf kernel: dimension mismatch between lengthscales and inputs");
      }
      MatrixXd as = a;
      MatrixXd bs = b;
      for (Eigen::Index c = 0; c < a.cols(); ++c) {
        const double l = ard_ ? params_[1 + c] : params_[1];
        as.col(c) /= l;
        bs.col(c) /= l;
      }
      return variance * (-0.5 * squared_distances(as, bs)).array().exp().matrix();
    }
    case KernelKind::Matern: {
      const double scale = matern_scale(nu_) / params_[1];
      const MatrixXd r = squared_distances(a, b).cwiseSqrt();
      return r.unaryExpr([&](double d) { return variance * matern_shape(scale * d, nu_); });
    }
    case KernelKind::OrnsteinUhlenbeck: {
      const double drift = params_[1];
      const MatrixXd r = squared_distances(a, b).cwiseSqrt();
      return r.unaryExpr([&](double d) { return variance / (2.0 * drift) * std::exp(-drift * d); });
    }
    case KernelKind::Linear:
      return variance * a * b.transpose();
    default:
      break;
  }
  throw Error("leaf_gram called on a composite kernel");
}

MatrixXd KernelSpec::leaf_grad(const MatrixXd& a, const MatrixXd& b, int index) const {
  const double variance = params_[0];
  if (index == 0) {
    if (kind_ == KernelKind::Linear) return a * b.transpose();
    KernelSpec unit = *this;
    unit.params_[0] = 1.0;
    return unit.leaf_gram(a, b);
  }
  switch (kind_) {
    case KernelKind::RbfArd: {
      const MatrixXd k = leaf_gram(a, b);
      if (ard_) {
        const Eigen::Index c = index - 1;
        const double l = params_[index];
        MatrixXd d2(a.rows(), b.rows());
        for (Eigen::Index j = 0; j < b.rows(); ++j) {
          for (Eigen::Index i = 0; i < a.rows(); ++i) {
            const double diff = a(i, c) - b(j, c);
            d2(i, j) = diff * diff;
          }
        }
        return k.cwiseProduct(d2) / (l * l * l);
      }
      const double l = params_[1];
      return k.cwiseProduct(squared_distances(a, b)) / (l * l * l);
    }
    case KernelKind::Matern: {
      const double l = params_[1];
      const double scale = matern_scale(nu_) / l;
      const MatrixXd r = squared_distances(a, b).cwiseSqrt();
      return r.unaryExpr([&](double d) { return variance * matern_dl(scale * d, l, nu_); });
    }
    case KernelKind::OrnsteinUhlenbeck: {
      const double drift = params_[1];
      const MatrixXd r = squared_distances(a, b).cwiseSqrt();
      return r.unaryExpr([&](double d) {
        const double k = variance / (2.0 * drift) * std::exp(-drift * d);
        return k * (-1.0 / drift - d);
      });
    }
    default:
      break;
  }
  throw ConfigError("unknown kernel hyperparameter index");
}

MatrixXd KernelSpec::gram(const Eigen::Ref<const MatrixXd>& xa, const Eigen::Ref<const MatrixXd>& xb) const {
  if (xa.cols() != xb.cols()) throw ConfigError("gram: input dimension mismatch");
  if (children_.empty()) return leaf_gram(select(xa), select(xb));
  MatrixXd out = children_[0].gram(xa, xb);
  for (std::size_t c = 1; c < children_.size(); ++c) {
    if (kind_ == KernelKind::Sum) {
      out += children_[c].gram(xa, xb);
    } else {
      out = out.cwiseProduct(children_[c].gram(xa, xb));
    }
  }
  return out;
}

MatrixXd KernelSpec::gram_grad(const Eigen::Ref<const MatrixXd>& xa, const Eigen::Ref<const MatrixXd>& xb,
                               int index) const {
  if (xa.cols() != xb.cols()) throw ConfigError("gram_grad: input dimension mismatch");
  if (index < 0 || index >= num_params()) throw ConfigError("gram_grad: unknown hyperparameter");
  if (children_.empty()) return leaf_grad(select(xa), select(xb), index);
  int offset = 0;
  std::size_t owner = 0;
  for (; owner < children_.size(); ++owner) {
    const int n = children_[owner].num_params();
    if (index < offset + n) break;
    offset += n;
  }
  MatrixXd grad = children_[owner].gram_grad(xa, xb, index - offset);
  if (kind_ == KernelKind::Product) {
    for (std::size_t c = 0; c < children_.size(); ++c) {
      if (c != owner) grad = grad.cwiseProduct(children_[c].gram(xa, xb));
    }
  }
  return grad;
}

std::string KernelSpec::describe() const {
  std::ostringstream out;
  auto dims = [&] {
    if (active_dims_.empty()) return std::string();
    std::string s = " dims=[";
    for (std::size_t i = 0; i < active_dims_.size(); ++i) s += (i ? "," : "") + std::to_string(active_dims_[i]);
    return s + "]";
  };
  switch (kind_) {
    case KernelKind::RbfArd:
      out << (ard_ ? "rbf-ard" : "rbf") << dims();
      break;
    case KernelKind::Matern:
      out << "matern(nu=" << nu_value(nu_) << ")" << dims();
      break;
    case KernelKind::OrnsteinUhlenbeck:
      out << "ou" << dims();
      break;
    case KernelKind::Linear:
      out << "linear" << dims();
      break;
    case KernelKind::Sum:
    case KernelKind::Product:
      out << (kind_ == KernelKind::Sum ? "sum(" : "product(");
      for (std::size_t c = 0; c < children_.size(); ++c) out << (c ? ", " : "") << children_[c].describe();
      out << ")";
      break;
  }
  return out.str();
}

}  // namespace synthgp
