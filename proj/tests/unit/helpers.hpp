#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "synthgp/mogp_cov.hpp"

namespace testing {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double lo = -1.0,
                              double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  MatrixXd m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = u(rng);
  }
  return m;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Random heterotopic panel: m series, lengths in [t_min, t_max], d covariates.
inline synthgp::Panel random_panel(std::mt19937_64& rng, int m, int t_min, int t_max, int d) {
  synthgp::Panel p;
  for (int i = 0; i < m; ++i) {
    const int t = uniform_int(rng, t_min, t_max);
    synthgp::SeriesInputs s;
    s.time.resize(t);
    double clock = uniform(rng, 0.0, 2.0);
    for (int k = 0; k < t; ++k) {
      clock += uniform(rng, 0.5, 1.5);
      s.time(k) = clock;
    }
    s.covariates = random_matrix(rng, t, d);
    p.inputs.push_back(s);
    p.outputs.push_back(random_matrix(rng, t, 1));
  }
  return p;
}

// Randomizes every hyperparameter of a structure within safe ranges.
inline void randomize(synthgp::MogpStructure& s, std::mt19937_64& rng) {
  auto table = synthgp::parameter_table(s);
  for (auto& h : table) {
    if (!h.free) continue;
    switch (h.kind) {
      case synthgp::ParamKind::Loading:
        h.value = uniform(rng, h.index == 0 ? 0.2 : -1.2, 1.2);
        break;
      case synthgp::ParamKind::Nugget:
        h.value = uniform(rng, 0.1, 1.0);
        break;
      case synthgp::ParamKind::Kernel:
        h.value = uniform(rng, 0.5, 2.0);
        break;
      case synthgp::ParamKind::Noise:
        h.value = uniform(rng, 0.05, 0.5);
        break;
    }
  }
  synthgp::apply_parameters(s, table);
}

// Central finite-difference gradient.
inline VectorXd finite_difference(const std::function<double(const VectorXd&)>& f, const VectorXd& x,
                                  double rel_step = 1e-6) {
  VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = rel_step * std::max(1.0, std::abs(x(i)));
    VectorXd a = x;
    VectorXd b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

// Dense multivariate-normal log density via explicit inverse and determinant.
inline double dense_log_density(const VectorXd& y, const MatrixXd& sigma) {
  const MatrixXd inv = sigma.inverse();
  const double det = sigma.determinant();
  return -0.5 * y.dot(inv * y) - 0.5 * std::log(det) - 0.5 * static_cast<double>(y.size()) * std::log(2.0 * M_PI);
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("synthgp_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testing
