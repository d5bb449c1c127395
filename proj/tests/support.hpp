#pragma once

// Test-side helpers. Nothing here reuses the library's log-sum-exp or
// softmax code.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "vqr/dual.hpp"
#include "vqr/measures.hpp"

namespace vqr::test {

using Mat = Matrix<double>;
using Vec = Vector<double>;

struct Problem {
  Dataset<double> data;
  RankGrid<double> grid;
};

inline Mat gaussian(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  Mat m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = g(rng);
  return m;
}

inline Mat uniform(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Mat m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = u(rng);
  return m;
}

/// Centered Gaussian covariates, uniform responses; for d = 2 the grid has
/// `nodes` per axis.
inline Problem random_problem(std::mt19937_64& rng, int nodes, Eigen::Index J, Eigen::Index N, int d) {
  Problem p;
  p.data = center_covariates(make_dataset<double>(gaussian(rng, J, N), uniform(rng, J, d)));
  p.grid = make_rank_grid<double>(d, nodes);
  return p;
}

/// Grid with arbitrary nodes and weights (weights are normalized).
inline RankGrid<double> custom_grid(const Mat& U, const Vec& weights) {
  RankGrid<double> g;
  g.U = U;
  g.mu = weights / weights.sum();
  g.nodes_per_axis = static_cast<int>(U.rows());
  return g;
}

inline DualVariables<double> random_dual(std::mt19937_64& rng, const Problem& p, double sd) {
  auto dv = DualVariables<double>::zeros(p.grid.size(), p.data.size(), p.data.covariate_dim());
  dv.psi = gaussian(rng, p.data.size(), 1, sd);
  dv.b = gaussian(rng, p.grid.size(), p.data.covariate_dim(), sd);
  return dv;
}

/// Unstabilized evaluation of the smoothed dual, straight from its definition.
inline double naive_dual(const DualVariables<double>& dv, const Problem& p, double eps) {
  const Eigen::Index I = p.grid.size(), J = p.data.size();
  double value = 0.0;
  for (Eigen::Index j = 0; j < J; ++j) value += dv.psi(j) * p.data.nu(j);
  for (Eigen::Index i = 0; i < I; ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < J; ++j) {
      double arg = p.grid.U.row(i).dot(p.data.Y.row(j)) - dv.psi(j);
      for (Eigen::Index k = 0; k < p.data.covariate_dim(); ++k) arg -= dv.b(i, k) * p.data.X(j, k);
      s += std::exp(arg / eps);
    }
    value += eps * p.grid.mu(i) * std::log(s);
  }
  return value;
}

/// Check loss in the usual orientation, t z^+ + (1 - t) z^-, whose minimizer
/// over constants is the t-quantile.
inline double check_loss(double z, double t) { return z >= 0 ? t * z : (t - 1.0) * z; }

inline double mean_check_loss(const Vec& y, const Mat& X, double t, double a, const Vec& b) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    double fit = a;
    for (Eigen::Index k = 0; k < b.size(); ++k) fit += b(k) * X(j, k);
    s += check_loss(y(j) - fit, t);
  }
  return s / double(y.size());
}

/// Exact simple-regression quantile fit by enumerating lines through pairs
/// of observations (an LP optimum sits on such a vertex).
struct LineFit {
  double a = 0.0, b = 0.0, loss = 0.0;
};

inline LineFit vertex_qr(const Vec& y, const Vec& x, double t) {
  LineFit best;
  best.loss = std::numeric_limits<double>::infinity();
  Mat X(x.size(), 1);
  X.col(0) = x;
  for (Eigen::Index p = 0; p < y.size(); ++p) {
    for (Eigen::Index q = p + 1; q < y.size(); ++q) {
      if (x(p) == x(q)) continue;
      const double b = (y(q) - y(p)) / (x(q) - x(p));
      const double a = y(p) - b * x(p);
      const double l = mean_check_loss(y, X, t, a, Vec::Constant(1, b));
      if (l < best.loss) best = {a, b, l};
    }
  }
  return best;
}

}  // namespace vqr::test
