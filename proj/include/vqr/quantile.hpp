#pragma once

// Conditional (vector) quantiles from a fitted regularized coupling.
//
// Two estimators are provided:
//  * coupling means  Q_x(u_i) = E[Y | X = x, U = u_i] under alpha, exactly or
//    over a Euclidean ball of covariates;
//  * potential gradients  Q_x(u_i) = grad_u (phi(u) + b(u).x) by finite
//    differences on the grid, with phi either soft (eps log-sum-exp) or hard
//    (max).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "vqr/dual.hpp"
#include "vqr/error.hpp"
#include "vqr/measures.hpp"
#include "vqr/rvqr.hpp"

namespace vqr {

template <typename Scalar>
struct CovariateGroup {
  Vector<Scalar> x;  // raw covariate value
  std::vector<Eigen::Index> members;
};

template <typename Scalar>
struct QuantileModel {
  Dataset<Scalar> data;
  RankGrid<Scalar> grid;
  DualVariables<Scalar> dual;
  Scalar epsilon = Scalar(0.1);
  Matrix<Scalar> alpha;     // I x J coupling
  Matrix<Scalar> x_raw;     // J x N
  std::vector<CovariateGroup<Scalar>> groups;  // distinct covariate values
  Eigen::Index distinct_responses = 0;
  Scalar mass_floor = Scalar(1e-14);

  /// pi(x, y, u_i) summed over observations sharing (x, y).
  Scalar joint_mass(std::size_t group, const Vector<Scalar>& y, Eigen::Index i) const {
    Scalar m = Scalar(0);
    for (Eigen::Index j : groups[group].members)
      if (data.Y.row(j).transpose() == y) m += alpha(i, j);
    return m;
  }
};

template <typename Scalar>
QuantileModel<Scalar> make_quantile_model(const Dataset<Scalar>& data, const RankGrid<Scalar>& grid,
                                          const DualVariables<Scalar>& dual, Scalar epsilon) {
  QuantileModel<Scalar> m;
  m.data = data;
  m.grid = grid;
  m.dual = dual;
  m.epsilon = epsilon;
  m.alpha = DualProblem<Scalar>(data, grid, epsilon).coupling(dual).alpha;
  m.x_raw = data.raw_covariates();

  const Eigen::Index J = data.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(J));
  for (Eigen::Index j = 0; j < J; ++j) order[static_cast<std::size_t>(j)] = j;
  auto row_less = [](const auto& A) {
    return [&A](Eigen::Index a, Eigen::Index b) {
      for (Eigen::Index k = 0; k < A.cols(); ++k) {
        if (A(a, k) < A(b, k)) return true;
        if (A(b, k) < A(a, k)) return false;
      }
      return false;
    };
  };
  std::stable_sort(order.begin(), order.end(), row_less(m.x_raw));
  for (Eigen::Index j : order) {
    if (m.groups.empty() || m.x_raw.row(j) != m.groups.back().x.transpose()) {
      m.groups.push_back({m.x_raw.row(j).transpose(), {}});
    }
    m.groups.back().members.push_back(j);
  }

  std::vector<Eigen::Index> yorder = order;
  std::stable_sort(yorder.begin(), yorder.end(), row_less(data.Y));
  for (std::size_t k = 0; k < yorder.size(); ++k)
    if (k == 0 || data.Y.row(yorder[k]) != data.Y.row(yorder[k - 1])) ++m.distinct_responses;
  return m;
}

template <typename Scalar>
QuantileModel<Scalar> make_quantile_model(const Dataset<Scalar>& data, const RankGrid<Scalar>& grid,
                                          const SolveResult<Scalar>& fit, Scalar epsilon) {
  return make_quantile_model(data, grid, fit.dual, epsilon);
}

namespace detail {

template <typename Scalar>
Vector<Scalar> coupling_mean(const QuantileModel<Scalar>& m, const std::vector<Eigen::Index>& members,
                             Eigen::Index i) {
  if (i < 0 || i >= m.grid.size()) throw Error(ErrorKind::InvalidInput, "rank index out of range");
  Scalar mass = Scalar(0);
  Vector<Scalar> acc = Vector<Scalar>::Zero(m.data.response_dim());
  for (Eigen::Index j : members) {
    mass += m.alpha(i, j);
    acc += m.alpha(i, j) * m.data.Y.row(j).transpose();
  }
  if (!(mass > m.mass_floor))
    throw Error(ErrorKind::InsufficientMass,
                "coupling mass " + std::to_string(double(mass)) + " at rank " + std::to_string(i) +
                    " is below the floor; use the ball estimator (means over a covariate neighborhood)");
  return acc / mass;
}

}  // namespace detail

/// E[Y | X = x, U = u_i] for a covariate value x (raw units) present in the data.
template <typename Scalar>
Vector<Scalar> conditional_quantile(const QuantileModel<Scalar>& m, const Vector<Scalar>& x, Eigen::Index i) {
  for (const auto& g : m.groups)
    if (g.x == x) return detail::coupling_mean(m, g.members, i);
  throw Error(ErrorKind::InvalidInput, "covariate value does not occur in the data; use the ball estimator");
}

/// Observations with ||x_j - x||_2 <= eta (raw units).
template <typename Scalar>
std::vector<Eigen::Index> ball_members(const QuantileModel<Scalar>& m, const Vector<Scalar>& x, Scalar eta) {
  if (!(eta >= Scalar(0))) throw Error(ErrorKind::Config, "ball radius must be nonnegative");
  if (x.size() != m.x_raw.cols()) throw Error(ErrorKind::InvalidInput, "probe dimension differs from covariates");
  std::vector<Eigen::Index> members;
  Scalar nearest = std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index j = 0; j < m.x_raw.rows(); ++j) {
    const Scalar dist = (m.x_raw.row(j).transpose() - x).norm();
    nearest = std::min(nearest, dist);
    if (dist <= eta) members.push_back(j);
  }
  if (members.empty())
    throw Error(ErrorKind::EmptyBall, "no covariate within radius " + std::to_string(double(eta)) +
                                          " of the probe; nearest covariate is at distance " +
                                          std::to_string(double(nearest)));
  return members;
}

/// E[Y | X in B_eta(x), U = u_i].
template <typename Scalar>
Vector<Scalar> ball_conditional_quantile(const QuantileModel<Scalar>& m, const Vector<Scalar>& x, Scalar eta,
                                         Eigen::Index i) {
  return detail::coupling_mean(m, ball_members(m, x, eta), i);
}

/// Radius reaching the ceil(fraction * J)-th nearest covariate of `x`.
template <typename Scalar>
Scalar neighborhood_radius(const QuantileModel<Scalar>& m, const Vector<Scalar>& x,
                           Scalar fraction = Scalar(0.05)) {
  std::vector<Scalar> dist(static_cast<std::size_t>(m.x_raw.rows()));
  for (Eigen::Index j = 0; j < m.x_raw.rows(); ++j)
    dist[static_cast<std::size_t>(j)] = (m.x_raw.row(j).transpose() - x).norm();
  const auto k = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(fraction * Scalar(dist.size()))), 1, dist.size());
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
  return dist[k - 1];
}

template <typename Scalar>
struct QuantileTable {
  std::vector<std::string> x_names;
  std::vector<std::string> y_names;
  Matrix<Scalar> x;  // rows: probe value (raw units)
  Matrix<Scalar> u;  // rows: rank node
  Matrix<Scalar> q;  // rows: quantile (stored response units)
  std::vector<Eigen::Index> probe_index;
  std::vector<Eigen::Index> rank_index;
  std::vector<Scalar> eta;  // radius used per probe
};

/// Ball-estimator quantiles for every (probe, rank) pair; probes in raw units.
/// Without `eta` each probe uses neighborhood_radius(m, probe).
template <typename Scalar>
QuantileTable<Scalar> quantile_table(const QuantileModel<Scalar>& m, const std::vector<Vector<Scalar>>& probes,
                                     const std::vector<Eigen::Index>& ranks,
                                     std::optional<Scalar> eta = std::nullopt) {
  QuantileTable<Scalar> t;
  t.x_names = m.data.x_names;
  t.y_names = m.data.y_names;
  const auto rows = static_cast<Eigen::Index>(probes.size() * ranks.size());
  t.x.resize(rows, m.x_raw.cols());
  t.u.resize(rows, m.grid.dim());
  t.q.resize(rows, m.data.response_dim());
  Eigen::Index r = 0;
  for (std::size_t p = 0; p < probes.size(); ++p) {
    const Scalar radius = eta ? *eta : neighborhood_radius(m, probes[p]);
    t.eta.push_back(radius);
    std::vector<Eigen::Index> members;
    try {
      members = ball_members(m, probes[p], radius);
    } catch (const Error& e) {
      throw Error(e.kind(), "probe " + std::to_string(p) + ": " + e.what());
    }
    for (Eigen::Index i : ranks) {
      t.x.row(r) = probes[p].transpose();
      t.u.row(r) = m.grid.U.row(i);
      try {
        t.q.row(r) = detail::coupling_mean(m, members, i).transpose();
      } catch (const Error& e) {
        throw Error(e.kind(), "probe " + std::to_string(p) + ": " + e.what());
      }
      t.probe_index.push_back(static_cast<Eigen::Index>(p));
      t.rank_index.push_back(i);
      ++r;
    }
  }
  return t;
}

/// Quantiles at every grid node as finite-difference gradients of
/// phi_x(u) = phi(u) + b(u).(x - x_mean). Backward differences along each
/// axis, forward at the first node of an axis.
template <typename Scalar>
Matrix<Scalar> potential_quantiles(const QuantileModel<Scalar>& m, const Vector<Scalar>& x_raw, PhiMode mode) {
  const DualProblem<Scalar> problem(m.data, m.grid, m.epsilon);
  const Vector<Scalar> phi =
      mode == PhiMode::Soft ? problem.soft_potential(m.dual) : problem.hard_potential(m.dual);
  Vector<Scalar> phi_x = phi;
  if (m.data.covariate_dim() > 0) {
    const Vector<Scalar> xc = x_raw - m.data.x_mean;
    phi_x.noalias() += m.dual.b * xc;
  }
  const Eigen::Index I = m.grid.size(), d = m.grid.dim();
  const int n = m.grid.nodes_per_axis;
  Matrix<Scalar> q(I, d);
  for (Eigen::Index i = 0; i < I; ++i) {
    auto multi = m.grid.multi_index(i);
    for (Eigen::Index k = 0; k < d; ++k) {
      auto other = multi;
      auto& mk = other[static_cast<std::size_t>(k)];
      Eigen::Index lo, hi;
      if (mk > 0) {
        --mk;
        lo = m.grid.flat_index(other);
        hi = i;
      } else if (n > 1) {
        ++mk;
        lo = i;
        hi = m.grid.flat_index(other);
      } else {
        q(i, k) = Scalar(0);
        continue;
      }
      q(i, k) = (phi_x(hi) - phi_x(lo)) / (m.grid.U(hi, k) - m.grid.U(lo, k));
    }
  }
  return q;
}

struct MonotonicityViolation {
  Eigen::Index first = 0;
  Eigen::Index second = 0;
  double amount = 0.0;  // decrease (1-D) or negative inner product (d >= 2)
};

struct MonotonicityReport {
  std::size_t pairs_checked = 0;
  std::vector<MonotonicityViolation> violations;
};

/// 1-D: adjacent nodes where Q decreases by more than tol. d >= 2: node pairs
/// with (Q(u1) - Q(u2)).(u1 - u2) < -tol. Quantiles from the ball estimator.
template <typename Scalar>
MonotonicityReport monotonicity_diagnostic(const QuantileModel<Scalar>& m, const Vector<Scalar>& x_probe,
                                           std::optional<Scalar> tol = std::nullopt,
                                           std::optional<Scalar> eta = std::nullopt) {
  const Scalar threshold = tol ? *tol : Scalar(1e-6) * response_scale<Scalar>(m.data.Y);
  const Eigen::Index I = m.grid.size();
  MonotonicityReport rep;
  if (I < 2) return rep;
  std::vector<Eigen::Index> ranks(static_cast<std::size_t>(I));
  for (Eigen::Index i = 0; i < I; ++i) ranks[static_cast<std::size_t>(i)] = i;
  const QuantileTable<Scalar> t = quantile_table(m, {x_probe}, ranks, eta);

  if (m.grid.dim() == 1) {
    for (Eigen::Index i = 0; i + 1 < I; ++i) {
      ++rep.pairs_checked;
      const Scalar drop = t.q(i, 0) - t.q(i + 1, 0);
      if (drop > threshold) rep.violations.push_back({i, i + 1, double(drop)});
    }
  } else {
    for (Eigen::Index a = 0; a < I; ++a) {
      for (Eigen::Index b = a + 1; b < I; ++b) {
        ++rep.pairs_checked;
        const Scalar inner = (t.q.row(a) - t.q.row(b)).dot(t.u.row(a) - t.u.row(b));
        if (inner < -threshold) rep.violations.push_back({a, b, double(-inner)});
      }
    }
  }
  return rep;
}

}  // namespace vqr
