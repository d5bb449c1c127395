#pragma once

// Smoothed dual of entropic optimal transport under a mean-independence
// constraint:
//
//   J(psi, b) = sum_j psi_j nu_j + eps sum_i mu_i log sum_j exp(theta_ij),
//   theta_ij  = (u_i . y_j - b_i . x_j - psi_j) / eps,
//
// together with its gradient, gauge normalization and the coupling
// alpha_ij = mu_i softmax_j(theta_i.).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>
#include <vector>

#include "vqr/error.hpp"
#include "vqr/measures.hpp"

namespace vqr {

/// Record of gauge transformations applied by normalize().
template <typename Scalar>
struct Gauge {
  Vector<Scalar> b_shift;  // accumulated c in (b, psi) <- (b - c, psi + X c)
  Scalar psi_shift = Scalar(0);  // accumulated lambda in psi <- psi + lambda
  bool normalized = false;
};

template <typename Scalar>
struct DualVariables {
  Vector<Scalar> psi;  // J
  Matrix<Scalar> b;    // I x N
  Gauge<Scalar> gauge;

  static DualVariables zeros(Eigen::Index I, Eigen::Index J, Eigen::Index N) {
    DualVariables dv;
    dv.psi = Vector<Scalar>::Zero(J);
    dv.b = Matrix<Scalar>::Zero(I, N);
    dv.gauge.b_shift = Vector<Scalar>::Zero(N);
    return dv;
  }

  Eigen::Index packed_size() const { return psi.size() + b.size(); }

  Vector<Scalar> pack() const {
    Vector<Scalar> z(packed_size());
    z.head(psi.size()) = psi;
    z.tail(b.size()) = Eigen::Map<const Vector<Scalar>>(b.data(), b.size());
    return z;
  }

  void unpack(const Vector<Scalar>& z) {
    psi = z.head(psi.size());
    b = Eigen::Map<const Matrix<Scalar>>(z.data() + psi.size(), b.rows(), b.cols());
  }

  bool all_finite() const { return psi.allFinite() && b.allFinite(); }
};

template <typename Scalar>
struct DualGradient {
  Vector<Scalar> psi;  // J
  Matrix<Scalar> b;    // I x N

  Scalar inf_norm() const {
    Scalar m = psi.size() ? psi.cwiseAbs().maxCoeff() : Scalar(0);
    if (b.size()) m = std::max(m, b.cwiseAbs().maxCoeff());
    return m;
  }
};

/// Regularized transport plan and its feasibility residuals.
template <typename Scalar>
struct Coupling {
  Matrix<Scalar> alpha;         // I x J
  Vector<Scalar> row_residual;  // sum_j alpha_ij - mu_i
  Vector<Scalar> col_residual;  // sum_i alpha_ij - nu_j
  Matrix<Scalar> mi_residual;   // sum_j alpha_ij x_j, I x N

  Scalar marginal_error() const {
    return col_residual.size() ? col_residual.cwiseAbs().maxCoeff() : Scalar(0);
  }
  Scalar mean_independence_error() const {
    return mi_residual.size() ? mi_residual.cwiseAbs().maxCoeff() : Scalar(0);
  }
};

namespace detail {

/// Runs fn(row_begin, row_end) over contiguous row blocks. Block boundaries
/// depend only on (rows, workers), which keeps reductions reproducible.
template <typename Fn>
void for_row_blocks(Eigen::Index rows, int workers, Fn&& fn) {
  const Eigen::Index w = std::max<Eigen::Index>(1, std::min<Eigen::Index>(workers, rows));
  if (w == 1) {
    fn(Eigen::Index(0), rows, Eigen::Index(0));
    return;
  }
  std::vector<std::thread> pool;
  const Eigen::Index chunk = (rows + w - 1) / w;
  for (Eigen::Index blk = 1; blk < w; ++blk) {
    const Eigen::Index r0 = blk * chunk;
    const Eigen::Index r1 = std::min(rows, r0 + chunk);
    if (r0 < r1) pool.emplace_back([&fn, r0, r1, blk] { fn(r0, r1, blk); });
  }
  fn(Eigen::Index(0), std::min(rows, chunk), Eigen::Index(0));
  for (auto& t : pool) t.join();
}

inline int block_count(Eigen::Index rows, int workers) {
  return static_cast<int>(std::max<Eigen::Index>(1, std::min<Eigen::Index>(workers, rows)));
}

}  // namespace detail

/// Dual problem bound to one dataset, grid and regularization strength.
/// Caches the gain matrix G = U Y^T.
template <typename Scalar>
class DualProblem {
 public:
  DualProblem(const Dataset<Scalar>& data, const RankGrid<Scalar>& grid, Scalar epsilon,
              int workers = 1)
      : X_(data.X), nu_(data.nu), mu_(grid.mu), epsilon_(epsilon), workers_(std::max(1, workers)) {
    if (!(epsilon > Scalar(0)) || !std::isfinite(epsilon))
      throw Error(ErrorKind::Config, "epsilon must be positive and finite");
    if (grid.dim() != data.response_dim())
      throw Error(ErrorKind::InvalidInput, "rank grid dimension differs from response dimension");
    gain_ = grid.U * data.Y.transpose();
  }

  Eigen::Index ranks() const { return gain_.rows(); }
  Eigen::Index observations() const { return gain_.cols(); }
  Eigen::Index covariates() const { return X_.cols(); }
  Scalar epsilon() const { return epsilon_; }
  const Matrix<Scalar>& gain() const { return gain_; }
  const Matrix<Scalar>& covariates_matrix() const { return X_; }
  const Vector<Scalar>& nu() const { return nu_; }
  const Vector<Scalar>& mu() const { return mu_; }

  /// eps * theta, i.e. u_i.y_j - b_i.x_j - psi_j.
  Matrix<Scalar> scores(const DualVariables<Scalar>& dv) const {
    check_shapes(dv);
    Matrix<Scalar> s = gain_;
    if (X_.cols() > 0) s.noalias() -= dv.b * X_.transpose();
    s.rowwise() -= dv.psi.transpose();
    return s;
  }

  Matrix<Scalar> theta(const DualVariables<Scalar>& dv) const { return scores(dv) / epsilon_; }

  Scalar objective(const DualVariables<Scalar>& dv) const {
    check_finite(dv);
    const Vector<Scalar> lse = row_log_sum_exp(theta(dv));
    return nu_.dot(dv.psi) + epsilon_ * mu_.dot(lse);
  }

  /// Objective and gradient in one pass over the I x J scores.
  Scalar evaluate(const DualVariables<Scalar>& dv, DualGradient<Scalar>& grad) const {
    check_finite(dv);
    const Eigen::Index I = ranks(), J = observations(), N = covariates();
    const int blocks = detail::block_count(I, workers_);
    std::vector<Vector<Scalar>> col_parts(static_cast<std::size_t>(blocks), Vector<Scalar>::Zero(J));
    Vector<Scalar> lse(I);
    grad.b.resize(I, N);

    detail::for_row_blocks(I, workers_, [&](Eigen::Index r0, Eigen::Index r1, Eigen::Index blk) {
      const Eigen::Index rows = r1 - r0;
      Matrix<Scalar> e = gain_.middleRows(r0, rows);
      if (N > 0) e.noalias() -= dv.b.middleRows(r0, rows) * X_.transpose();
      e.rowwise() -= dv.psi.transpose();
      e /= epsilon_;
      const Vector<Scalar> rmax = e.rowwise().maxCoeff();
      e.colwise() -= rmax;
      e = e.array().exp();
      const Vector<Scalar> rsum = e.rowwise().sum();
      lse.segment(r0, rows) = rmax.array() + rsum.array().log();
      // Row softmax scaled by mu_i: the coupling block.
      const Vector<Scalar> w = mu_.segment(r0, rows).cwiseQuotient(rsum);
      e = w.asDiagonal() * e;
      col_parts[static_cast<std::size_t>(blk)].noalias() = e.transpose() * Vector<Scalar>::Ones(rows);
      if (N > 0) grad.b.middleRows(r0, rows).noalias() = -(e * X_);
    });

    Vector<Scalar> col = col_parts[0];
    for (std::size_t p = 1; p < col_parts.size(); ++p) col += col_parts[p];
    grad.psi = nu_ - col;
    return nu_.dot(dv.psi) + epsilon_ * mu_.dot(lse);
  }

  DualGradient<Scalar> gradient(const DualVariables<Scalar>& dv) const {
    DualGradient<Scalar> g;
    evaluate(dv, g);
    return g;
  }

  Coupling<Scalar> coupling(const DualVariables<Scalar>& dv) const {
    check_finite(dv);
    Coupling<Scalar> c;
    Matrix<Scalar> e = theta(dv);
    const Vector<Scalar> rmax = e.rowwise().maxCoeff();
    e.colwise() -= rmax;
    e = e.array().exp();
    const Vector<Scalar> rsum = e.rowwise().sum();
    c.alpha = mu_.cwiseQuotient(rsum).asDiagonal() * e;
    c.row_residual = c.alpha.rowwise().sum() - mu_;
    c.col_residual = c.alpha.colwise().sum().transpose() - nu_;
    c.mi_residual = c.alpha * X_;
    return c;
  }

  /// phi_i = eps log sum_j exp(theta_ij).
  Vector<Scalar> soft_potential(const DualVariables<Scalar>& dv) const {
    check_finite(dv);
    return epsilon_ * row_log_sum_exp(theta(dv));
  }

  /// phi_i = max_j (u_i.y_j - b_i.x_j - psi_j).
  Vector<Scalar> hard_potential(const DualVariables<Scalar>& dv) const {
    check_finite(dv);
    return scores(dv).rowwise().maxCoeff();
  }

  /// Pins b_1 = 0 through the covariate translation and then shifts psi so
  /// that sum_ij exp(theta_ij) = 1. Requires centered covariates.
  DualVariables<Scalar> normalize(DualVariables<Scalar> dv) const {
    check_finite(dv);
    if (dv.gauge.b_shift.size() != covariates()) dv.gauge.b_shift = Vector<Scalar>::Zero(covariates());
    if (covariates() > 0 && ranks() > 0) {
      const Vector<Scalar> c = dv.b.row(0).transpose();
      dv.b.rowwise() -= c.transpose();
      dv.psi.noalias() += X_ * c;
      dv.gauge.b_shift += c;
    }
    const Matrix<Scalar> t = theta(dv);
    const Scalar m = t.maxCoeff();
    const Scalar lambda = epsilon_ * (m + std::log((t.array() - m).exp().sum()));
    dv.psi.array() += lambda;
    dv.gauge.psi_shift += lambda;
    dv.gauge.normalized = true;
    return dv;
  }

  /// Entropic primal value sum alpha (u.y) - eps sum alpha log alpha.
  Scalar primal_value(const Coupling<Scalar>& c) const {
    Scalar value = Scalar(0);
    for (Eigen::Index j = 0; j < c.alpha.cols(); ++j) {
      for (Eigen::Index i = 0; i < c.alpha.rows(); ++i) {
        const Scalar a = c.alpha(i, j);
        value += a * gain_(i, j);
        if (a > Scalar(0)) value -= epsilon_ * a * std::log(a);
      }
    }
    return value;
  }

  /// eps * H(mu): the constant separating J from the Lagrangian dual of the
  /// entropic primal, so that primal <= J + entropy_offset with equality at
  /// the optimum.
  Scalar entropy_offset() const {
    Scalar h = Scalar(0);
    for (Eigen::Index i = 0; i < mu_.size(); ++i) h -= mu_(i) * std::log(mu_(i));
    return epsilon_ * h;
  }

  void check_shapes(const DualVariables<Scalar>& dv) const {
    if (dv.psi.size() != observations() || dv.b.rows() != ranks() || dv.b.cols() != covariates())
      throw Error(ErrorKind::InvalidInput, "dual variable shapes do not match the problem");
  }

 private:
  void check_finite(const DualVariables<Scalar>& dv) const {
    check_shapes(dv);
    if (!dv.all_finite()) throw Error(ErrorKind::Numeric, "dual variables contain NaN or Inf");
  }

  static Vector<Scalar> row_log_sum_exp(const Matrix<Scalar>& t) {
    const Vector<Scalar> rmax = t.rowwise().maxCoeff();
    return rmax.array() + (t.colwise() - rmax).array().exp().rowwise().sum().log();
  }

  Matrix<Scalar> gain_;
  Matrix<Scalar> X_;
  Vector<Scalar> nu_;
  Vector<Scalar> mu_;
  Scalar epsilon_;
  int workers_;
};

// Free-function forms.

template <typename Scalar>
Matrix<Scalar> theta(const DualVariables<Scalar>& dv, const Dataset<Scalar>& data,
                     const RankGrid<Scalar>& grid, Scalar epsilon) {
  return DualProblem<Scalar>(data, grid, epsilon).theta(dv);
}

template <typename Scalar>
Scalar dual_objective(const DualVariables<Scalar>& dv, const Dataset<Scalar>& data,
                      const RankGrid<Scalar>& grid, Scalar epsilon) {
  return DualProblem<Scalar>(data, grid, epsilon).objective(dv);
}

template <typename Scalar>
DualGradient<Scalar> dual_gradient(const DualVariables<Scalar>& dv, const Dataset<Scalar>& data,
                                   const RankGrid<Scalar>& grid, Scalar epsilon) {
  return DualProblem<Scalar>(data, grid, epsilon).gradient(dv);
}

template <typename Scalar>
DualVariables<Scalar> normalize(const DualVariables<Scalar>& dv, const Dataset<Scalar>& data,
                                const RankGrid<Scalar>& grid, Scalar epsilon) {
  const Vector<Scalar> mean = data.X.transpose() * data.nu;
  const Scalar scale = std::max(Scalar(1), data.X.size() ? data.X.cwiseAbs().maxCoeff() : Scalar(0));
  if (mean.size() && mean.cwiseAbs().maxCoeff() > Scalar(1e-10) * scale)
    throw Error(ErrorKind::InvalidInput, "normalize requires centered covariates");
  return DualProblem<Scalar>(data, grid, epsilon).normalize(dv);
}

template <typename Scalar>
Coupling<Scalar> extract_coupling(const DualVariables<Scalar>& dv, const Dataset<Scalar>& data,
                                  const RankGrid<Scalar>& grid, Scalar epsilon) {
  return DualProblem<Scalar>(data, grid, epsilon).coupling(dv);
}

template <typename Scalar>
Scalar primal_value(const Coupling<Scalar>& c, const RankGrid<Scalar>& grid,
                    const Dataset<Scalar>& data, Scalar epsilon) {
  return DualProblem<Scalar>(data, grid, epsilon).primal_value(c);
}

template <typename Scalar>
Vector<Scalar> hard_potential(const DualVariables<Scalar>& dv, const Dataset<Scalar>& data,
                              const RankGrid<Scalar>& grid) {
  return DualProblem<Scalar>(data, grid, Scalar(1)).hard_potential(dv);
}

template <typename Scalar>
Vector<Scalar> soft_potential(const DualVariables<Scalar>& dv, const Dataset<Scalar>& data,
                              const RankGrid<Scalar>& grid, Scalar epsilon) {
  return DualProblem<Scalar>(data, grid, epsilon).soft_potential(dv);
}

}  // namespace vqr
