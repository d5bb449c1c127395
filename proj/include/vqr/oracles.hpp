#pragma once

// Independent numerical oracles for the regularized solver. Nothing here
// reuses the solver's log-sum-exp or softmax code.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "vqr/dual.hpp"
#include "vqr/error.hpp"
#include "vqr/measures.hpp"
#include "vqr/rvqr.hpp"

namespace vqr::oracle {

template <typename Scalar>
struct SinkhornResult {
  Matrix<Scalar> coupling;
  Vector<Scalar> f;  // row potentials: pi_ij = exp((G_ij - f_i - g_j) / eps)
  Vector<Scalar> g;  // column potentials
  int iterations = 0;
  Scalar row_residual = Scalar(0);
  Scalar col_residual = Scalar(0);
};

namespace detail {

template <typename Scalar>
Scalar log_sum_exp(const std::vector<Scalar>& v) {
  Scalar m = -std::numeric_limits<Scalar>::infinity();
  for (Scalar a : v) m = std::max(m, a);
  if (!std::isfinite(m)) return m;
  Scalar s = Scalar(0);
  for (Scalar a : v) s += std::exp(a - m);
  return m + std::log(s);
}

}  // namespace detail

/// Log-domain Sinkhorn for max sum pi G - eps sum pi log pi with row sums mu
/// and column sums nu (gain convention; the cost is -G).
template <typename Scalar>
SinkhornResult<Scalar> sinkhorn(const Vector<Scalar>& mu, const Vector<Scalar>& nu, const Matrix<Scalar>& G,
                                Scalar epsilon, Scalar tol, int max_iter = 200000) {
  const Eigen::Index I = G.rows(), J = G.cols();
  if (mu.size() != I || nu.size() != J) throw Error(ErrorKind::InvalidInput, "sinkhorn: shape mismatch");
  if (!(epsilon > Scalar(0))) throw Error(ErrorKind::Config, "sinkhorn: epsilon must be positive");
  if ((mu.array() <= Scalar(0)).any() || (nu.array() <= Scalar(0)).any())
    throw Error(ErrorKind::InvalidInput, "sinkhorn: weights must be positive");
  if (!G.allFinite()) throw Error(ErrorKind::InvalidInput, "sinkhorn: gain matrix must be finite");

  SinkhornResult<Scalar> r;
  r.f = Vector<Scalar>::Zero(I);
  r.g = Vector<Scalar>::Zero(J);
  std::vector<Scalar> buf_row(static_cast<std::size_t>(J)), buf_col(static_cast<std::size_t>(I));

  auto update_g = [&] {
    for (Eigen::Index j = 0; j < J; ++j) {
      for (Eigen::Index i = 0; i < I; ++i) buf_col[static_cast<std::size_t>(i)] = (G(i, j) - r.f(i)) / epsilon;
      r.g(j) = epsilon * (detail::log_sum_exp(buf_col) - std::log(nu(j)));
    }
  };
  auto update_f = [&] {
    for (Eigen::Index i = 0; i < I; ++i) {
      for (Eigen::Index j = 0; j < J; ++j) buf_row[static_cast<std::size_t>(j)] = (G(i, j) - r.g(j)) / epsilon;
      r.f(i) = epsilon * (detail::log_sum_exp(buf_row) - std::log(mu(i)));
    }
  };
  auto residuals = [&] {
    Scalar row = Scalar(0), col = Scalar(0);
    Vector<Scalar> colsum = Vector<Scalar>::Zero(J);
    for (Eigen::Index i = 0; i < I; ++i) {
      Scalar s = Scalar(0);
      for (Eigen::Index j = 0; j < J; ++j) {
        const Scalar p = std::exp((G(i, j) - r.f(i) - r.g(j)) / epsilon);
        s += p;
        colsum(j) += p;
      }
      row = std::max(row, std::abs(s - mu(i)));
    }
    for (Eigen::Index j = 0; j < J; ++j) col = std::max(col, std::abs(colsum(j) - nu(j)));
    r.row_residual = row;
    r.col_residual = col;
  };

  for (r.iterations = 1; r.iterations <= max_iter; ++r.iterations) {
    update_f();
    update_g();
    residuals();
    if (r.row_residual <= tol && r.col_residual <= tol) break;
  }
  if (r.iterations > max_iter) throw Error(ErrorKind::NonConvergence, "sinkhorn: iteration cap reached");

  r.coupling.resize(I, J);
  for (Eigen::Index j = 0; j < J; ++j)
    for (Eigen::Index i = 0; i < I; ++i) r.coupling(i, j) = std::exp((G(i, j) - r.f(i) - r.g(j)) / epsilon);
  return r;
}

template <typename Scalar>
struct SinkhornComparison {
  Scalar deviation = Scalar(0);  // max |alpha_rvqr - pi_sinkhorn|
  SolveReport<Scalar> solver;
  int sinkhorn_iterations = 0;
};

/// With covariates identically zero after centering the mean-independence
/// constraint is vacuous; the regularized solver must then agree with Sinkhorn.
template <typename Scalar>
SinkhornComparison<Scalar> check_against_sinkhorn(const Dataset<Scalar>& data, const RankGrid<Scalar>& grid,
                                                  Scalar epsilon, Scalar tol = Scalar(1e-10)) {
  if (data.X.size() && data.X.cwiseAbs().maxCoeff() > Scalar(1e-12))
    throw Error(ErrorKind::InvalidInput, "check_against_sinkhorn needs covariates that vanish after centering");
  SolverConfig<Scalar> cfg;
  cfg.epsilon = epsilon;
  cfg.tol = tol;
  cfg.gap_rel = Scalar(1e-10);
  cfg.gap_abs = Scalar(1e-12);
  const SolveResult<Scalar> fit = solve(data, grid, cfg);

  Matrix<Scalar> G(grid.size(), data.size());
  for (Eigen::Index i = 0; i < grid.size(); ++i)
    for (Eigen::Index j = 0; j < data.size(); ++j) G(i, j) = grid.U.row(i).dot(data.Y.row(j));
  const SinkhornResult<Scalar> sk = sinkhorn(grid.mu, data.nu, G, epsilon, tol);

  SinkhornComparison<Scalar> out;
  out.deviation = (fit.coupling.alpha - sk.coupling).cwiseAbs().maxCoeff();
  out.solver = fit.report;
  out.sinkhorn_iterations = sk.iterations;
  return out;
}

template <typename Scalar>
struct FdCheck {
  Scalar max_rel_error = Scalar(0);
  std::size_t coordinates = 0;
};

/// Central differences of `objective` against `gradient` on up to
/// `max_coords` coordinates sampled without replacement. The error of each
/// coordinate is relative to max(|g_k|, 1e-3 ||g||_inf).
template <typename Scalar>
FdCheck<Scalar> check_gradient_fd(const std::function<Scalar(const Vector<Scalar>&)>& objective,
                                  const std::function<Vector<Scalar>(const Vector<Scalar>&)>& gradient,
                                  const Vector<Scalar>& z, Scalar step, std::size_t max_coords = 50,
                                  std::uint64_t seed = 0) {
  if (!(step >= Scalar(1e-7) && step <= Scalar(1e-3)))
    throw Error(ErrorKind::Config, "finite-difference step must lie in [1e-7, 1e-3]");
  const Vector<Scalar> g = gradient(z);
  std::vector<Eigen::Index> coords(static_cast<std::size_t>(z.size()));
  std::iota(coords.begin(), coords.end(), Eigen::Index(0));
  if (coords.size() > max_coords) {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(max_coords);
  }
  const Scalar gscale = g.size() ? g.cwiseAbs().maxCoeff() : Scalar(0);
  FdCheck<Scalar> out;
  for (Eigen::Index k : coords) {
    Vector<Scalar> zp = z, zm = z;
    zp(k) += step;
    zm(k) -= step;
    const Scalar fd = (objective(zp) - objective(zm)) / (Scalar(2) * step);
    const Scalar denom =
        std::max({std::abs(g(k)), Scalar(1e-3) * gscale, std::numeric_limits<Scalar>::min()});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(fd - g(k)) / denom);
    ++out.coordinates;
  }
  return out;
}

/// Checks the closed-form dual gradient against the dual objective.
template <typename Scalar>
FdCheck<Scalar> check_gradient_fd(const DualVariables<Scalar>& dv, const Dataset<Scalar>& data,
                                  const RankGrid<Scalar>& grid, Scalar epsilon, Scalar step,
                                  std::size_t max_coords = 50, std::uint64_t seed = 0) {
  const DualProblem<Scalar> problem(data, grid, epsilon);
  auto unpack = [&](const Vector<Scalar>& z) {
    DualVariables<Scalar> cur = dv;
    cur.unpack(z);
    return cur;
  };
  return check_gradient_fd<Scalar>(
      [&](const Vector<Scalar>& z) { return problem.objective(unpack(z)); },
      [&](const Vector<Scalar>& z) {
        const DualGradient<Scalar> gr = problem.gradient(unpack(z));
        Vector<Scalar> out(z.size());
        out.head(gr.psi.size()) = gr.psi;
        out.tail(gr.b.size()) = Eigen::Map<const Vector<Scalar>>(gr.b.data(), gr.b.size());
        return out;
      },
      dv.pack(), step, max_coords, seed);
}

/// Objects of the change of variables pi = D^T V / J on a level grid
/// t_1 = 0 < ... < t_T < 1, with D lower bidiagonal (1 on the diagonal, -1
/// below). mu = D^T (1 - t) and U = D^{-1} mu are the induced rank weights
/// and nodes (uniform levels give mu_i = 1/T and U_i = i/T).
template <typename Scalar>
struct CovTransform {
  Matrix<Scalar> pi;  // T x J
  Vector<Scalar> mu;  // T
  Vector<Scalar> U;   // T
};

template <typename Scalar>
Vector<Scalar> level_weights(const Vector<Scalar>& t_grid) {
  const Eigen::Index T = t_grid.size();
  Vector<Scalar> mu(T);
  for (Eigen::Index k = 0; k < T; ++k) mu(k) = (k + 1 < T ? t_grid(k + 1) : Scalar(1)) - t_grid(k);
  return mu;
}

template <typename Scalar>
CovTransform<Scalar> monotone_cov_transform(const Matrix<Scalar>& V, const Vector<Scalar>& t_grid) {
  const Eigen::Index T = V.rows(), J = V.cols();
  if (t_grid.size() != T) throw Error(ErrorKind::InvalidInput, "t grid length must match the rows of V");
  if (T == 0 || J == 0) throw Error(ErrorKind::InvalidInput, "V must be nonempty");
  for (Eigen::Index k = 0; k + 1 < T; ++k)
    if (!(t_grid(k + 1) > t_grid(k))) throw Error(ErrorKind::InvalidInput, "t grid must be strictly increasing");
  for (Eigen::Index j = 0; j < J; ++j) {
    for (Eigen::Index k = 0; k < T; ++k) {
      if (V(k, j) < Scalar(0) || V(k, j) > Scalar(1))
        throw Error(ErrorKind::InvalidInput, "V entries must lie in [0,1]; offending entry (" + std::to_string(k) +
                                                 ", " + std::to_string(j) + ")");
      if (k + 1 < T && V(k + 1, j) > V(k, j))
        throw Error(ErrorKind::InvalidInput, "V must be nonincreasing in t; first offending pair rows (" +
                                                 std::to_string(k) + ", " + std::to_string(k + 1) + ") column " +
                                                 std::to_string(j));
    }
  }
  CovTransform<Scalar> out;
  out.pi.resize(T, J);
  for (Eigen::Index k = 0; k < T; ++k)
    out.pi.row(k) = (k + 1 < T ? Matrix<Scalar>(V.row(k) - V.row(k + 1)) : Matrix<Scalar>(V.row(k))) / Scalar(J);
  out.mu = level_weights(t_grid);
  out.U.resize(T);
  Scalar acc = Scalar(0);
  for (Eigen::Index k = 0; k < T; ++k) out.U(k) = (acc += out.mu(k));
  return out;
}

/// V = J (D^T)^{-1} pi, i.e. V_k = J sum_{s >= k} pi_s.
template <typename Scalar>
Matrix<Scalar> inverse_cov_transform(const Matrix<Scalar>& pi) {
  const Eigen::Index T = pi.rows(), J = pi.cols();
  Matrix<Scalar> V(T, J);
  Matrix<Scalar> acc = Matrix<Scalar>::Zero(1, J);
  for (Eigen::Index k = T - 1; k >= 0; --k) {
    acc += pi.row(k);
    V.row(k) = acc * Scalar(J);
  }
  return V;
}

/// Exact 1-D optimal transport value max sum pi u y by the north-west corner
/// rule on sorted supports.
template <typename Scalar>
Scalar monotone_ot_value(const Vector<Scalar>& u, const Vector<Scalar>& mu, const Vector<Scalar>& y,
                         const Vector<Scalar>& nu) {
  std::vector<Eigen::Index> iu(static_cast<std::size_t>(u.size())), iy(static_cast<std::size_t>(y.size()));
  std::iota(iu.begin(), iu.end(), Eigen::Index(0));
  std::iota(iy.begin(), iy.end(), Eigen::Index(0));
  std::sort(iu.begin(), iu.end(), [&](auto a, auto b) { return u(a) < u(b); });
  std::sort(iy.begin(), iy.end(), [&](auto a, auto b) { return y(a) < y(b); });
  std::size_t a = 0, b = 0;
  Scalar ra = mu(iu[0]), rb = nu(iy[0]), value = Scalar(0);
  while (a < iu.size() && b < iy.size()) {
    const Scalar m = std::min(ra, rb);
    value += m * u(iu[a]) * y(iy[b]);
    ra -= m;
    rb -= m;
    if (ra <= rb) {
      if (++a < iu.size()) ra += mu(iu[a]);
    } else {
      if (++b < iy.size()) rb += nu(iy[b]);
    }
  }
  return value;
}

template <typename Scalar>
struct EquivalenceReport {
  std::size_t samples = 0;
  Scalar max_objective_mismatch = Scalar(0);  // |sum pi U y - sum_t mu_t (V_t . y) / J|
  Scalar max_roundtrip_error = Scalar(0);
  Scalar max_v_feasibility_error = Scalar(0);   // moment equalities and bounds for V
  Scalar max_pi_feasibility_error = Scalar(0);  // marginals and mean independence for pi
  std::vector<Scalar> epsilons;
  std::vector<Scalar> dual_values;  // J + eps H(mu) per epsilon
  bool cauchy = false;              // last successive difference <= first
  bool covariate_free = false;
  Scalar exact_value = std::numeric_limits<Scalar>::quiet_NaN();
  Scalar limit_error = std::numeric_limits<Scalar>::quiet_NaN();
  Scalar limit_bound = std::numeric_limits<Scalar>::quiet_NaN();
};

/// Random strictly feasible coupling: the independent coupling plus a
/// perturbation projected onto the null space of the row, column and
/// mean-independence constraints. Covariates must be centered.
template <typename Scalar>
Matrix<Scalar> random_feasible_coupling(const Vector<Scalar>& mu, const Vector<Scalar>& nu,
                                        const Matrix<Scalar>& X, std::mt19937_64& rng) {
  const Eigen::Index I = mu.size(), J = nu.size();
  std::normal_distribution<Scalar> gauss;
  Matrix<Scalar> delta(I, J);
  for (Eigen::Index j = 0; j < J; ++j)
    for (Eigen::Index i = 0; i < I; ++i) delta(i, j) = gauss(rng);
  // Columns orthogonal to span{1, X}: row sums and sum_j delta_ij x_j vanish.
  Matrix<Scalar> basis(J, 1 + X.cols());
  basis.col(0).setOnes();
  basis.rightCols(X.cols()) = X;
  const Eigen::ColPivHouseholderQR<Matrix<Scalar>> qr(basis);
  const Matrix<Scalar> Q = qr.householderQ() * Matrix<Scalar>::Identity(J, qr.rank());
  delta -= (delta * Q) * Q.transpose();
  // Rows: remove the row mean so that column sums vanish.
  delta.rowwise() -= delta.colwise().mean();
  const Matrix<Scalar> base = mu * nu.transpose();
  Scalar scale = std::numeric_limits<Scalar>::infinity();
  for (Eigen::Index j = 0; j < J; ++j)
    for (Eigen::Index i = 0; i < I; ++i)
      if (delta(i, j) < Scalar(0)) scale = std::min(scale, -base(i, j) / delta(i, j));
  if (!std::isfinite(scale)) scale = Scalar(0);
  return base + Scalar(0.9) * scale * delta;
}

/// Certifies that the monotone-V program and the coupling program share
/// feasible sets and objective values on sampled feasible points, and tracks
/// the regularized value along a decreasing epsilon sequence.
template <typename Scalar>
EquivalenceReport<Scalar> check_equivalence_small(const Dataset<Scalar>& data, const RankGrid<Scalar>& grid,
                                                  const std::vector<Scalar>& epsilons, std::size_t samples = 5,
                                                  std::uint64_t seed = 1) {
  const Eigen::Index T = grid.size(), J = data.size(), N = data.covariate_dim();
  if (grid.dim() != 1 || data.response_dim() != 1)
    throw Error(ErrorKind::Unsupported, "equivalence check is defined for scalar responses");
  if (T * J > 400) throw Error(ErrorKind::InvalidInput, "equivalence check is limited to T*J <= 400");
  if ((data.nu.array() - Scalar(1) / Scalar(J)).abs().maxCoeff() > Scalar(1e-12))
    throw Error(ErrorKind::InvalidInput, "equivalence check needs uniform observation weights");

  EquivalenceReport<Scalar> rep;
  // Levels t_k = U_k - mu_k, so t_1 = 0 on the right-endpoint grid.
  const Vector<Scalar> t_grid = grid.U.col(0) - grid.mu;
  const Vector<Scalar> y = data.Y.col(0);
  std::mt19937_64 rng(seed);

  for (std::size_t s = 0; s < samples; ++s) {
    const Matrix<Scalar> pi = random_feasible_coupling<Scalar>(grid.mu, data.nu, data.X, rng);
    rep.max_pi_feasibility_error = std::max(
        {rep.max_pi_feasibility_error, (pi.rowwise().sum() - grid.mu).cwiseAbs().maxCoeff(),
         (pi.colwise().sum().transpose() - data.nu).cwiseAbs().maxCoeff(),
         N ? (pi * data.X).cwiseAbs().maxCoeff() : Scalar(0)});

    Matrix<Scalar> V = inverse_cov_transform(pi);
    // Clamp rounding so that V passes the [0,1] domain test.
    V = V.cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
    const CovTransform<Scalar> fwd = monotone_cov_transform(V, t_grid);

    // Moment equalities of the V program: mean of V_t is 1 - t_t and
    // E[V_t X] = (1 - t_t) E[X] = 0 on centered covariates; V_1 = 1.
    Scalar verr = (V.row(0).array() - Scalar(1)).abs().maxCoeff();
    for (Eigen::Index k = 0; k < T; ++k) {
      verr = std::max(verr, std::abs(V.row(k).sum() / Scalar(J) - (Scalar(1) - t_grid(k))));
      if (N) verr = std::max(verr, (V.row(k) * data.X / Scalar(J)).cwiseAbs().maxCoeff());
    }
    rep.max_v_feasibility_error = std::max(rep.max_v_feasibility_error, verr);

    rep.max_roundtrip_error = std::max(rep.max_roundtrip_error, (fwd.pi - pi).cwiseAbs().maxCoeff());
    const Scalar coupling_obj = fwd.U.dot(fwd.pi * y);
    const Scalar v_obj = fwd.mu.dot(V * y) / Scalar(J);
    rep.max_objective_mismatch = std::max(rep.max_objective_mismatch, std::abs(coupling_obj - v_obj));
    ++rep.samples;
  }

  for (Scalar eps : epsilons) {
    SolverConfig<Scalar> cfg;
    cfg.epsilon = eps;
    cfg.tol = Scalar(1e-9);
    const SolveResult<Scalar> fit = solve(data, grid, cfg);
    rep.epsilons.push_back(eps);
    rep.dual_values.push_back(fit.report.dual_value);
  }
  if (rep.dual_values.size() >= 3) {
    const auto& v = rep.dual_values;
    rep.cauchy = std::abs(v[v.size() - 1] - v[v.size() - 2]) <= std::abs(v[1] - v[0]);
  }

  rep.covariate_free = N == 0 || data.X.cwiseAbs().maxCoeff() <= Scalar(1e-12);
  if (rep.covariate_free && !epsilons.empty()) {
    rep.exact_value = monotone_ot_value<Scalar>(grid.U.col(0), grid.mu, y, data.nu);
    const auto last = std::min_element(epsilons.begin(), epsilons.end()) - epsilons.begin();
    rep.limit_error = std::abs(rep.dual_values[static_cast<std::size_t>(last)] - rep.exact_value);
    rep.limit_bound = Scalar(5) * epsilons[static_cast<std::size_t>(last)] * std::log(Scalar(T * J));
  }
  return rep;
}

}  // namespace vqr::oracle
