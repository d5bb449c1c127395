#pragma once

// Univariate Koenker-Bassett quantile regression, fitted one level t at a
// time, plus the empirical generalized-inverse quantile.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "vqr/accelerated.hpp"
#include "vqr/error.hpp"
#include "vqr/measures.hpp"

namespace vqr {

/// rho_t(z) = t z^- + (1 - t) z^+.
template <typename Scalar>
Scalar pinball(Scalar z, Scalar t) {
  return t * std::max(-z, Scalar(0)) + (Scalar(1) - t) * std::max(z, Scalar(0));
}

/// Q(t) = inf{a : F(a) > t} for the empirical CDF F of `y`.
template <typename Scalar>
Scalar empirical_quantile(const Eigen::Ref<const Vector<Scalar>>& y, Scalar t) {
  if (y.size() == 0) throw Error(ErrorKind::EmptyData, "empirical_quantile of an empty sample");
  std::vector<Scalar> s(y.data(), y.data() + y.size());
  std::sort(s.begin(), s.end());
  const auto n = static_cast<Scalar>(s.size());
  std::size_t k = 0;
  while (k < s.size()) {
    // F(s[k]) counts every atom equal to s[k].
    std::size_t last = k;
    while (last + 1 < s.size() && s[last + 1] == s[k]) ++last;
    if (static_cast<Scalar>(last + 1) / n > t) return s[k];
    k = last + 1;
  }
  return s.back();
}

template <typename Scalar>
struct QrConfig {
  Scalar tol = Scalar(1e-7);
  int max_iter = 20000;
  // Kink smoothing width relative to the response range.
  Scalar smoothing = Scalar(1e-4);
  int workers = 1;
};

template <typename Scalar>
struct QrFit {
  Scalar t = Scalar(0.5);
  Scalar alpha = Scalar(0);  // intercept for the centered covariates
  Vector<Scalar> beta;
  Scalar loss = Scalar(0);  // E[(Y - alpha - beta.X)^+] + (1 - t) alpha, unsmoothed
  int iterations = 0;
  Scalar grad_inf = Scalar(0);
  Scalar smoothing_width = Scalar(0);
  Vector<Scalar> x_mean;  // covariate mean the fit was centered on
  std::vector<std::string> warnings;

  /// Intercept in raw covariate units, i.e. for y = alpha_raw + beta.x_raw.
  Scalar intercept_raw() const { return x_mean.size() == beta.size() ? alpha - beta.dot(x_mean) : alpha; }

  /// Fitted quantile at a centered covariate value.
  Scalar predict(const Vector<Scalar>& x_centered) const { return alpha + beta.dot(x_centered); }
};

template <typename Scalar>
class QrFailure : public Error {
 public:
  explicit QrFailure(QrFit<Scalar> last)
      : Error(ErrorKind::NonConvergence,
              "quantile regression at t=" + std::to_string(double(last.t)) + " did not converge"),
        last_(std::move(last)) {}
  const QrFit<Scalar>& last_iterate() const { return last_; }

 private:
  QrFit<Scalar> last_;
};

/// Unsmoothed objective E[(Y - alpha - beta.X)^+] + (1 - t) alpha.
template <typename Scalar>
Scalar qr_objective(const Dataset<Scalar>& d, Scalar t, Scalar alpha, const Vector<Scalar>& beta) {
  Vector<Scalar> r = d.Y.col(0).array() - alpha;
  if (beta.size()) r.noalias() -= d.X * beta;
  return d.nu.dot(r.cwiseMax(Scalar(0))) + (Scalar(1) - t) * alpha;
}

namespace detail {

// Symmetric quadratic smoothing of max(r, 0) on [-h/2, h/2]; C^1.
template <typename Scalar>
Scalar smooth_plus(Scalar r, Scalar h) {
  if (r >= h / 2) return r;
  if (r <= -h / 2) return Scalar(0);
  const Scalar s = r + h / 2;
  return s * s / (2 * h);
}

template <typename Scalar>
Scalar smooth_plus_slope(Scalar r, Scalar h) {
  if (r >= h / 2) return Scalar(1);
  if (r <= -h / 2) return Scalar(0);
  return (r + h / 2) / h;
}

}  // namespace detail

/// Fits (alpha, beta) for level t by minimizing the kink-smoothed objective
/// with accelerated descent, shrinking the smoothing width geometrically down
/// to `smoothing * range(Y)`.
template <typename Scalar>
QrFit<Scalar> fit_qr_t(const Dataset<Scalar>& data, Scalar t, const QrConfig<Scalar>& cfg = {}) {
  validate(data);
  // The objective's first-order conditions hold for centered covariates only.
  const Dataset<Scalar> d = center_covariates(data);
  if (d.response_dim() != 1)
    throw Error(ErrorKind::Unsupported, "classical quantile regression needs a scalar response");
  if (!(t > Scalar(0) && t < Scalar(1)))
    throw Error(ErrorKind::Config, "quantile level must lie in (0,1)");

  const Eigen::Index J = d.size(), N = d.covariate_dim();
  const Vector<Scalar> y = d.Y.col(0);
  const Scalar yscale = response_scale<Scalar>(d.Y);

  QrFit<Scalar> fit;
  fit.t = t;
  fit.beta = Vector<Scalar>::Zero(N);
  fit.x_mean = d.x_mean;

  // Columns with no variation are dropped from the fit (beta_k stays 0).
  std::vector<Eigen::Index> active;
  Vector<Scalar> second(N);
  for (Eigen::Index k = 0; k < N; ++k) {
    second(k) = d.nu.dot(d.X.col(k).cwiseAbs2());
    const Scalar xs = d.X.col(k).cwiseAbs().maxCoeff();
    if (second(k) <= Scalar(1e-24) * std::max(Scalar(1), xs * xs) || xs == Scalar(0)) {
      fit.warnings.push_back("rank-deficient covariate column " + std::to_string(k) +
                             "; its coefficient is fixed at 0");
    } else {
      active.push_back(k);
    }
  }
  const Eigen::Index P = 1 + static_cast<Eigen::Index>(active.size());
  Matrix<Scalar> Z(J, P);
  Z.col(0).setOnes();
  Vector<Scalar> metric(P);
  metric(0) = Scalar(1);
  for (std::size_t a = 0; a < active.size(); ++a) {
    Z.col(static_cast<Eigen::Index>(a) + 1) = d.X.col(active[a]);
    metric(static_cast<Eigen::Index>(a) + 1) = second(active[a]);
  }

  const Scalar h_target = cfg.smoothing * yscale;
  Scalar h = std::max(h_target, Scalar(0.1) * yscale);
  Vector<Scalar> z = Vector<Scalar>::Zero(P);
  z(0) = empirical_quantile<Scalar>(y, t);

  DescentOptions<Scalar> opt;
  opt.tol = cfg.tol;
  opt.metric = metric;
  int total_iter = 0;
  DescentResult<Scalar> run;

  auto smoothed = [&](const Vector<Scalar>& p, Vector<Scalar>& g, Scalar width) -> Scalar {
    const Vector<Scalar> r = y - Z * p;
    Vector<Scalar> slope(J);
    Scalar f = (Scalar(1) - t) * p(0);
    for (Eigen::Index j = 0; j < J; ++j) {
      f += d.nu(j) * detail::smooth_plus(r(j), width);
      slope(j) = d.nu(j) * detail::smooth_plus_slope(r(j), width);
    }
    g.noalias() = -(Z.transpose() * slope);
    g(0) += Scalar(1) - t;
    return f;
  };

  // The smoothed loss is quadratic on each set of residuals inside the
  // smoothing zone, so Newton steps on that set finish what first-order
  // steps cannot resolve.
  auto polish = [&](Vector<Scalar>& p, Scalar width) {
    Vector<Scalar> g(P), g_new(P);
    Scalar f = smoothed(p, g, width);
    for (int it = 0; it < 50; ++it) {
      if (g.template lpNorm<Eigen::Infinity>() <= cfg.tol) return true;
      const Vector<Scalar> r = y - Z * p;
      Matrix<Scalar> H = Matrix<Scalar>::Zero(P, P);
      for (Eigen::Index j = 0; j < J; ++j)
        if (std::abs(r(j)) < width / 2) H.noalias() += (d.nu(j) / width) * Z.row(j).transpose() * Z.row(j);
      const Eigen::LDLT<Matrix<Scalar>> ldlt(H);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
          ldlt.vectorD().minCoeff() <= Scalar(1e-12) * std::max(Scalar(1), ldlt.vectorD().maxCoeff()))
        return false;
      const Vector<Scalar> step = -ldlt.solve(g);
      Scalar s = Scalar(1);
      bool moved = false;
      for (int ls = 0; ls < 40; ++ls, s /= 2) {
        const Vector<Scalar> trial = p + s * step;
        const Scalar f_new = smoothed(trial, g_new, width);
        if (f_new <= f + std::abs(f) * std::numeric_limits<Scalar>::epsilon() * 8) {
          p = trial;
          f = f_new;
          g = g_new;
          moved = true;
          break;
        }
      }
      if (!moved) return false;
    }
    return g.template lpNorm<Eigen::Infinity>() <= cfg.tol;
  };

  bool converged = false;
  for (;;) {
    const Scalar width = h;
    auto evaluate = [&](const Vector<Scalar>& p, Vector<Scalar>& g) -> Scalar { return smoothed(p, g, width); };
    // Short descent bursts, each followed by a polish attempt.
    converged = false;
    while (!converged && total_iter < cfg.max_iter) {
      opt.max_iter = std::min(2000, cfg.max_iter - total_iter);
      opt.initial_step = width;
      run = accelerated_descent<Scalar>(evaluate, z, opt);
      total_iter += run.iterations;
      z = run.x;
      converged = run.converged || polish(z, width);
    }
    Vector<Scalar> g(P);
    smoothed(z, g, width);
    run.grad_inf = g.template lpNorm<Eigen::Infinity>();
    if (!converged || h <= h_target) break;
    h = std::max(h_target, h / Scalar(10));
  }

  fit.alpha = z(0);
  for (std::size_t a = 0; a < active.size(); ++a) fit.beta(active[a]) = z(static_cast<Eigen::Index>(a) + 1);
  fit.loss = qr_objective(d, t, fit.alpha, fit.beta);
  fit.iterations = total_iter;
  fit.grad_inf = run.grad_inf;
  fit.smoothing_width = h_target;
  if (!converged) throw QrFailure<Scalar>(std::move(fit));
  return fit;
}

template <typename Scalar>
struct QuantileCrossing {
  Vector<Scalar> probe;  // raw covariate value
  Scalar probe_level = Scalar(0);
  Scalar t_low = Scalar(0), t_high = Scalar(0);
  Scalar q_low = Scalar(0), q_high = Scalar(0);
};

template <typename Scalar>
struct QrCurve {
  std::vector<Scalar> t_grid;
  std::vector<QrFit<Scalar>> fits;
  std::vector<QuantileCrossing<Scalar>> crossing_report;
};

/// Covariate probes at the given quantile levels of each column (raw units).
template <typename Scalar>
Vector<Scalar> covariate_probe(const Dataset<Scalar>& d, Scalar level) {
  const Matrix<Scalar> raw = d.raw_covariates();
  Vector<Scalar> p(raw.cols());
  for (Eigen::Index k = 0; k < raw.cols(); ++k) p(k) = empirical_quantile<Scalar>(raw.col(k), level);
  return p;
}

/// Independent t-by-t fits; probes the covariate deciles for quantile crossing.
template <typename Scalar>
QrCurve<Scalar> fit_qr_curve(const Dataset<Scalar>& d, const std::vector<Scalar>& t_grid,
                             const QrConfig<Scalar>& cfg = {}) {
  for (std::size_t k = 1; k < t_grid.size(); ++k)
    if (!(t_grid[k] > t_grid[k - 1]))
      throw Error(ErrorKind::Config, "t grid must be strictly increasing");

  QrCurve<Scalar> curve;
  curve.t_grid = t_grid;
  curve.fits.resize(t_grid.size());

  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(cfg.workers, t_grid.size()));
  if (workers == 1) {
    for (std::size_t k = 0; k < t_grid.size(); ++k) curve.fits[k] = fit_qr_t(d, t_grid[k], cfg);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t k = w; k < t_grid.size(); k += workers) curve.fits[k] = fit_qr_t(d, t_grid[k], cfg);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  if (d.covariate_dim() == 0 || t_grid.size() < 2) return curve;
  const Vector<Scalar> x_mean = center_covariates(d).x_mean;
  const Scalar tol = cfg.smoothing * response_scale<Scalar>(d.Y);
  for (int decile = 1; decile <= 9; ++decile) {
    const Scalar level = Scalar(decile) / Scalar(10);
    const Vector<Scalar> probe = covariate_probe(d, level);
    const Vector<Scalar> centered = probe - x_mean;
    for (std::size_t k = 0; k + 1 < t_grid.size(); ++k) {
      const Scalar lo = curve.fits[k].predict(centered);
      const Scalar hi = curve.fits[k + 1].predict(centered);
      if (hi < lo - tol) curve.crossing_report.push_back({probe, level, t_grid[k], t_grid[k + 1], lo, hi});
    }
  }
  return curve;
}

}  // namespace vqr
