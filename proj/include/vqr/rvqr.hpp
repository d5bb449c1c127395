#pragma once

// Regularized vector quantile regression: minimizes the smoothed dual by
// accelerated gradient descent and returns the gauge-fixed potentials, the
// regularized coupling and a convergence report.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "vqr/accelerated.hpp"
#include "vqr/dual.hpp"
#include "vqr/error.hpp"
#include "vqr/measures.hpp"

namespace vqr {

enum class PhiMode { Soft, Hard };
enum class StopRule { Gradient, IterateDifference };
enum class SolverBackend { Batch };

inline const char* to_string(PhiMode m) { return m == PhiMode::Soft ? "soft" : "hard"; }

template <typename Scalar>
struct SolverConfig {
  Scalar epsilon = Scalar(0.1);
  Scalar tol = Scalar(1e-6);
  int max_iter = 50000;
  StepMode step_mode = StepMode::Backtracking;
  RestartMode restart = RestartMode::FunctionValue;
  PhiMode phi_mode = PhiMode::Soft;
  StopRule stop_rule = StopRule::Gradient;
  SolverBackend backend = SolverBackend::Batch;
  // Diagonal rescaling of the psi and b blocks by their marginal masses.
  bool precondition = true;
  // Convergence additionally requires |primal - dual| <= max(gap_abs, gap_rel |dual|).
  bool certify_gap = true;
  Scalar gap_rel = Scalar(1e-6);
  Scalar gap_abs = Scalar(1e-8);
  Scalar armijo = Scalar(1e-4);
  int workers = 1;
  bool record_history = false;

  void validate() const {
    if (!(epsilon > Scalar(0)) || !std::isfinite(epsilon))
      throw Error(ErrorKind::Config, "epsilon must be positive");
    if (!(tol > Scalar(0))) throw Error(ErrorKind::Config, "tol must be positive");
    if (max_iter < 1) throw Error(ErrorKind::Config, "max_iter must be at least 1");
    if (workers < 1) throw Error(ErrorKind::Config, "workers must be at least 1");
  }
};

template <typename Scalar>
struct SolveReport {
  int iterations = 0;
  int evaluations = 0;
  int restarts = 0;
  bool converged = false;
  Scalar objective = Scalar(0);    // J(psi, b)
  Scalar dual_value = Scalar(0);   // J + eps H(mu)
  Scalar primal_value = Scalar(0);
  Scalar duality_gap = Scalar(0);  // |primal - dual_value|
  Scalar grad_inf = Scalar(0);
  Scalar col_residual_inf = Scalar(0);
  Scalar mi_residual_inf = Scalar(0);
  double wall_time_s = 0.0;
  std::vector<Scalar> objective_history;
  std::vector<int> restart_iterations;

  Scalar relative_gap() const {
    return duality_gap / std::max(std::abs(dual_value), std::numeric_limits<Scalar>::min());
  }
};

template <typename Scalar>
struct SolveResult {
  DualVariables<Scalar> dual;
  Coupling<Scalar> coupling;
  SolveReport<Scalar> report;
};

/// Thrown when the iteration budget runs out; carries the last iterate.
template <typename Scalar>
class SolveFailure : public Error {
 public:
  explicit SolveFailure(SolveResult<Scalar> result)
      : Error(ErrorKind::NonConvergence,
              "solver did not converge in " + std::to_string(result.report.iterations) +
                  " iterations (gradient inf-norm " + std::to_string(double(result.report.grad_inf)) + ")"),
        result_(std::move(result)) {}

  const SolveResult<Scalar>& result() const { return result_; }

 private:
  SolveResult<Scalar> result_;
};

namespace detail {

/// Largest eigenvalue of the Gauss-Newton surrogate A^T diag(alpha) A / eps at
/// `dv`, in the metric given by `metric`; A maps (dpsi, db) to the score change.
template <typename Scalar>
Scalar surrogate_lipschitz(const DualProblem<Scalar>& problem, const DualVariables<Scalar>& dv,
                           const Vector<Scalar>& metric, int power_iters = 50) {
  const Coupling<Scalar> c = problem.coupling(dv);
  const Matrix<Scalar>& X = problem.covariates_matrix();
  const Eigen::Index J = problem.observations(), I = problem.ranks(), N = problem.covariates();
  const Eigen::Index n = J + I * N;
  const Vector<Scalar> inv_sqrt = metric.size() == n ? Vector<Scalar>(metric.cwiseSqrt().cwiseInverse())
                                                     : Vector<Scalar>::Ones(n);
  auto apply = [&](const Vector<Scalar>& v_in) {
    const Vector<Scalar> v = v_in.cwiseProduct(inv_sqrt);
    const Vector<Scalar> dpsi = v.head(J);
    const Matrix<Scalar> db = Eigen::Map<const Matrix<Scalar>>(v.data() + J, I, N);
    Matrix<Scalar> ds = Matrix<Scalar>::Zero(I, J);
    ds.rowwise() -= dpsi.transpose();
    if (N > 0) ds.noalias() -= db * X.transpose();
    const Matrix<Scalar> w = c.alpha.cwiseProduct(ds);
    Vector<Scalar> out(n);
    out.head(J) = -w.colwise().sum().transpose();
    if (N > 0) {
      const Matrix<Scalar> gb = -(w * X);
      out.tail(I * N) = Eigen::Map<const Vector<Scalar>>(gb.data(), I * N);
    }
    return Vector<Scalar>(out.cwiseProduct(inv_sqrt) / problem.epsilon());
  };
  Vector<Scalar> v = Vector<Scalar>::Ones(n).normalized();
  Scalar lambda = Scalar(0);
  for (int k = 0; k < power_iters; ++k) {
    const Vector<Scalar> w = apply(v);
    lambda = v.dot(w);
    const Scalar nrm = w.norm();
    if (nrm == Scalar(0)) break;
    v = w / nrm;
  }
  return lambda;
}

}  // namespace detail

/// Fits the regularized coupling. `data` must have centered covariates.
template <typename Scalar>
SolveResult<Scalar> solve(const Dataset<Scalar>& data, const RankGrid<Scalar>& grid,
                          const SolverConfig<Scalar>& cfg) {
  cfg.validate();
  validate(data);
  if (data.covariate_dim() > 0) {
    const Vector<Scalar> mean = data.X.transpose() * data.nu;
    const Scalar scale = std::max(Scalar(1), data.X.cwiseAbs().maxCoeff());
    if (mean.cwiseAbs().maxCoeff() > Scalar(1e-10) * scale)
      throw Error(ErrorKind::InvalidInput, "solve requires centered covariates");
  }
  const auto start = std::chrono::steady_clock::now();

  const DualProblem<Scalar> problem(data, grid, cfg.epsilon, cfg.workers);
  const Eigen::Index I = problem.ranks(), J = problem.observations(), N = problem.covariates();
  DualVariables<Scalar> dv = DualVariables<Scalar>::zeros(I, J, N);

  DescentOptions<Scalar> opt;
  opt.max_iter = cfg.max_iter;
  opt.tol = cfg.tol;
  opt.step_mode = cfg.step_mode;
  opt.restart = cfg.restart;
  opt.armijo = cfg.armijo;
  opt.record_history = cfg.record_history;

  Scalar curvature_scale;
  if (cfg.precondition) {
    // Diagonal of the Hessian at the independent coupling, up to 1/eps.
    opt.metric.resize(J + I * N);
    opt.metric.head(J) = data.nu;
    for (Eigen::Index k = 0; k < N; ++k) {
      const Scalar second = data.nu.dot(data.X.col(k).cwiseAbs2());
      // A column that centers to rounding noise carries no information; a
      // metric of that size would blow up the step on b.
      const Scalar floor = second > Scalar(1e-24) ? second : Scalar(1);
      opt.metric.segment(J + k * I, I) = grid.mu * floor;
    }
    curvature_scale = Scalar(1);
  } else {
    Scalar m = data.nu.maxCoeff();
    for (Eigen::Index k = 0; k < N; ++k)
      m = std::max(m, grid.mu.maxCoeff() * data.nu.dot(data.X.col(k).cwiseAbs2()));
    curvature_scale = m;
  }
  opt.initial_step = cfg.epsilon / curvature_scale;
  if (cfg.step_mode == StepMode::Fixed) {
    const Scalar L = detail::surrogate_lipschitz(problem, dv, opt.metric);
    opt.initial_step = L > Scalar(0) ? Scalar(1) / L : opt.initial_step;
  }

  auto evaluate = [&](const Vector<Scalar>& z, Vector<Scalar>& g) -> Scalar {
    DualVariables<Scalar> cur = DualVariables<Scalar>::zeros(I, J, N);
    cur.unpack(z);
    if (!cur.all_finite()) {
      g = Vector<Scalar>::Zero(z.size());
      return std::numeric_limits<Scalar>::infinity();
    }
    DualGradient<Scalar> grad;
    const Scalar f = problem.evaluate(cur, grad);
    g.resize(z.size());
    g.head(J) = grad.psi;
    if (N > 0) g.tail(I * N) = Eigen::Map<const Vector<Scalar>>(grad.b.data(), I * N);
    return f;
  };

  if (cfg.certify_gap) {
    opt.certify = [&](const Vector<Scalar>& z) {
      DualVariables<Scalar> cur = DualVariables<Scalar>::zeros(I, J, N);
      cur.unpack(z);
      const Scalar dual = problem.objective(cur) + problem.entropy_offset();
      const Scalar gap = std::abs(problem.primal_value(problem.coupling(cur)) - dual);
      return gap <= std::max(cfg.gap_abs, cfg.gap_rel * std::abs(dual));
    };
  }

  std::function<bool(int, const Vector<Scalar>&, Scalar)> monitor;
  Matrix<Scalar> last_alpha;
  if (cfg.stop_rule == StopRule::IterateDifference) {
    monitor = [&](int, const Vector<Scalar>& z, Scalar) {
      DualVariables<Scalar> cur = DualVariables<Scalar>::zeros(I, J, N);
      cur.unpack(z);
      Matrix<Scalar> alpha = problem.coupling(cur).alpha;
      const bool done =
          last_alpha.size() == alpha.size() && (alpha - last_alpha).cwiseAbs().maxCoeff() <= cfg.tol;
      last_alpha = std::move(alpha);
      return done;
    };
  }

  const DescentResult<Scalar> run = accelerated_descent<Scalar>(evaluate, dv.pack(), opt, monitor);

  SolveResult<Scalar> result;
  dv.unpack(run.x);
  result.dual = problem.normalize(std::move(dv));
  result.coupling = problem.coupling(result.dual);

  SolveReport<Scalar>& rep = result.report;
  rep.iterations = run.iterations;
  rep.evaluations = run.evaluations;
  rep.restarts = run.restarts;
  rep.converged = run.converged;
  rep.objective = problem.objective(result.dual);
  rep.dual_value = rep.objective + problem.entropy_offset();
  rep.primal_value = problem.primal_value(result.coupling);
  rep.duality_gap = std::abs(rep.primal_value - rep.dual_value);
  rep.col_residual_inf = result.coupling.marginal_error();
  rep.mi_residual_inf = result.coupling.mean_independence_error();
  rep.grad_inf = std::max(rep.col_residual_inf, rep.mi_residual_inf);
  rep.objective_history = run.history;
  rep.restart_iterations = run.restart_iterations;
  rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (!rep.converged) throw SolveFailure<Scalar>(std::move(result));
  return result;
}

}  // namespace vqr
