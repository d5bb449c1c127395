#pragma once

// Accelerated (Nesterov / FISTA-style) gradient descent for smooth convex
// objectives, with Armijo backtracking and function-value restart.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace vqr {

enum class StepMode { Fixed, Backtracking };
enum class RestartMode { None, FunctionValue };

template <typename Scalar>
struct DescentOptions {
  int max_iter = 50000;
  Scalar tol = Scalar(1e-6);  // on the gradient infinity norm
  StepMode step_mode = StepMode::Backtracking;
  RestartMode restart = RestartMode::FunctionValue;
  Scalar armijo = Scalar(1e-4);
  Scalar initial_step = Scalar(1);
  Scalar step_growth = Scalar(1.1);
  // Diagonal metric: steps are taken along -grad ./ metric. Empty means identity.
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> metric;
  bool record_history = false;
  // Optional extra condition checked once the gradient test passes.
  std::function<bool(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>&)> certify;
};

template <typename Scalar>
struct DescentResult {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> x;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> gradient;
  Scalar value = Scalar(0);
  Scalar grad_inf = std::numeric_limits<Scalar>::infinity();
  int iterations = 0;
  int evaluations = 0;
  int restarts = 0;
  bool converged = false;
  bool stalled = false;
  Scalar final_step = Scalar(0);
  // Objective at the accepted iterates, one entry per accepted step.
  std::vector<Scalar> history;
  // Iterations at which momentum was reset.
  std::vector<int> restart_iterations;
};

/// Minimizes a smooth convex function.
///
/// `evaluate(z, grad)` returns f(z) and writes the gradient into `grad`.
/// `monitor(iteration, x, grad_inf)`, when set, may request early termination
/// (counted as convergence); it is called after every accepted step.
template <typename Scalar>
DescentResult<Scalar> accelerated_descent(
    const std::function<Scalar(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>&,
                               Eigen::Matrix<Scalar, Eigen::Dynamic, 1>&)>& evaluate,
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> x0, const DescentOptions<Scalar>& opt,
    const std::function<bool(int, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>&, Scalar)>&
        monitor = {}) {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Eigen::Index n = x0.size();
  const bool has_metric = opt.metric.size() == n;

  auto direction = [&](const Vec& g) -> Vec {
    return has_metric ? Vec(g.cwiseQuotient(opt.metric)) : g;
  };
  auto inf_norm = [](const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : Scalar(0); };

  DescentResult<Scalar> out;
  Vec x = std::move(x0);
  Vec gx(n);
  Scalar fx = evaluate(x, gx);
  ++out.evaluations;
  if (opt.record_history) out.history.push_back(fx);

  Vec x_prev = x;
  Scalar t = Scalar(1);
  Scalar step = opt.initial_step;
  Vec y(n), gy(n), x_new(n), g_new(n);

  // Without restarts momentum is only safe under the quadratic upper bound
  // (decrease factor 1/2) and a step that never grows.
  const bool guarded = opt.restart == RestartMode::FunctionValue;
  const Scalar armijo = guarded ? opt.armijo : std::max(opt.armijo, Scalar(0.5));
  const Scalar growth = guarded ? opt.step_growth : Scalar(1);

  auto rounding = [](Scalar f) { return Scalar(16) * std::numeric_limits<Scalar>::epsilon() * std::abs(f); };

  auto metric_sq = [&](const Vec& g) { return g.dot(direction(g)); };

  auto stationary = [&](const Vec& z, Scalar g_inf) {
    return g_inf <= opt.tol && (!opt.certify || opt.certify(z));
  };

  out.grad_inf = inf_norm(gx);
  if (stationary(x, out.grad_inf)) out.converged = true;

  int k = 0;
  bool momentum_reset = true;
  while (!out.converged && k < opt.max_iter) {
    ++k;
    const Scalar t_next = (Scalar(1) + std::sqrt(Scalar(1) + Scalar(4) * t * t)) / Scalar(2);
    const Scalar beta = momentum_reset ? Scalar(0) : (t - Scalar(1)) / t_next;

    Scalar fy;
    if (beta == Scalar(0)) {
      y = x;
      fy = fx;
      gy = gx;
    } else {
      y = x + beta * (x - x_prev);
      fy = evaluate(y, gy);
      ++out.evaluations;
      const Scalar gy_inf = inf_norm(gy);
      if (std::isfinite(fy) && fy <= fx + rounding(fx) && stationary(y, gy_inf)) {
        x = y;
        fx = fy;
        gx = gy;
        out.grad_inf = gy_inf;
        out.converged = true;
        if (opt.record_history) out.history.push_back(fx);
        break;
      }
    }

    const Vec dir = direction(gy);
    const Scalar slope = gy.dot(dir);
    Scalar f_new = std::numeric_limits<Scalar>::infinity();
    bool accepted = false;

    if (opt.step_mode == StepMode::Backtracking) {
      Scalar s = step * growth;
      for (int halving = 0; halving < 80; ++halving) {
        x_new = y - s * dir;
        f_new = evaluate(x_new, g_new);
        ++out.evaluations;
        if (std::isfinite(f_new) && f_new <= fy - armijo * s * slope && fy - f_new > rounding(fy)) {
          accepted = true;
          break;
        }
        // Near the optimum the decrease drops below the resolution of f; fall
        // back to the derivative form of sufficient decrease (Hager-Zhang),
        // and since f no longer says anything, ask the gradient not to grow.
        if (std::isfinite(f_new) && f_new <= fy + rounding(fy) &&
            g_new.dot(dir) >= -(Scalar(1) - Scalar(2) * armijo) * slope && metric_sq(g_new) <= slope) {
          accepted = true;
          break;
        }
        s /= Scalar(2);
      }
      step = s;
      if (!accepted) {
        out.stalled = true;
        break;
      }
    } else {
      x_new = y - step * dir;
      f_new = evaluate(x_new, g_new);
      ++out.evaluations;
      accepted = std::isfinite(f_new);
    }

    const bool flat = f_new >= fx - rounding(fx);
    const bool increased =
        !accepted || f_new > fx + rounding(fx) || (flat && metric_sq(g_new) > metric_sq(gx));
    if (increased && (opt.restart == RestartMode::FunctionValue || !accepted)) {
      // Reject and retry from x without momentum. A rejected momentum-free
      // step means the step is too long for this region.
      if (momentum_reset) step /= Scalar(2);
      momentum_reset = true;
      t = Scalar(1);
      x_prev = x;
      ++out.restarts;
      out.restart_iterations.push_back(k);
      if (step < std::numeric_limits<Scalar>::min()) {
        out.stalled = true;
        break;
      }
      continue;
    }

    x_prev = x;
    x = x_new;
    fx = f_new;
    gx = g_new;
    t = t_next;
    momentum_reset = false;
    if (opt.record_history) out.history.push_back(fx);

    out.grad_inf = inf_norm(gx);
    if (stationary(x, out.grad_inf)) out.converged = true;
    if (!out.converged && monitor && monitor(k, x, out.grad_inf)) out.converged = true;
  }

  out.iterations = k;
  out.x = std::move(x);
  out.gradient = std::move(gx);
  out.value = fx;
  out.grad_inf = inf_norm(out.gradient);
  out.final_step = step;
  return out;
}

}  // namespace vqr
