#include <doctest.h>

#include "support.hpp"
#include "vqr/oracles.hpp"
#include "vqr/rvqr.hpp"

using namespace vqr;
using vqr::test::Mat;
using vqr::test::Problem;
using vqr::test::Vec;

namespace {

Problem constant_x_problem(std::mt19937_64& rng, int n) {
  Problem p;
  p.data = center_covariates(make_dataset<double>(Mat::Constant(n, 1, 3.0), test::uniform(rng, n, 1)));
  p.grid = make_rank_grid<double>(1, n);
  return p;
}

}  // namespace

TEST_CASE("solver agrees with Sinkhorn when covariates are constant") {
  std::mt19937_64 rng(1);
  for (int n : {5, 10, 20}) {
    for (double eps : {0.1, 1.0}) {
      const Problem p = constant_x_problem(rng, n);
      CHECK(oracle::check_against_sinkhorn(p.data, p.grid, eps).deviation <= 1e-6);
    }
  }
}

TEST_CASE("single cell plan") {
  const Dataset<double> d = make_dataset<double>(Mat(1, 0), Mat::Constant(1, 1, 2.0));
  const RankGrid<double> g = test::custom_grid(Mat::Constant(1, 1, 0.5), Vec::Ones(1));
  const SolveResult<double> r = solve(d, g, SolverConfig<double>{});
  CHECK(r.report.converged);
  CHECK(r.report.iterations <= 2);
  CHECK(r.coupling.alpha(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(std::abs(oracle::check_against_sinkhorn(d, g, 0.1).deviation) == 0.0);
}

TEST_CASE("converged solve: gap, feasibility and gauge") {
  std::mt19937_64 rng(2);
  const Problem p = test::random_problem(rng, 20, 50, 2, 1);
  SolverConfig<double> cfg;
  cfg.epsilon = 0.1;
  const SolveResult<double> r = solve(p.data, p.grid, cfg);
  const SolveReport<double>& rep = r.report;
  CHECK(rep.converged);
  CHECK(rep.duality_gap <= std::max(1e-8, 1e-6 * std::abs(rep.dual_value)));
  CHECK(rep.relative_gap() <= 1e-6);
  CHECK(rep.grad_inf <= cfg.tol);
  CHECK(r.coupling.col_residual.cwiseAbs().maxCoeff() <= cfg.tol);
  CHECK(r.coupling.mi_residual.cwiseAbs().maxCoeff() <= cfg.tol);
  CHECK(r.coupling.row_residual.cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(r.dual.b.row(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(std::abs(theta(r.dual, p.data, p.grid, 0.1).array().exp().sum() - 1.0) <= 1e-8);

  // Independent recomputation of the reported quantities.
  const Coupling<double> c = extract_coupling(r.dual, p.data, p.grid, 0.1);
  double h = 0.0;
  for (double m : p.grid.mu) h -= m * std::log(m);
  const double dual = dual_objective(r.dual, p.data, p.grid, 0.1) + 0.1 * h;
  CHECK(std::abs(primal_value(c, p.grid, p.data, 0.1) - dual) <= 1e-6 * std::abs(dual));
  CHECK(std::abs(rep.dual_value - dual) <= 1e-12 * std::abs(dual));
}

TEST_CASE("solver configuration errors") {
  std::mt19937_64 rng(3);
  const Problem p = test::random_problem(rng, 4, 8, 1, 1);
  SolverConfig<double> cfg;
  for (double eps : {0.0, -1.0}) {
    cfg.epsilon = eps;
    try {
      solve(p.data, p.grid, cfg);
      FAIL("expected a config error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Config);
    }
  }
  cfg = {};
  cfg.max_iter = 0;
  CHECK_THROWS_AS(solve(p.data, p.grid, cfg), Error);
  const Dataset<double> raw = make_dataset<double>(test::gaussian(rng, 8, 1).array() + 5.0, test::uniform(rng, 8, 1));
  CHECK_THROWS_AS(solve(raw, p.grid, SolverConfig<double>{}), Error);
  CHECK_THROWS_AS(solve(p.data, make_rank_grid<double>(2, 2), SolverConfig<double>{}), Error);
}

TEST_CASE("iteration budget exhaustion carries the last iterate") {
  std::mt19937_64 rng(4);
  const Problem p = test::random_problem(rng, 10, 30, 2, 1);
  SolverConfig<double> cfg;
  cfg.max_iter = 3;
  try {
    solve(p.data, p.grid, cfg);
    FAIL("expected non-convergence");
  } catch (const SolveFailure<double>& e) {
    CHECK(e.kind() == ErrorKind::NonConvergence);
    CHECK_FALSE(e.result().report.converged);
    CHECK(e.result().report.iterations == 3);
    CHECK(e.result().dual.psi.size() == 30);
    CHECK(e.result().report.grad_inf > cfg.tol);
  }
}

TEST_CASE("objective is nonincreasing between restarts") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 5; ++rep) {
    const Problem p = test::random_problem(rng, 8, 25, 2, 1 + rep % 2);
    SolverConfig<double> cfg;
    cfg.epsilon = 0.1;
    cfg.record_history = true;
    const SolveResult<double> r = solve(p.data, p.grid, cfg);
    const auto& h = r.report.objective_history;
    REQUIRE(h.size() >= 2);
    for (std::size_t k = 1; k < h.size(); ++k)
      CHECK(h[k] <= h[k - 1] + 16 * std::numeric_limits<double>::epsilon() * std::abs(h[k - 1]));
  }
}

TEST_CASE("alternative step, restart and stopping modes converge") {
  std::mt19937_64 rng(6);
  const Problem p = test::random_problem(rng, 6, 20, 1, 1);
  SolverConfig<double> base;
  base.epsilon = 0.2;
  const SolveResult<double> ref = solve(p.data, p.grid, base);

  SUBCASE("fixed step") {
    SolverConfig<double> cfg = base;
    cfg.step_mode = StepMode::Fixed;
    const SolveResult<double> r = solve(p.data, p.grid, cfg);
    CHECK((r.coupling.alpha - ref.coupling.alpha).cwiseAbs().maxCoeff() <= 1e-5);
  }
  SUBCASE("no restart") {
    SolverConfig<double> cfg = base;
    cfg.restart = RestartMode::None;
    const SolveResult<double> r = solve(p.data, p.grid, cfg);
    CHECK(r.report.grad_inf <= cfg.tol);
  }
  SUBCASE("iterate difference") {
    SolverConfig<double> cfg = base;
    cfg.stop_rule = StopRule::IterateDifference;
    cfg.tol = 1e-9;
    const SolveResult<double> r = solve(p.data, p.grid, cfg);
    CHECK(r.report.converged);
    CHECK((r.coupling.alpha - ref.coupling.alpha).cwiseAbs().maxCoeff() <= 1e-5);
  }
  SUBCASE("no preconditioning") {
    SolverConfig<double> cfg = base;
    cfg.precondition = false;
    const SolveResult<double> r = solve(p.data, p.grid, cfg);
    CHECK(r.report.grad_inf <= cfg.tol);
    CHECK((r.coupling.alpha - ref.coupling.alpha).cwiseAbs().maxCoeff() <= 1e-5);
  }
}

TEST_CASE("solve is deterministic for a fixed worker count") {
  std::mt19937_64 rng(7);
  const Problem p = test::random_problem(rng, 10, 40, 2, 2);
  SolverConfig<double> cfg;
  cfg.workers = 3;
  const SolveResult<double> a = solve(p.data, p.grid, cfg), b = solve(p.data, p.grid, cfg);
  CHECK(a.dual.psi == b.dual.psi);
  CHECK(a.dual.b == b.dual.b);
  CHECK(a.report.iterations == b.report.iterations);
  cfg.workers = 1;
  const SolveResult<double> s = solve(p.data, p.grid, cfg);
  CHECK((s.coupling.alpha - a.coupling.alpha).cwiseAbs().maxCoeff() <= 1e-5);
}

TEST_CASE("responses independent of covariates give small b") {
  std::mt19937_64 rng(8);
  const Eigen::Index J = 400;
  const Dataset<double> d =
      center_covariates(make_dataset<double>(test::uniform(rng, J, 1), test::uniform(rng, J, 1)));
  SolverConfig<double> cfg;
  const SolveResult<double> r = solve(d, make_rank_grid<double>(1, 10), cfg);
  // The sampling fluctuation of the slope is of order 1/sqrt(J) per unit range.
  CHECK(r.dual.b.cwiseAbs().maxCoeff() <= 5.0 / std::sqrt(double(J)));
}
