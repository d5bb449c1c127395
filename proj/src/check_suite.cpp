#include <cmath>
#include <random>
#include <string>

#include "vqr/classical_qr.hpp"
#include "vqr/commands.hpp"
#include "vqr/oracles.hpp"
#include "vqr/quantile.hpp"

namespace vqr {

namespace {

struct Instance {
  Dataset<double> data;
  RankGrid<double> grid;
};

// Centered Gaussian covariates, uniform responses.
Instance random_instance(std::mt19937_64& rng, int I, Eigen::Index J, Eigen::Index N, int d) {
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> unif;
  Matrix<double> X(J, N), Y(J, d);
  for (Eigen::Index j = 0; j < J; ++j) {
    for (Eigen::Index k = 0; k < N; ++k) X(j, k) = gauss(rng);
    for (int k = 0; k < d; ++k) Y(j, k) = unif(rng);
  }
  Instance inst{center_covariates(make_dataset<double>(std::move(X), std::move(Y))), {}};
  const int n = d == 1 ? I : std::max(2, static_cast<int>(std::lround(std::sqrt(double(I)))));
  inst.grid = make_rank_grid<double>(d, n);
  return inst;
}

DualVariables<double> random_dual(std::mt19937_64& rng, const Instance& inst, double scale) {
  std::normal_distribution<double> gauss(0.0, scale);
  auto dv = DualVariables<double>::zeros(inst.grid.size(), inst.data.size(), inst.data.covariate_dim());
  for (Eigen::Index j = 0; j < dv.psi.size(); ++j) dv.psi(j) = gauss(rng);
  for (Eigen::Index k = 0; k < dv.b.size(); ++k) dv.b.data()[k] = gauss(rng);
  return dv;
}

struct Suite {
  io::Json checks = io::Json::array();
  bool passed = true;

  void add(const std::string& name, double value, double threshold, const std::string& detail = {}) {
    const bool ok = std::isfinite(value) && value <= threshold;
    checks.push_back({{"name", name}, {"passed", ok}, {"value", value}, {"threshold", threshold}, {"detail", detail}});
    passed = passed && ok;
  }

  void fail(const std::string& name, const std::string& detail) {
    checks.push_back({{"name", name}, {"passed", false}, {"value", nullptr}, {"threshold", nullptr}, {"detail", detail}});
    passed = false;
  }

  template <typename Fn>
  void guard(const std::string& name, Fn&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      fail(name, e.what());
    }
  }
};

}  // namespace

io::Json run_check_suite(std::uint64_t seed, bool inject_gradient_bug, int workers) {
  Suite s;
  std::mt19937_64 rng(seed);

  // Closed-form gradient against central differences.
  auto fd_run = [&](const std::string& name, double eps, double threshold, int instances) {
    s.guard(name, [&] {
      double worst = 0.0;
      std::uniform_int_distribution<int> pick_I(2, 20), pick_J(2, 50), pick_N(0, 3), pick_d(1, 2);
      for (int r = 0; r < instances; ++r) {
        const int d = pick_d(rng);
        const Instance inst = random_instance(rng, d == 1 ? pick_I(rng) : 4, pick_J(rng), pick_N(rng), d);
        const DualVariables<double> dv = random_dual(rng, inst, 0.3);
        const DualProblem<double> problem(inst.data, inst.grid, eps, workers);
        auto unpack = [&](const Vector<double>& z) {
          DualVariables<double> cur = dv;
          cur.unpack(z);
          return cur;
        };
        const auto res = oracle::check_gradient_fd<double>(
            [&](const Vector<double>& z) { return problem.objective(unpack(z)); },
            [&](const Vector<double>& z) {
              const DualGradient<double> g = problem.gradient(unpack(z));
              Vector<double> out(z.size());
              out.head(g.psi.size()) = g.psi;
              out.tail(g.b.size()) = Eigen::Map<const Vector<double>>(g.b.data(), g.b.size());
              if (inject_gradient_bug) out *= 1.001;
              return out;
            },
            dv.pack(), 1e-5, 50, seed + static_cast<std::uint64_t>(r));
        worst = std::max(worst, res.max_rel_error);
      }
      s.add(name, worst, threshold, std::to_string(instances) + " random instances");
    });
  };
  fd_run("gradient_fd_eps_0.5", 0.5, 1e-5, 6);
  fd_run("gradient_fd_eps_0.1", 0.1, 1e-5, 4);
  fd_run("gradient_fd_eps_0.05", 0.05, 1e-4, 4);

  // Covariate-free problems reduce to entropic OT.
  for (int n : {5, 10, 20}) {
    const std::string name = "sinkhorn_equivalence_n" + std::to_string(n);
    s.guard(name, [&] {
      Instance inst = random_instance(rng, n, n, 1, 1);
      inst.data.X.setZero();
      const auto cmp = oracle::check_against_sinkhorn(inst.data, inst.grid, 0.1);
      s.add(name, cmp.deviation, 1e-6, "max entrywise coupling difference, eps=0.1");
    });
  }

  s.guard("duality_gap", [&] {
    const Instance inst = random_instance(rng, 20, 50, 2, 1);
    SolverConfig<double> cfg;
    cfg.epsilon = 0.1;
    cfg.workers = workers;
    const SolveResult<double> fit = solve(inst.data, inst.grid, cfg);
    s.add("duality_gap", fit.report.relative_gap(), 1e-6, "I=20 J=50 N=2 eps=0.1");
    s.add("feasibility", std::max(fit.report.col_residual_inf, fit.report.mi_residual_inf), 1e-6,
          "column and mean-independence residuals");
    s.add("row_sums", (fit.coupling.alpha.rowwise().sum() - inst.grid.mu).cwiseAbs().maxCoeff(), 1e-12);
  });

  s.guard("gauge_invariance", [&] {
    const Instance inst = random_instance(rng, 8, 30, 2, 1);
    const DualProblem<double> problem(inst.data, inst.grid, 0.5);
    std::normal_distribution<double> gauss;
    double worst = 0.0;
    for (int r = 0; r < 10; ++r) {
      const DualVariables<double> dv = random_dual(rng, inst, 0.5);
      const double base = problem.objective(dv);
      DualVariables<double> shifted = dv;
      shifted.psi.array() += gauss(rng);
      DualVariables<double> tilted = dv;
      Vector<double> c(inst.data.covariate_dim());
      for (Eigen::Index k = 0; k < c.size(); ++k) c(k) = gauss(rng);
      tilted.b.rowwise() += c.transpose();
      tilted.psi -= inst.data.X * c;
      worst = std::max({worst, std::abs(problem.objective(shifted) - base) / std::abs(base),
                        std::abs(problem.objective(tilted) - base) / std::abs(base)});
    }
    s.add("gauge_invariance", worst, 1e-12, "10 random (lambda, c)");
  });

  s.guard("change_of_variables", [&] {
    const Instance inst = random_instance(rng, 10, 10, 1, 1);
    const auto rep = oracle::check_equivalence_small(inst.data, inst.grid, {1.0, 0.5, 0.1, 0.05}, 10, seed);
    s.add("cov_roundtrip", rep.max_roundtrip_error, 1e-12);
    s.add("cov_objective", rep.max_objective_mismatch, 1e-12);
    s.add("cov_feasibility", std::max(rep.max_v_feasibility_error, rep.max_pi_feasibility_error), 1e-12);
    s.add("epsilon_sweep_cauchy", rep.cauchy ? 0.0 : 1.0, 0.0, "last successive difference <= first");
  });

  s.guard("covariate_free_limit", [&] {
    Instance inst = random_instance(rng, 10, 10, 1, 1);
    inst.data.X.setZero();
    const auto rep = oracle::check_equivalence_small(inst.data, inst.grid, {1.0, 0.5, 0.1, 0.05}, 2, seed);
    s.add("covariate_free_limit", rep.limit_error, rep.limit_bound, "|val(0.05) - monotone OT value|");
  });

  s.guard("qr_intercept_only", [&] {
    std::uniform_real_distribution<double> unif;
    Matrix<double> Y(201, 1);
    for (Eigen::Index j = 0; j < Y.rows(); ++j) Y(j, 0) = unif(rng);
    const Dataset<double> d = make_dataset<double>(Matrix<double>(201, 0), Y);
    QrConfig<double> cfg;
    double worst = 0.0, width = 0.0;
    for (double t : {0.1, 0.25, 0.5, 0.75, 0.9}) {
      const QrFit<double> fit = fit_qr_t(d, t, cfg);
      worst = std::max(worst, std::abs(fit.alpha - empirical_quantile<double>(d.Y.col(0), t)));
      width = fit.smoothing_width;
    }
    s.add("qr_intercept_only", worst, width, "deviation from the empirical quantile vs smoothing width");
  });

  return io::Json{{"seed", seed}, {"checks", s.checks}, {"passed", s.passed}};
}

}  // namespace vqr
