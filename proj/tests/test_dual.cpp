#include <doctest.h>

#include "support.hpp"
#include "vqr/dual.hpp"
#include "vqr/oracles.hpp"

using namespace vqr;
using vqr::test::Mat;
using vqr::test::Problem;
using vqr::test::Vec;

namespace {

// I = J = 1 with u = 0.5, y = 2 and no covariates.
Problem single_atom() {
  return {make_dataset<double>(Mat(1, 0), Mat::Constant(1, 1, 2.0)),
          test::custom_grid(Mat::Constant(1, 1, 0.5), Vec::Ones(1))};
}

// Random nodes in (0,1]^d with random weights, so that I need not be n^d.
Problem scattered_problem(std::mt19937_64& rng, Eigen::Index I, Eigen::Index J, Eigen::Index N, Eigen::Index d) {
  Problem p;
  p.data = center_covariates(make_dataset<double>(test::gaussian(rng, J, N), test::uniform(rng, J, d)));
  p.grid = test::custom_grid(test::uniform(rng, I, d), test::uniform(rng, I, 1).array() + 0.1);
  return p;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST_CASE("theta examples") {
  std::mt19937_64 rng(1);
  const Problem p = test::random_problem(rng, 4, 6, 2, 1);
  const double eps = 0.3;
  auto dv = DualVariables<double>::zeros(4, 6, 2);
  const Mat t0 = theta(dv, p.data, p.grid, eps);
  CHECK((t0 - p.grid.U * p.data.Y.transpose() / eps).cwiseAbs().maxCoeff() <= 1e-14);

  dv = test::random_dual(rng, p, 1.0);
  const Mat before = theta(dv, p.data, p.grid, eps);
  dv.psi.array() += eps;
  CHECK((theta(dv, p.data, p.grid, eps) - (before.array() - 1.0).matrix()).cwiseAbs().maxCoeff() <= 1e-12);

  const Problem one = single_atom();
  auto d1 = DualVariables<double>::zeros(1, 1, 0);
  d1.psi(0) = 1.0;
  CHECK(std::abs(theta(d1, one.data, one.grid, 0.1)(0, 0)) <= 1e-15);
}

TEST_CASE("dual objective examples") {
  const Problem one = single_atom();
  for (double psi : {-3.0, 0.0, 1.0, 40.0}) {
    auto dv = DualVariables<double>::zeros(1, 1, 0);
    dv.psi(0) = psi;
    CHECK(dual_objective(dv, one.data, one.grid, 0.1) == doctest::Approx(1.0).epsilon(1e-13));
  }

  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 10; ++rep) {
    const Problem p = test::random_problem(rng, 5, 8, 2, 1);
    auto dv = test::random_dual(rng, p, 0.5);
    const double base = dual_objective(dv, p.data, p.grid, 1.0);
    CHECK(rel(base, test::naive_dual(dv, p, 1.0)) <= 1e-12);
    std::normal_distribution<double> g(0.0, 3.0);
    dv.psi.array() += g(rng);
    CHECK(rel(dual_objective(dv, p.data, p.grid, 1.0), base) <= 1e-12);
  }
}

TEST_CASE("dual objective stays finite where naive exponentials overflow") {
  std::mt19937_64 rng(3);
  Problem p = test::random_problem(rng, 6, 10, 1, 1);
  p.data.Y *= 1000.0;
  const auto dv = DualVariables<double>::zeros(6, 10, 1);
  CHECK_FALSE(std::isfinite(test::naive_dual(dv, p, 0.05)));
  CHECK(std::isfinite(dual_objective(dv, p.data, p.grid, 0.05)));
  auto bad = dv;
  bad.psi(3) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(dual_objective(bad, p.data, p.grid, 0.05), Error);
  CHECK_THROWS_AS(DualProblem<double>(p.data, p.grid, 0.0), Error);
}

TEST_CASE("dual gradient under a uniform softmax") {
  Mat Y = Mat::Constant(5, 1, 0.7);
  Dataset<double> d = make_dataset<double>(Mat::Zero(5, 1), Y);
  d.nu << 0.1, 0.3, 0.2, 0.15, 0.25;
  const RankGrid<double> g = make_rank_grid<double>(1, 3);
  const auto grad = dual_gradient(DualVariables<double>::zeros(3, 5, 1), d, g, 0.2);
  for (Eigen::Index j = 0; j < 5; ++j) CHECK(std::abs(grad.psi(j) - (d.nu(j) - 0.2)) <= 1e-15);
  CHECK(grad.b.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("dual gradient against central finite differences") {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 5; ++rep) {
    const Problem p = scattered_problem(rng, 5, 7, 2, 2);
    const auto dv = test::random_dual(rng, p, 0.5);
    const DualProblem<double> problem(p.data, p.grid, 0.5);
    const auto grad = problem.gradient(dv);
    // Independent central differences over every coordinate.
    double worst = 0.0;
    const double h = 1e-5;
    const double scale = grad.inf_norm();
    for (Eigen::Index j = 0; j < 7; ++j) {
      auto a = dv, b = dv;
      a.psi(j) += h, b.psi(j) -= h;
      const double fd = (problem.objective(a) - problem.objective(b)) / (2 * h);
      worst = std::max(worst, std::abs(fd - grad.psi(j)) / std::max(std::abs(grad.psi(j)), 1e-3 * scale));
    }
    for (Eigen::Index i = 0; i < 5; ++i) {
      for (Eigen::Index k = 0; k < 2; ++k) {
        auto a = dv, b = dv;
        a.b(i, k) += h, b.b(i, k) -= h;
        const double fd = (problem.objective(a) - problem.objective(b)) / (2 * h);
        worst = std::max(worst, std::abs(fd - grad.b(i, k)) / std::max(std::abs(grad.b(i, k)), 1e-3 * scale));
      }
    }
    CHECK(worst <= 1e-5);
    CHECK(oracle::check_gradient_fd(dv, p.data, p.grid, 0.5, 1e-5).max_rel_error <= 1e-5);
  }
}

TEST_CASE("psi gradient sums to zero and matches the coupling residuals") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    const Problem p = test::random_problem(rng, 4, 9, 2, 2);
    const auto dv = test::random_dual(rng, p, 2.0);
    const double eps = 0.1 + 0.2 * rep;
    const auto grad = dual_gradient(dv, p.data, p.grid, eps);
    CHECK(std::abs(grad.psi.sum()) <= 1e-14);
    const Coupling<double> c = extract_coupling(dv, p.data, p.grid, eps);
    CHECK((grad.psi + c.col_residual).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((grad.b + c.mi_residual).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((c.alpha.colwise().sum().transpose() - p.data.nu - c.col_residual).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK((c.alpha * p.data.X - c.mi_residual).cwiseAbs().maxCoeff() <= 1e-15);
  }
}

TEST_CASE("gauge invariance") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int rep = 0; rep < 10; ++rep) {
    const Problem p = test::random_problem(rng, 5, 12, 3, 1);
    const auto dv = test::random_dual(rng, p, 1.0);
    const double base = dual_objective(dv, p.data, p.grid, 0.2);
    auto shifted = dv;
    shifted.psi.array() += g(rng);
    CHECK(rel(dual_objective(shifted, p.data, p.grid, 0.2), base) <= 1e-12);
    Vec c(3);
    for (auto& v : c) v = g(rng);
    auto moved = dv;
    moved.b.rowwise() += c.transpose();
    moved.psi -= p.data.X * c;
    CHECK(rel(dual_objective(moved, p.data, p.grid, 0.2), base) <= 1e-12);
  }
}

TEST_CASE("convexity along segments") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 10; ++rep) {
    const Problem p = test::random_problem(rng, 4, 8, 2, 1);
    const auto a = test::random_dual(rng, p, 3.0), b = test::random_dual(rng, p, 3.0);
    const DualProblem<double> problem(p.data, p.grid, 0.15);
    const double fa = problem.objective(a), fb = problem.objective(b);
    for (int k = 0; k <= 10; ++k) {
      const double s = k / 10.0;
      auto m = a;
      m.psi = (1 - s) * a.psi + s * b.psi;
      m.b = (1 - s) * a.b + s * b.b;
      CHECK(problem.objective(m) <= (1 - s) * fa + s * fb + 1e-12 * std::max(1.0, std::abs(fa) + std::abs(fb)));
    }
  }
}

TEST_CASE("normalize") {
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 10; ++rep) {
    const Problem p = test::random_problem(rng, 5, 10, 2, 1);
    const double eps = 0.25;
    auto dv = test::random_dual(rng, p, 1.0);
    dv.b.row(0) << 1.5, -0.5;
    const auto n1 = normalize(dv, p.data, p.grid, eps);
    CHECK(n1.b.row(0).cwiseAbs().maxCoeff() == 0.0);
    CHECK(n1.gauge.normalized);
    CHECK(rel(dual_objective(n1, p.data, p.grid, eps), dual_objective(dv, p.data, p.grid, eps)) <= 1e-12);
    CHECK(std::abs(theta(n1, p.data, p.grid, eps).array().exp().sum() - 1.0) <= 1e-8);
    const auto n2 = normalize(n1, p.data, p.grid, eps);
    CHECK((n2.psi - n1.psi).cwiseAbs().maxCoeff() <= 1e-14 * std::max(1.0, n1.psi.cwiseAbs().maxCoeff()));
    CHECK((n2.b - n1.b).cwiseAbs().maxCoeff() <= 1e-14);
    // The coupling is a gauge invariant.
    CHECK((extract_coupling(n1, p.data, p.grid, eps).alpha - extract_coupling(dv, p.data, p.grid, eps).alpha)
              .cwiseAbs()
              .maxCoeff() <= 1e-12);
  }
  std::mt19937_64 r2(9);
  const Dataset<double> raw = make_dataset<double>(test::gaussian(r2, 6, 1).array() + 4.0, test::uniform(r2, 6, 1));
  CHECK_THROWS_AS(normalize(DualVariables<double>::zeros(3, 6, 1), raw, make_rank_grid<double>(1, 3), 0.1), Error);
}

TEST_CASE("coupling extraction") {
  SUBCASE("uniform softmax") {
    const Dataset<double> d = make_dataset<double>(Mat::Zero(4, 1), Mat::Constant(4, 1, 0.0));
    const RankGrid<double> g = make_rank_grid<double>(1, 3);
    const Coupling<double> c = extract_coupling(DualVariables<double>::zeros(3, 4, 1), d, g, 0.1);
    CHECK((c.alpha.array() - 1.0 / 12).abs().maxCoeff() <= 1e-16);
  }
  SUBCASE("large epsilon flattens rows") {
    std::mt19937_64 rng(10);
    const Problem p = test::random_problem(rng, 4, 9, 1, 1);
    const Coupling<double> c = extract_coupling(DualVariables<double>::zeros(4, 9, 1), p.data, p.grid, 1e8);
    CHECK((c.alpha - p.grid.mu * Vec::Constant(9, 1.0 / 9).transpose()).cwiseAbs().maxCoeff() <= 1e-9);
  }
  SUBCASE("rows sum to mu and entries are positive") {
    std::mt19937_64 rng(11);
    const Problem p = test::random_problem(rng, 6, 15, 2, 2);
    const Coupling<double> c = extract_coupling(test::random_dual(rng, p, 5.0), p.data, p.grid, 0.05);
    CHECK((c.alpha.array() >= 0).all());
    CHECK(c.row_residual.cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((c.alpha.rowwise().sum() - p.grid.mu).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("primal value examples") {
  const Problem one = single_atom();
  Coupling<double> c;
  c.alpha = Mat::Ones(1, 1);
  CHECK(primal_value(c, one.grid, one.data, 0.1) == doctest::Approx(1.0).epsilon(1e-15));

  const Dataset<double> zero = make_dataset<double>(Mat(2, 0), Mat::Zero(2, 1));
  c.alpha = Mat::Constant(2, 2, 0.25);
  CHECK(primal_value(c, make_rank_grid<double>(1, 2), zero, 1.0) == doctest::Approx(std::log(4.0)).epsilon(1e-14));

  c.alpha << 0.5, 0.0, 0.0, 0.5;
  CHECK(primal_value(c, make_rank_grid<double>(1, 2), zero, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("lagrangian identity at arbitrary potentials") {
  // primal(alpha) - <psi, col residual> - <b, mi residual> = J + eps H(mu).
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 5; ++rep) {
    const Problem p = test::random_problem(rng, 5, 8, 1, 1);
    const DualProblem<double> problem(p.data, p.grid, 0.3);
    const auto dv = test::random_dual(rng, p, 1.0);
    const Coupling<double> c = problem.coupling(dv);
    const double lagrangian = problem.primal_value(c) - dv.psi.dot(c.col_residual) -
                              (dv.b.cwiseProduct(c.mi_residual)).sum();
    CHECK(rel(lagrangian, problem.objective(dv) + problem.entropy_offset()) <= 1e-12);
  }
}

TEST_CASE("hard and soft potentials") {
  const Problem one = single_atom();
  auto dv = DualVariables<double>::zeros(1, 1, 0);
  dv.psi(0) = 0.3;
  CHECK(hard_potential(dv, one.data, one.grid)(0) ==
        doctest::Approx(soft_potential(dv, one.data, one.grid, 0.2)(0)).epsilon(1e-15));

  const Dataset<double> twin = make_dataset<double>(Mat(2, 0), Mat::Constant(2, 1, 1.0));
  const RankGrid<double> g = test::custom_grid(Mat::Constant(1, 1, 0.5), Vec::Ones(1));
  const auto d2 = DualVariables<double>::zeros(1, 2, 0);
  CHECK(soft_potential(d2, twin, g, 1.0)(0) - hard_potential(d2, twin, g)(0) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-14));

  std::mt19937_64 rng(13);
  for (int rep = 0; rep < 20; ++rep) {
    const Problem p = test::random_problem(rng, 5, 11, 2, 2);
    const auto v = test::random_dual(rng, p, 2.0);
    const double eps = 0.05 + 0.1 * rep;
    const Vec soft = soft_potential(v, p.data, p.grid, eps), hard = hard_potential(v, p.data, p.grid);
    CHECK(((soft - hard).array() >= -1e-12).all());
    CHECK(((soft - hard).array() <= eps * std::log(11.0) + 1e-12).all());
  }
}

TEST_CASE("evaluation is reproducible for a fixed worker count") {
  std::mt19937_64 rng(14);
  const Problem p = test::random_problem(rng, 10, 40, 2, 2);
  const auto dv = test::random_dual(rng, p, 1.0);
  const DualProblem<double> serial(p.data, p.grid, 0.1, 1), parallel(p.data, p.grid, 0.1, 4);
  DualGradient<double> g1, g2, g3;
  const double f1 = serial.evaluate(dv, g1), f2 = parallel.evaluate(dv, g2), f3 = parallel.evaluate(dv, g3);
  CHECK(f2 == f3);
  CHECK(g2.psi == g3.psi);
  CHECK(g2.b == g3.b);
  CHECK(rel(f1, f2) <= 1e-14);
  CHECK((g1.psi - g2.psi).cwiseAbs().maxCoeff() <= 1e-15);
}
