#pragma once

// Subcommands behind the `vqr` executable. Each returns a process exit code:
// 0 success, 1 I/O, 2 non-convergence, 3 configuration, 4 check failure.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vqr/error.hpp"
#include "vqr/io.hpp"
#include "vqr/rvqr.hpp"
#include "vqr/synth.hpp"

namespace vqr {

enum ExitCode : int { kOk = 0, kIoError = 1, kNonConvergence = 2, kConfigError = 3, kCheckFailure = 4 };

int exit_code(ErrorKind kind);

struct RunConfig {
  std::string data;
  std::string model;
  std::string out;
  std::vector<std::string> x_cols;
  std::vector<std::string> y_cols;
  std::optional<std::string> weight_column;
  bool intercept = true;
  bool scale_y = false;
  int grid = 20;
  double epsilon = 0.1;
  std::vector<double> epsilons{0.05, 0.1, 0.5, 1.0};
  double tol = 1e-6;
  int max_iter = 50000;
  PhiMode phi_mode = PhiMode::Soft;
  std::optional<double> eta;
  std::vector<std::string> probes{"q10", "q30", "q60", "q90"};
  std::vector<int> ranks;  // 1-based; empty means all
  std::string method = "ball";  // quantiles: ball | potential
  std::uint64_t seed = 7;
  int workers = 1;
  std::string coupling_out;
  std::string truth_out;
  // synth
  Eigen::Index n_obs = 2000;
  int dim = 1;
  int covariates = 1;
  CovariateLaw x_law = CovariateLaw::Uniform;
  bool beta_zero = false;
  // check
  bool inject_gradient_bug = false;

  void validate() const;
  SolverConfig<double> solver(double eps) const;
};

/// Probe syntax: "q10" (covariate quantile level, per column) or raw values,
/// with components separated by ':'.
std::vector<Vector<double>> parse_probes(const std::vector<std::string>& specs, const Dataset<double>& d);

/// Relative L2 distance ||a - b|| / ||a||.
double relative_l2(const Vector<double>& a, const Vector<double>& b);

/// Runs the oracle checks; the returned JSON has a "checks" array and "passed".
io::Json run_check_suite(std::uint64_t seed, bool inject_gradient_bug = false, int workers = 1);

int cmd_fit(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_quantiles(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_compare_qr(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_check(const RunConfig& cfg, std::ostream& out, std::ostream& err);

}  // namespace vqr
