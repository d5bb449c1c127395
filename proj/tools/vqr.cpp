#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>

#include "vqr/commands.hpp"

namespace {

void add_data_options(CLI::App* cmd, vqr::RunConfig& cfg) {
  cmd->add_option("--data", cfg.data, "Input CSV with a header row");
  cmd->add_option("--x-cols", cfg.x_cols, "Covariate columns (names or 1-based numbers)")->delimiter(',');
  cmd->add_option("--y-cols", cfg.y_cols, "Response columns (names or 1-based numbers)")->delimiter(',');
  cmd->add_option("--weight-col", cfg.weight_column, "Optional observation weight column");
  cmd->add_flag("--scale-y", cfg.scale_y, "Min-max scale responses to [0,1] before fitting");
}

void add_solver_options(CLI::App* cmd, vqr::RunConfig& cfg) {
  cmd->add_option("--grid", cfg.grid, "Rank grid nodes per axis")->capture_default_str();
  cmd->add_option("--tol", cfg.tol, "Gradient tolerance")->capture_default_str();
  cmd->add_option("--max-iter", cfg.max_iter, "Iteration cap")->capture_default_str();
  cmd->add_option("--workers", cfg.workers, "Threads for the row-wise gradient work")->capture_default_str();
}

const std::map<std::string, vqr::PhiMode> kPhiModes{{"soft", vqr::PhiMode::Soft}, {"hard", vqr::PhiMode::Hard}};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Regularized vector quantile regression"};
  app.require_subcommand(1);
  vqr::RunConfig cfg;

  auto* fit = app.add_subcommand("fit", "Fit a model and write it as JSON");
  add_data_options(fit, cfg);
  add_solver_options(fit, cfg);
  fit->add_option("--epsilon", cfg.epsilon, "Entropic regularization strength")->capture_default_str();
  fit->add_option("--phi-mode", cfg.phi_mode, "Potential used for reporting: soft or hard")
      ->transform(CLI::CheckedTransformer(kPhiModes, CLI::ignore_case));
  fit->add_option("--out", cfg.out, "Model JSON path (default model.json)");
  fit->add_option("--coupling-out", cfg.coupling_out, "Optional CSV of (i, j, alpha) triples");
  fit->add_option("--seed", cfg.seed, "Seed (fits are deterministic; recorded for reproducibility)");

  auto* quant = app.add_subcommand("quantiles", "Conditional quantile table from a fitted model");
  quant->add_option("--model", cfg.model, "Model JSON written by fit")->required();
  quant->add_option("--data", cfg.data, "Override the data path recorded in the model");
  quant->add_option("--probes", cfg.probes, "Covariate probes: q10 style levels or raw values (a:b for N>1)")
      ->delimiter(',');
  quant->add_option("--ranks", cfg.ranks, "1-based rank indices (default all)")->delimiter(',');
  quant->add_option("--eta", cfg.eta, "Ball radius (default: distance to the 5% nearest covariate)");
  quant->add_option("--method", cfg.method, "ball (coupling means) or potential (potential gradients)")
      ->check(CLI::IsMember({"ball", "potential"}));
  quant->add_option("--phi-mode", cfg.phi_mode, "Potential for --method potential: soft or hard")
      ->transform(CLI::CheckedTransformer(kPhiModes, CLI::ignore_case));
  quant->add_option("--out", cfg.out, "Output CSV (or .json); default stdout");

  auto* cmp = app.add_subcommand("compare-qr", "Relative error between VQR and classical QR across epsilons");
  add_data_options(cmp, cfg);
  add_solver_options(cmp, cfg);
  cmp->add_option("--epsilons", cfg.epsilons, "Regularization strengths")->delimiter(',');
  cmp->add_option("--probes", cfg.probes, "Covariate probes")->delimiter(',');
  cmp->add_option("--phi-mode", cfg.phi_mode, "Potential compared against QR: soft or hard")
      ->transform(CLI::CheckedTransformer(kPhiModes, CLI::ignore_case));
  cmp->add_option("--out", cfg.out, "Output CSV; default stdout");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with known quantiles");
  synth->add_option("--n-obs", cfg.n_obs, "Sample size")->capture_default_str();
  synth->add_option("--dim", cfg.dim, "Response dimension (1 or 2)")->capture_default_str();
  synth->add_option("--covariates", cfg.covariates, "Number of covariates")->capture_default_str();
  synth->add_option("--x-law", cfg.x_law, "Covariate law: uniform or normal")
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, vqr::CovariateLaw>{{"uniform", vqr::CovariateLaw::Uniform},
                                                   {"normal", vqr::CovariateLaw::Normal}},
          CLI::ignore_case));
  synth->add_flag("--beta-zero", cfg.beta_zero, "Responses independent of covariates");
  synth->add_option("--seed", cfg.seed, "Random seed")->capture_default_str();
  synth->add_option("--grid", cfg.grid, "Grid nodes per axis for the truth table")->capture_default_str();
  synth->add_option("--probes", cfg.probes, "Covariate probes for the truth table")->delimiter(',');
  synth->add_option("--out", cfg.out, "Dataset CSV; default stdout");
  synth->add_option("--truth-out", cfg.truth_out, "Truth table CSV (default <out>_truth.csv)");

  auto* check = app.add_subcommand("check", "Run the numerical oracle suite");
  check->add_option("--seed", cfg.seed, "Random seed")->capture_default_str();
  check->add_option("--workers", cfg.workers, "Threads")->capture_default_str();
  check->add_option("--out", cfg.out, "JSON report path; default stdout");
  check->add_flag("--inject-gradient-bug", cfg.inject_gradient_bug)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return vqr::kConfigError;
  }

  if (*fit) return vqr::cmd_fit(cfg, std::cout, std::cerr);
  if (*quant) return vqr::cmd_quantiles(cfg, std::cout, std::cerr);
  if (*cmp) return vqr::cmd_compare_qr(cfg, std::cout, std::cerr);
  if (*synth) return vqr::cmd_synth(cfg, std::cout, std::cerr);
  return vqr::cmd_check(cfg, std::cout, std::cerr);
}
