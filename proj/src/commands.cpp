#include "vqr/commands.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "vqr/classical_qr.hpp"
#include "vqr/quantile.hpp"

namespace vqr {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io:
    case ErrorKind::Parse:
    case ErrorKind::MissingColumn:
    case ErrorKind::EmptyData:
      return kIoError;
    case ErrorKind::NonConvergence:
      return kNonConvergence;
    default:
      return kConfigError;
  }
}

void RunConfig::validate() const {
  if (grid < 2) throw Error(ErrorKind::InvalidGrid, "grid needs at least 2 nodes per axis, got " + std::to_string(grid));
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw Error(ErrorKind::Config, "epsilon must be positive");
  for (double e : epsilons)
    if (!(e > 0.0) || !std::isfinite(e)) throw Error(ErrorKind::Config, "every epsilon must be positive");
  if (!(tol > 0.0)) throw Error(ErrorKind::Config, "tol must be positive");
  if (max_iter < 1) throw Error(ErrorKind::Config, "max-iter must be at least 1");
  if (workers < 1) throw Error(ErrorKind::Config, "workers must be at least 1");
  if (eta && !(*eta >= 0.0)) throw Error(ErrorKind::Config, "eta must be nonnegative");
  if (method != "ball" && method != "potential")
    throw Error(ErrorKind::Config, "unknown quantile method '" + method + "' (expected ball or potential)");
}

SolverConfig<double> RunConfig::solver(double eps) const {
  SolverConfig<double> s;
  s.epsilon = eps;
  s.tol = tol;
  s.max_iter = max_iter;
  s.phi_mode = phi_mode;
  s.workers = workers;
  return s;
}

namespace {

double parse_double(const std::string& text, const std::string& what) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (text.empty() || ec != std::errc() || ptr != last || !std::isfinite(v))
    throw Error(ErrorKind::Config, "cannot parse " + what + " '" + text + "'");
  return v;
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) parts.push_back(item);
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

std::string format_vector(const Vector<double>& v) {
  std::ostringstream os;
  os << std::setprecision(6) << "(";
  for (Eigen::Index k = 0; k < v.size(); ++k) os << (k ? ", " : "") << v(k);
  os << ")";
  return os.str();
}

// Writes to the named file, or to `fallback` when the name is empty.
template <typename Fn>
void emit(const std::string& path, std::ostream& fallback, Fn&& write) {
  if (path.empty()) {
    write(fallback);
    return;
  }
  std::ofstream f(path);
  if (!f) throw Error(ErrorKind::Io, "cannot write '" + path + "'");
  write(f);
  if (!f) throw Error(ErrorKind::Io, "write to '" + path + "' failed");
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Dataset<double> load_from_config(const RunConfig& cfg) {
  if (cfg.data.empty()) throw Error(ErrorKind::Config, "--data is required");
  io::LoadOptions opt;
  opt.intercept = cfg.intercept;
  opt.weight_column = cfg.weight_column;
  opt.scale_y = cfg.scale_y;
  return io::load_csv(cfg.data, cfg.x_cols, cfg.y_cols, opt);
}

void print_report(std::ostream& out, const SolveReport<double>& r, double eps) {
  out << std::setprecision(6) << "epsilon            " << eps << "\n"
      << "converged          " << (r.converged ? "yes" : "no") << "\n"
      << "iterations         " << r.iterations << "\n"
      << "restarts           " << r.restarts << "\n"
      << "dual objective     " << std::setprecision(12) << r.objective << "\n"
      << "primal value       " << r.primal_value << "\n"
      << "duality gap        " << std::setprecision(3) << std::scientific << r.duality_gap << " (relative "
      << r.relative_gap() << ")\n"
      << "column residual    " << r.col_residual_inf << "\n"
      << "mean-indep resid.  " << r.mi_residual_inf << "\n"
      << std::defaultfloat << std::setprecision(4) << "wall time (s)      " << r.wall_time_s << "\n";
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& body) {
  try {
    return body();
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const io::Json::exception& e) {
    err << "error (parse): " << e.what() << "\n";
    return kIoError;
  } catch (const std::bad_alloc&) {
    err << "error: out of memory\n";
    return kConfigError;
  }
}

std::vector<Eigen::Index> resolve_ranks(const std::vector<int>& ranks, Eigen::Index I) {
  std::vector<Eigen::Index> out;
  if (ranks.empty()) {
    for (Eigen::Index i = 0; i < I; ++i) out.push_back(i);
    return out;
  }
  for (int r : ranks) {
    if (r < 1 || r > I)
      throw Error(ErrorKind::Config, "rank index " + std::to_string(r) + " outside 1.." + std::to_string(I));
    out.push_back(r - 1);
  }
  return out;
}

}  // namespace

std::vector<Vector<double>> parse_probes(const std::vector<std::string>& specs, const Dataset<double>& d) {
  const Eigen::Index N = d.covariate_dim();
  std::vector<Vector<double>> probes;
  if (N == 0) {
    probes.emplace_back(Vector<double>(0));
    return probes;
  }
  const Matrix<double> raw = d.raw_covariates();
  const Vector<double> lo = raw.colwise().minCoeff().transpose();
  const Vector<double> hi = raw.colwise().maxCoeff().transpose();
  for (const auto& spec : specs) {
    if (!spec.empty() && (spec[0] == 'q' || spec[0] == 'Q')) {
      const double pct = parse_double(spec.substr(1), "probe level");
      if (!(pct > 0.0 && pct < 100.0)) throw Error(ErrorKind::Config, "probe level '" + spec + "' must be in (0,100)");
      probes.push_back(covariate_probe<double>(d, pct / 100.0));
      continue;
    }
    const auto parts = split_on(spec, ':');
    if (static_cast<Eigen::Index>(parts.size()) != N)
      throw Error(ErrorKind::Config, "probe '" + spec + "' has " + std::to_string(parts.size()) +
                                         " components, expected " + std::to_string(N));
    Vector<double> x(N);
    for (Eigen::Index k = 0; k < N; ++k) x(k) = parse_double(parts[static_cast<std::size_t>(k)], "probe value");
    if ((x.array() < lo.array()).any() || (x.array() > hi.array()).any()) {
      Eigen::Index best = 0;
      ((raw.rowwise() - x.transpose()).rowwise().norm()).minCoeff(&best);
      throw Error(ErrorKind::InvalidInput,
                  "probe " + format_vector(x) + " lies outside the observed covariate range; nearest covariate is " +
                      format_vector(raw.row(best).transpose()) + " (row " + std::to_string(best + 1) +
                      ", distance " + std::to_string((raw.row(best).transpose() - x).norm()) + ")");
    }
    probes.push_back(x);
  }
  return probes;
}

double relative_l2(const Vector<double>& a, const Vector<double>& b) {
  const double denom = a.norm();
  return denom > 0.0 ? (a - b).norm() / denom : (a - b).norm();
}

int cmd_fit(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    cfg.validate();
    const Dataset<double> data = center_covariates(load_from_config(cfg));
    const RankGrid<double> grid = make_rank_grid<double>(static_cast<int>(data.response_dim()), cfg.grid);

    io::FittedModel model;
    model.epsilon = cfg.epsilon;
    model.phi_mode = cfg.phi_mode;
    model.grid = grid;
    model.x_mean = data.x_mean;
    model.x_names = data.x_names;
    model.y_names = data.y_names;
    model.y_offset = data.y_offset;
    model.y_scale = data.y_scale;
    model.intercept = data.intercept;
    model.data_path = cfg.data;
    model.weight_column = cfg.weight_column;

    int code = kOk;
    SolveResult<double> fit;
    try {
      fit = solve(data, grid, cfg.solver(cfg.epsilon));
    } catch (const SolveFailure<double>& f) {
      fit = f.result();
      err << "warning: " << f.what() << "; model written with converged=false\n";
      code = kNonConvergence;
    }
    model.dual = fit.dual;
    model.report = fit.report;

    const std::string path = cfg.out.empty() ? "model.json" : cfg.out;
    io::save_json(path, io::model_to_json(model));
    if (!cfg.coupling_out.empty())
      emit(cfg.coupling_out, out, [&](std::ostream& os) { io::write_coupling_csv(os, fit.coupling.alpha); });

    out << "model              " << path << "\n"
        << "observations       " << data.size() << "\n"
        << "grid nodes         " << grid.size() << "\n";
    print_report(out, fit.report, cfg.epsilon);
    return code;
  });
}

namespace {

struct LoadedModel {
  io::FittedModel model;
  Dataset<double> data;  // centered
};

LoadedModel load_model(const RunConfig& cfg) {
  if (cfg.model.empty()) throw Error(ErrorKind::Config, "--model is required");
  LoadedModel lm;
  lm.model = io::model_from_json(io::load_json(cfg.model));
  const io::FittedModel& m = lm.model;
  io::LoadOptions opt;
  opt.intercept = m.intercept;
  opt.weight_column = m.weight_column;
  opt.scale_y = (m.y_scale.array() != 1.0).any() || (m.y_offset.array() != 0.0).any();
  const std::string path = cfg.data.empty() ? m.data_path : cfg.data;
  lm.data = center_covariates(io::load_csv(path, m.x_names, m.y_names, opt));
  if (lm.data.size() != m.dual.psi.size())
    throw Error(ErrorKind::InvalidInput, "data has " + std::to_string(lm.data.size()) +
                                             " rows but the model was fitted on " +
                                             std::to_string(m.dual.psi.size()));
  return lm;
}

}  // namespace

int cmd_quantiles(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    cfg.validate();
    const LoadedModel lm = load_model(cfg);
    const QuantileModel<double> qm = make_quantile_model(lm.data, lm.model.grid, lm.model.dual, lm.model.epsilon);
    const std::vector<Vector<double>> probes = parse_probes(cfg.probes, lm.data);
    const std::vector<Eigen::Index> ranks = resolve_ranks(cfg.ranks, lm.model.grid.size());

    QuantileTable<double> table;
    if (cfg.method == "ball") {
      table = quantile_table(qm, probes, ranks, cfg.eta);
    } else {
      table.x_names = lm.data.x_names;
      table.y_names = lm.data.y_names;
      const auto rows = static_cast<Eigen::Index>(probes.size() * ranks.size());
      table.x.resize(rows, lm.data.covariate_dim());
      table.u.resize(rows, lm.model.grid.dim());
      table.q.resize(rows, lm.data.response_dim());
      Eigen::Index r = 0;
      for (std::size_t p = 0; p < probes.size(); ++p) {
        const Matrix<double> q = potential_quantiles(qm, probes[p], cfg.phi_mode);
        for (Eigen::Index i : ranks) {
          table.x.row(r) = probes[p].transpose();
          table.u.row(r) = lm.model.grid.U.row(i);
          table.q.row(r) = q.row(i);
          table.probe_index.push_back(static_cast<Eigen::Index>(p));
          table.rank_index.push_back(i);
          ++r;
        }
      }
    }
    emit(cfg.out, out, [&](std::ostream& os) {
      if (ends_with(cfg.out, ".json"))
        os << io::quantile_table_to_json(table, lm.data).dump(2) << "\n";
      else
        io::write_quantile_table_csv(os, table, lm.data);
    });
    return kOk;
  });
}

int cmd_compare_qr(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    cfg.validate();
    if (cfg.epsilons.empty()) throw Error(ErrorKind::Config, "--epsilons needs at least one value");
    const Dataset<double> data = center_covariates(load_from_config(cfg));
    if (data.response_dim() != 1)
      throw Error(ErrorKind::Unsupported, "compare-qr needs a scalar response (d = 1)");
    const RankGrid<double> grid = make_rank_grid<double>(1, cfg.grid);
    const Eigen::Index n = grid.size();
    const std::vector<Vector<double>> probes = parse_probes(cfg.probes, data);

    // A grid difference between nodes k-1 and k estimates the quantile at the
    // midpoint level.
    std::vector<double> levels;
    for (Eigen::Index k = 1; k < n; ++k) levels.push_back(grid.U(k, 0) - grid.mu(k) / 2);
    QrConfig<double> qcfg;
    qcfg.workers = cfg.workers;
    const QrCurve<double> curve = fit_qr_curve(data, levels, qcfg);

    std::vector<Vector<double>> q_qr;
    for (const auto& x : probes) {
      Vector<double> q(n - 1);
      for (Eigen::Index k = 0; k + 1 < n; ++k) {
        const auto& f = curve.fits[static_cast<std::size_t>(k)];
        q(k) = f.intercept_raw() + f.beta.dot(x);
      }
      q_qr.push_back(q);
    }

    const std::size_t P = probes.size(), E = cfg.epsilons.size();
    Matrix<double> qr_err(P, E), soft_hard(P, E);
    for (std::size_t e = 0; e < E; ++e) {
      const double eps = cfg.epsilons[e];
      const SolveResult<double> fit = solve(data, grid, cfg.solver(eps));
      const QuantileModel<double> qm = make_quantile_model(data, grid, fit.dual, eps);
      for (std::size_t p = 0; p < P; ++p) {
        const Vector<double> soft = potential_quantiles(qm, probes[p], PhiMode::Soft).col(0).tail(n - 1);
        const Vector<double> hard = potential_quantiles(qm, probes[p], PhiMode::Hard).col(0).tail(n - 1);
        const Vector<double>& vqr = cfg.phi_mode == PhiMode::Soft ? soft : hard;
        qr_err(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(e)) = relative_l2(q_qr[p], vqr);
        soft_hard(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(e)) = relative_l2(soft, hard);
      }
      err << "epsilon " << eps << ": " << fit.report.iterations << " iterations\n";
    }

    emit(cfg.out, out, [&](std::ostream& os) {
      os << "metric,probe";
      for (double eps : cfg.epsilons) os << ",eps_" << eps;
      os << "\n" << std::setprecision(10);
      auto rows = [&](const char* name, const Matrix<double>& m) {
        for (std::size_t p = 0; p < P; ++p) {
          os << name << "," << (p < cfg.probes.size() && data.covariate_dim() ? cfg.probes[p] : "all");
          for (std::size_t e = 0; e < E; ++e) os << "," << m(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(e));
          os << "\n";
        }
      };
      rows("qr_vs_vqr", qr_err);
      rows("soft_vs_hard", soft_hard);
    });
    if (!curve.crossing_report.empty())
      err << "note: classical QR curves cross at " << curve.crossing_report.size() << " (probe, level) pairs\n";
    return kOk;
  });
}

int cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (cfg.grid < 2) throw Error(ErrorKind::InvalidGrid, "grid needs at least 2 nodes per axis");
    SynthConfig sc;
    sc.n_obs = cfg.n_obs;
    sc.dim = cfg.dim;
    sc.covariates = cfg.covariates;
    sc.seed = cfg.seed;
    sc.x_law = cfg.x_law;
    sc.beta_zero = cfg.beta_zero;
    const Dataset<double> d = synthesize<double>(sc);

    emit(cfg.out, out, [&](std::ostream& os) { io::write_dataset_csv(os, d); });

    std::string truth = cfg.truth_out;
    if (truth.empty() && !cfg.out.empty()) {
      truth = ends_with(cfg.out, ".csv") ? cfg.out.substr(0, cfg.out.size() - 4) : cfg.out;
      truth += "_truth.csv";
    }
    if (!truth.empty()) {
      const RankGrid<double> grid = make_rank_grid<double>(cfg.dim, cfg.grid);
      const std::vector<Vector<double>> probes = parse_probes(cfg.probes, d);
      emit(truth, out, [&](std::ostream& os) {
        for (int k = 0; k < cfg.covariates; ++k) os << (k ? "," : "") << "x_probe_" << k + 1;
        for (int k = 0; k < cfg.dim; ++k) os << ",u_" << k + 1;
        for (int k = 0; k < cfg.dim; ++k) os << ",q_" << k + 1;
        os << "\n" << std::setprecision(17);
        for (const auto& x : probes) {
          for (Eigen::Index i = 0; i < grid.size(); ++i) {
            const Vector<double> u = grid.U.row(i).transpose();
            const Vector<double> q = true_quantile<double>(sc, x, u);
            for (Eigen::Index k = 0; k < x.size(); ++k) os << (k ? "," : "") << x(k);
            for (Eigen::Index k = 0; k < u.size(); ++k) os << "," << u(k);
            for (Eigen::Index k = 0; k < q.size(); ++k) os << "," << q(k);
            os << "\n";
          }
        }
      });
    }
    return kOk;
  });
}

int cmd_check(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const io::Json report = run_check_suite(cfg.seed, cfg.inject_gradient_bug, cfg.workers);
    emit(cfg.out, out, [&](std::ostream& os) { os << report.dump(2) << "\n"; });
    for (const auto& c : report.at("checks"))
      if (!c.at("passed").get<bool>())
        err << "FAILED " << c.at("name").get<std::string>() << ": measured " << c.at("value").dump()
            << ", threshold " << c.at("threshold").dump() << "\n";
    return report.at("passed").get<bool>() ? kOk : kCheckFailure;
  });
}

}  // namespace vqr
