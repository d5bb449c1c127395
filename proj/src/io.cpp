#include "vqr/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "vqr/error.hpp"

namespace vqr::io {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  std::string out = s.substr(b, e - b + 1);
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') quoted = !quoted;
    if (c == ',' && !quoted) {
      cells.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  cells.push_back(trim(cur));
  return cells;
}

double parse_number(const std::string& cell, std::size_t data_row, const std::string& column) {
  double value = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (cell.empty() || ec != std::errc() || ptr != last || !std::isfinite(value))
    throw Error(ErrorKind::Parse, "row " + std::to_string(data_row) + ", column '" + column +
                                      "': not a finite number: '" + cell + "'");
  return value;
}

std::vector<std::string> json_strings(const Json& j) {
  std::vector<std::string> out;
  for (const auto& s : j) out.push_back(s.get<std::string>());
  return out;
}

}  // namespace

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  CsvTable t;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    if (!have_header) {
      // Skip a UTF-8 byte-order mark.
      if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line = line.substr(3);
      t.header = split(line);
      have_header = true;
      continue;
    }
    t.rows.push_back(split(line));
  }
  if (!have_header) throw Error(ErrorKind::EmptyData, "'" + path + "' has no header row");
  return t;
}

std::size_t resolve_column(const CsvTable& table, const std::string& selector) {
  for (std::size_t k = 0; k < table.header.size(); ++k)
    if (table.header[k] == selector) return k;
  if (!selector.empty() && selector.find_first_not_of("0123456789") == std::string::npos) {
    const std::size_t idx = std::stoul(selector);
    if (idx >= 1 && idx <= table.header.size()) return idx - 1;
  }
  throw Error(ErrorKind::MissingColumn, "column '" + selector + "' not found in header");
}

Dataset<double> load_csv(const std::string& path, const std::vector<std::string>& x_cols,
                         const std::vector<std::string>& y_cols, const LoadOptions& opt) {
  const CsvTable table = read_csv(path);
  if (y_cols.empty()) throw Error(ErrorKind::Config, "at least one response column is required");
  std::vector<std::size_t> xi, yi;
  for (const auto& s : x_cols) xi.push_back(resolve_column(table, s));
  for (const auto& s : y_cols) yi.push_back(resolve_column(table, s));
  std::optional<std::size_t> wi;
  if (opt.weight_column) wi = resolve_column(table, *opt.weight_column);

  const auto J = static_cast<Eigen::Index>(table.rows.size());
  if (J == 0) throw Error(ErrorKind::EmptyData, "'" + path + "' has no data rows");

  Matrix<double> X(J, static_cast<Eigen::Index>(xi.size()));
  Matrix<double> Y(J, static_cast<Eigen::Index>(yi.size()));
  Vector<double> w(J);
  for (Eigen::Index r = 0; r < J; ++r) {
    const auto& row = table.rows[static_cast<std::size_t>(r)];
    auto cell = [&](std::size_t c) {
      if (c >= row.size())
        throw Error(ErrorKind::Parse, "row " + std::to_string(r + 1) + " has only " + std::to_string(row.size()) +
                                          " cells");
      return parse_number(row[c], static_cast<std::size_t>(r + 1), table.header[c]);
    };
    for (std::size_t k = 0; k < xi.size(); ++k) X(r, static_cast<Eigen::Index>(k)) = cell(xi[k]);
    for (std::size_t k = 0; k < yi.size(); ++k) Y(r, static_cast<Eigen::Index>(k)) = cell(yi[k]);
    w(r) = wi ? cell(*wi) : 1.0;
  }

  std::vector<std::string> xn, yn;
  for (auto k : xi) xn.push_back(table.header[k]);
  for (auto k : yi) yn.push_back(table.header[k]);

  Vector<double> offset = Vector<double>::Zero(Y.cols());
  Vector<double> scale = Vector<double>::Ones(Y.cols());
  if (opt.scale_y) {
    offset = Y.colwise().minCoeff().transpose();
    scale = (Y.colwise().maxCoeff().transpose() - offset).cwiseMax(1e-300);
    for (Eigen::Index k = 0; k < Y.cols(); ++k) Y.col(k) = (Y.col(k).array() - offset(k)) / scale(k);
  }

  Dataset<double> d = make_dataset<double>(std::move(X), std::move(Y), xn, yn);
  if (wi) {
    if ((w.array() <= 0.0).any()) throw Error(ErrorKind::InvalidInput, "weights must be positive");
    d.nu = w / w.sum();
  }
  d.intercept = opt.intercept;
  d.y_offset = offset;
  d.y_scale = scale;
  validate(d);
  return d;
}

void write_dataset_csv(std::ostream& out, const Dataset<double>& d) {
  out << std::setprecision(17);
  const Matrix<double> X = d.raw_covariates();
  const Matrix<double> Y = d.unscale_responses(d.Y);
  bool first = true;
  for (const auto& n : d.x_names) out << (first ? "" : ",") << n, first = false;
  for (const auto& n : d.y_names) out << (first ? "" : ",") << n, first = false;
  out << "\n";
  for (Eigen::Index j = 0; j < d.size(); ++j) {
    first = true;
    for (Eigen::Index k = 0; k < X.cols(); ++k) out << (first ? "" : ",") << X(j, k), first = false;
    for (Eigen::Index k = 0; k < Y.cols(); ++k) out << (first ? "" : ",") << Y(j, k), first = false;
    out << "\n";
  }
}

void write_dataset_csv(const std::string& path, const Dataset<double>& d) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path + "'");
  write_dataset_csv(out, d);
}

Json matrix_to_json(const Matrix<double>& m) {
  return Json{{"rows", m.rows()},
              {"cols", m.cols()},
              {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

Matrix<double> matrix_from_json(const Json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw Error(ErrorKind::Parse, "matrix payload size does not match its shape");
  return Eigen::Map<const Matrix<double>>(data.data(), rows, cols);
}

Json vector_to_json(const Vector<double>& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector<double> vector_from_json(const Json& j) {
  const auto data = j.get<std::vector<double>>();
  return Eigen::Map<const Vector<double>>(data.data(), static_cast<Eigen::Index>(data.size()));
}

Json dataset_to_json(const Dataset<double>& d) {
  return Json{{"X", matrix_to_json(d.X)},
              {"Y", matrix_to_json(d.Y)},
              {"nu", vector_to_json(d.nu)},
              {"metadata",
               {{"x_mean", vector_to_json(d.x_mean)},
                {"x_names", d.x_names},
                {"y_names", d.y_names},
                {"intercept", d.intercept},
                {"centered", d.centered},
                {"y_offset", vector_to_json(d.y_offset)},
                {"y_scale", vector_to_json(d.y_scale)}}}};
}

Dataset<double> dataset_from_json(const Json& j) {
  Dataset<double> d;
  d.X = matrix_from_json(j.at("X"));
  d.Y = matrix_from_json(j.at("Y"));
  d.nu = vector_from_json(j.at("nu"));
  const Json& m = j.at("metadata");
  d.x_mean = vector_from_json(m.at("x_mean"));
  d.x_names = json_strings(m.at("x_names"));
  d.y_names = json_strings(m.at("y_names"));
  d.intercept = m.value("intercept", true);
  d.centered = m.value("centered", false);
  d.y_offset = vector_from_json(m.at("y_offset"));
  d.y_scale = vector_from_json(m.at("y_scale"));
  validate(d);
  return d;
}

Json grid_to_json(const RankGrid<double>& g) {
  return Json{{"U", matrix_to_json(g.U)},
              {"mu", vector_to_json(g.mu)},
              {"metadata",
               {{"scheme", to_string(g.scheme)},
                {"nodes", to_string(g.nodes)},
                {"nodes_per_axis", g.nodes_per_axis},
                {"dim", g.dim()}}}};
}

RankGrid<double> grid_from_json(const Json& j) {
  RankGrid<double> g;
  g.U = matrix_from_json(j.at("U"));
  g.mu = vector_from_json(j.at("mu"));
  const Json& m = j.at("metadata");
  g.scheme = m.at("scheme").get<std::string>() == "endpoint" ? GridScheme::Endpoint : GridScheme::TensorProduct;
  g.nodes = m.at("nodes").get<std::string>() == "midpoint" ? GridNodes::Midpoint : GridNodes::RightEndpoint;
  g.nodes_per_axis = m.at("nodes_per_axis").get<int>();
  if (g.mu.size() != g.U.rows()) throw Error(ErrorKind::Parse, "grid weights do not match grid nodes");
  return g;
}

Json report_to_json(const SolveReport<double>& r) {
  return Json{{"iterations", r.iterations},
              {"evaluations", r.evaluations},
              {"restarts", r.restarts},
              {"converged", r.converged},
              {"objective", r.objective},
              {"dual_value", r.dual_value},
              {"primal_value", r.primal_value},
              {"duality_gap", r.duality_gap},
              {"relative_gap", r.relative_gap()},
              {"grad_inf", r.grad_inf},
              {"col_residual_inf", r.col_residual_inf},
              {"mi_residual_inf", r.mi_residual_inf},
              {"wall_time_s", r.wall_time_s}};
}

namespace {

SolveReport<double> report_from_json(const Json& j) {
  SolveReport<double> r;
  r.iterations = j.value("iterations", 0);
  r.evaluations = j.value("evaluations", 0);
  r.restarts = j.value("restarts", 0);
  r.converged = j.value("converged", false);
  r.objective = j.value("objective", 0.0);
  r.dual_value = j.value("dual_value", 0.0);
  r.primal_value = j.value("primal_value", 0.0);
  r.duality_gap = j.value("duality_gap", 0.0);
  r.grad_inf = j.value("grad_inf", 0.0);
  r.col_residual_inf = j.value("col_residual_inf", 0.0);
  r.mi_residual_inf = j.value("mi_residual_inf", 0.0);
  r.wall_time_s = j.value("wall_time_s", 0.0);
  return r;
}

}  // namespace

Json model_to_json(const FittedModel& m) {
  Json j{{"format", "vqr-model"},
         {"version", 1},
         {"epsilon", m.epsilon},
         {"phi_mode", to_string(m.phi_mode)},
         {"grid", grid_to_json(m.grid)},
         {"psi", vector_to_json(m.dual.psi)},
         {"b", matrix_to_json(m.dual.b)},
         {"gauge",
          {{"b_shift", vector_to_json(m.dual.gauge.b_shift)},
           {"psi_shift", m.dual.gauge.psi_shift},
           {"normalized", m.dual.gauge.normalized}}},
         {"x_mean", vector_to_json(m.x_mean)},
         {"x_columns", m.x_names},
         {"y_columns", m.y_names},
         {"y_offset", vector_to_json(m.y_offset)},
         {"y_scale", vector_to_json(m.y_scale)},
         {"intercept", m.intercept},
         {"data", {{"path", m.data_path}}},
         {"converged", m.report.converged},
         {"report", report_to_json(m.report)}};
  if (m.weight_column) j["data"]["weight_column"] = *m.weight_column;
  return j;
}

FittedModel model_from_json(const Json& j) {
  if (j.value("format", std::string{}) != "vqr-model") throw Error(ErrorKind::Parse, "not a vqr model document");
  FittedModel m;
  m.epsilon = j.at("epsilon").get<double>();
  m.phi_mode = j.value("phi_mode", std::string("soft")) == "hard" ? PhiMode::Hard : PhiMode::Soft;
  m.grid = grid_from_json(j.at("grid"));
  m.dual.psi = vector_from_json(j.at("psi"));
  m.dual.b = matrix_from_json(j.at("b"));
  if (j.contains("gauge")) {
    m.dual.gauge.b_shift = vector_from_json(j["gauge"].at("b_shift"));
    m.dual.gauge.psi_shift = j["gauge"].value("psi_shift", 0.0);
    m.dual.gauge.normalized = j["gauge"].value("normalized", false);
  }
  m.x_mean = vector_from_json(j.at("x_mean"));
  m.x_names = json_strings(j.at("x_columns"));
  m.y_names = json_strings(j.at("y_columns"));
  m.y_offset = vector_from_json(j.at("y_offset"));
  m.y_scale = vector_from_json(j.at("y_scale"));
  m.intercept = j.value("intercept", true);
  m.data_path = j.at("data").value("path", std::string{});
  if (j.at("data").contains("weight_column")) m.weight_column = j["data"]["weight_column"].get<std::string>();
  m.report = report_from_json(j.at("report"));
  if (m.dual.b.rows() != m.grid.size() || m.dual.b.cols() != m.x_mean.size())
    throw Error(ErrorKind::Parse, "model potentials do not match the grid and covariates");
  return m;
}

void save_json(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

Json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Parse, "'" + path + "': " + e.what());
  }
}

void write_coupling_csv(std::ostream& out, const Matrix<double>& alpha, double threshold) {
  out << "i,j,alpha\n" << std::setprecision(17);
  for (Eigen::Index i = 0; i < alpha.rows(); ++i)
    for (Eigen::Index j = 0; j < alpha.cols(); ++j)
      if (alpha(i, j) > threshold) out << i + 1 << "," << j + 1 << "," << alpha(i, j) << "\n";
}

void write_qr_curve_csv(std::ostream& out, const QrCurve<double>& curve, const std::vector<std::string>& x_names) {
  out << "t,alpha";
  for (std::size_t k = 0; k < x_names.size(); ++k) out << ",beta_" << (k + 1);
  out << ",loss\n" << std::setprecision(17);
  for (const auto& f : curve.fits) {
    out << f.t << "," << f.intercept_raw();
    for (Eigen::Index k = 0; k < f.beta.size(); ++k) out << "," << f.beta(k);
    out << "," << f.loss << "\n";
  }
}

void write_quantile_table_csv(std::ostream& out, const QuantileTable<double>& t, const Dataset<double>& d) {
  bool first = true;
  auto sep = [&] {
    if (!first) out << ",";
    first = false;
  };
  for (Eigen::Index k = 0; k < t.x.cols(); ++k) sep(), out << "x_probe_" << (k + 1);
  for (Eigen::Index k = 0; k < t.u.cols(); ++k) sep(), out << "u_" << (k + 1);
  for (Eigen::Index k = 0; k < t.q.cols(); ++k) sep(), out << "q_" << (k + 1);
  out << "\n" << std::setprecision(17);
  const Matrix<double> q = d.unscale_responses(t.q);
  for (Eigen::Index r = 0; r < t.q.rows(); ++r) {
    first = true;
    for (Eigen::Index k = 0; k < t.x.cols(); ++k) sep(), out << t.x(r, k);
    for (Eigen::Index k = 0; k < t.u.cols(); ++k) sep(), out << t.u(r, k);
    for (Eigen::Index k = 0; k < q.cols(); ++k) sep(), out << q(r, k);
    out << "\n";
  }
}

Json quantile_table_to_json(const QuantileTable<double>& t, const Dataset<double>& d) {
  Json rows = Json::array();
  const Matrix<double> q = d.unscale_responses(t.q);
  for (Eigen::Index r = 0; r < t.q.rows(); ++r) {
    rows.push_back({{"x_probe", vector_to_json(t.x.row(r).transpose())},
                    {"u", vector_to_json(t.u.row(r).transpose())},
                    {"q", vector_to_json(q.row(r).transpose())}});
  }
  return Json{{"x_columns", t.x_names}, {"y_columns", t.y_names}, {"eta", t.eta}, {"rows", rows}};
}

}  // namespace vqr::io
