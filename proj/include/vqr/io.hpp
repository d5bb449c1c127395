#pragma once

// CSV ingestion and JSON / CSV serialization. Double precision only.

#include <nlohmann/json.hpp>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vqr/classical_qr.hpp"
#include "vqr/dual.hpp"
#include "vqr/measures.hpp"
#include "vqr/quantile.hpp"
#include "vqr/rvqr.hpp"

namespace vqr::io {

using Json = nlohmann::json;

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;  // raw cells
};

CsvTable read_csv(const std::string& path);

/// Column selector: a header name, or a 1-based column number.
std::size_t resolve_column(const CsvTable& table, const std::string& selector);

struct LoadOptions {
  bool intercept = true;
  std::optional<std::string> weight_column;
  bool scale_y = false;  // min-max scale responses to [0, 1]
};

/// Reads a dataset; weights are uniform 1/J unless a weight column is given.
Dataset<double> load_csv(const std::string& path, const std::vector<std::string>& x_cols,
                         const std::vector<std::string>& y_cols, const LoadOptions& opt = {});

void write_dataset_csv(std::ostream& out, const Dataset<double>& d);
void write_dataset_csv(const std::string& path, const Dataset<double>& d);

Json matrix_to_json(const Matrix<double>& m);
Matrix<double> matrix_from_json(const Json& j);
Json vector_to_json(const Vector<double>& v);
Vector<double> vector_from_json(const Json& j);

Json dataset_to_json(const Dataset<double>& d);
Dataset<double> dataset_from_json(const Json& j);
Json grid_to_json(const RankGrid<double>& g);
RankGrid<double> grid_from_json(const Json& j);
Json report_to_json(const SolveReport<double>& r);

/// Everything needed to reconstruct the fitted potentials.
struct FittedModel {
  double epsilon = 0.1;
  PhiMode phi_mode = PhiMode::Soft;
  RankGrid<double> grid;
  DualVariables<double> dual;
  Vector<double> x_mean;
  std::vector<std::string> x_names;
  std::vector<std::string> y_names;
  Vector<double> y_offset;
  Vector<double> y_scale;
  bool intercept = true;
  std::string data_path;
  std::optional<std::string> weight_column;
  SolveReport<double> report;
};

Json model_to_json(const FittedModel& m);
FittedModel model_from_json(const Json& j);
void save_json(const std::string& path, const Json& j);
Json load_json(const std::string& path);

/// (i, j, alpha_ij) triples with alpha_ij > threshold, 1-based indices.
void write_coupling_csv(std::ostream& out, const Matrix<double>& alpha, double threshold = 1e-12);

/// Rows (t, alpha, beta_1..beta_N, loss); alpha is the raw-covariate intercept.
void write_qr_curve_csv(std::ostream& out, const QrCurve<double>& curve, const std::vector<std::string>& x_names);

/// Columns x_probe_1..N, u_1..d, q_1..d; quantiles mapped back to raw response units.
void write_quantile_table_csv(std::ostream& out, const QuantileTable<double>& t, const Dataset<double>& d);
Json quantile_table_to_json(const QuantileTable<double>& t, const Dataset<double>& d);

}  // namespace vqr::io
