#pragma once

// Empirical measures on observations and on the latent rank grid.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "vqr/error.hpp"

namespace vqr {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Observed sample (x_j, y_j) with empirical weights nu_j.
///
/// Rows index observations. `X` is J x N and `Y` is J x d. Once centered,
/// `x_mean` holds the nu-weighted covariate mean that was subtracted, so the
/// raw covariates are `X + 1 x_mean^T`. The constant regressor is never a
/// column of X; `intercept` only records that the user asked for one.
template <typename Scalar>
struct Dataset {
  Matrix<Scalar> X;
  Matrix<Scalar> Y;
  Vector<Scalar> nu;
  Vector<Scalar> x_mean;
  std::vector<std::string> x_names;
  std::vector<std::string> y_names;
  bool intercept = true;
  bool centered = false;

  // Affine response transform applied at load time: stored = (raw - offset) / scale.
  Vector<Scalar> y_offset;
  Vector<Scalar> y_scale;

  Eigen::Index size() const { return Y.rows(); }
  Eigen::Index covariate_dim() const { return X.cols(); }
  Eigen::Index response_dim() const { return Y.cols(); }

  Matrix<Scalar> raw_covariates() const {
    Matrix<Scalar> raw = X;
    if (x_mean.size() == X.cols()) raw.rowwise() += x_mean.transpose();
    return raw;
  }

  /// Maps responses (or quantiles) back to the unscaled response units.
  template <typename Derived>
  Matrix<Scalar> unscale_responses(const Eigen::MatrixBase<Derived>& q) const {
    Matrix<Scalar> out = q;
    if (y_scale.size() == out.cols()) {
      for (Eigen::Index k = 0; k < out.cols(); ++k)
        out.col(k) = out.col(k).array() * y_scale(k) + y_offset(k);
    }
    return out;
  }
};

enum class GridScheme { Endpoint, TensorProduct };
enum class GridNodes { RightEndpoint, Midpoint };

inline const char* to_string(GridScheme s) {
  return s == GridScheme::Endpoint ? "endpoint" : "tensor-product";
}
inline const char* to_string(GridNodes s) {
  return s == GridNodes::RightEndpoint ? "right-endpoint" : "midpoint";
}

/// Discretized latent ranks u_i in (0,1]^d with weights mu_i.
template <typename Scalar>
struct RankGrid {
  Matrix<Scalar> U;
  Vector<Scalar> mu;
  GridScheme scheme = GridScheme::Endpoint;
  GridNodes nodes = GridNodes::RightEndpoint;
  int nodes_per_axis = 0;

  Eigen::Index size() const { return U.rows(); }
  Eigen::Index dim() const { return U.cols(); }

  /// Flat index of a tensor multi-index; the last axis varies fastest.
  Eigen::Index flat_index(const std::vector<int>& multi) const {
    Eigen::Index idx = 0;
    for (int m : multi) idx = idx * nodes_per_axis + m;
    return idx;
  }

  std::vector<int> multi_index(Eigen::Index flat) const {
    std::vector<int> multi(static_cast<std::size_t>(dim()));
    for (Eigen::Index k = dim() - 1; k >= 0; --k) {
      multi[static_cast<std::size_t>(k)] = static_cast<int>(flat % nodes_per_axis);
      flat /= nodes_per_axis;
    }
    return multi;
  }
};

template <typename Scalar>
void validate(const Dataset<Scalar>& d) {
  const Eigen::Index J = d.size();
  if (J == 0) throw Error(ErrorKind::EmptyData, "dataset has no observations");
  if (d.X.rows() != J || d.nu.size() != J)
    throw Error(ErrorKind::InvalidInput, "dataset shape mismatch between X, Y and nu");
  if (!d.X.allFinite() || !d.Y.allFinite() || !d.nu.allFinite())
    throw Error(ErrorKind::InvalidInput, "dataset contains NaN or Inf entries");
  if ((d.nu.array() <= Scalar(0)).any())
    throw Error(ErrorKind::InvalidInput, "observation weights must be positive");
  if (std::abs(d.nu.sum() - Scalar(1)) > Scalar(1e-12))
    throw Error(ErrorKind::InvalidInput, "observation weights must sum to one");
}

template <typename Scalar>
Dataset<Scalar> make_dataset(Matrix<Scalar> X, Matrix<Scalar> Y,
                             std::vector<std::string> x_names = {},
                             std::vector<std::string> y_names = {}) {
  Dataset<Scalar> d;
  const Eigen::Index J = Y.rows();
  d.X = std::move(X);
  d.Y = std::move(Y);
  if (d.X.rows() != J) {
    if (d.X.size() == 0) {
      d.X.resize(J, 0);
    } else {
      throw Error(ErrorKind::InvalidInput, "X and Y must have the same number of rows");
    }
  }
  d.nu = Vector<Scalar>::Constant(J, J > 0 ? Scalar(1) / Scalar(J) : Scalar(0));
  d.x_mean = Vector<Scalar>::Zero(d.X.cols());
  d.x_names = std::move(x_names);
  d.y_names = std::move(y_names);
  for (Eigen::Index k = static_cast<Eigen::Index>(d.x_names.size()); k < d.X.cols(); ++k)
    d.x_names.push_back("x" + std::to_string(k + 1));
  for (Eigen::Index k = static_cast<Eigen::Index>(d.y_names.size()); k < d.Y.cols(); ++k)
    d.y_names.push_back("y" + std::to_string(k + 1));
  validate(d);
  return d;
}

/// Subtracts the nu-weighted covariate mean. Repeated application accumulates
/// the (rounding-level) residual mean into x_mean.
template <typename Scalar>
Dataset<Scalar> center_covariates(Dataset<Scalar> d) {
  const Vector<Scalar> mean = d.X.transpose() * d.nu;
  d.X.rowwise() -= mean.transpose();
  if (d.x_mean.size() != mean.size()) d.x_mean = Vector<Scalar>::Zero(mean.size());
  d.x_mean += mean;
  d.centered = true;
  return d;
}

/// Per-axis node positions of the 1-D grid: i/n (right endpoints) or (i-1/2)/n.
template <typename Scalar>
Vector<Scalar> axis_nodes(int n, GridNodes nodes = GridNodes::RightEndpoint) {
  Vector<Scalar> u(n);
  const Scalar shift = nodes == GridNodes::Midpoint ? Scalar(0.5) : Scalar(0);
  for (int i = 0; i < n; ++i) u(i) = (Scalar(i + 1) - shift) / Scalar(n);
  return u;
}

template <typename Scalar>
RankGrid<Scalar> make_rank_grid(int dim, int n, GridScheme scheme = GridScheme::Endpoint,
                                GridNodes nodes = GridNodes::RightEndpoint) {
  if (dim < 1) throw Error(ErrorKind::InvalidGrid, "grid dimension must be at least 1");
  if (n < 2) throw Error(ErrorKind::InvalidGrid, "grid needs at least 2 nodes per axis, got " + std::to_string(n));
  if (dim > 1 && scheme == GridScheme::Endpoint) scheme = GridScheme::TensorProduct;

  RankGrid<Scalar> g;
  g.scheme = scheme;
  g.nodes = nodes;
  g.nodes_per_axis = n;

  const Vector<Scalar> axis = axis_nodes<Scalar>(n, nodes);
  Eigen::Index count = 1;
  for (int k = 0; k < dim; ++k) count *= n;

  g.U.resize(count, dim);
  for (Eigen::Index i = 0; i < count; ++i) {
    const auto multi = g.multi_index(i);
    for (int k = 0; k < dim; ++k) g.U(i, k) = axis(multi[static_cast<std::size_t>(k)]);
  }
  g.mu = Vector<Scalar>::Constant(count, Scalar(1) / Scalar(count));
  return g;
}

/// Range of each response component (max - min); used as the natural length scale of Y.
template <typename Scalar>
Vector<Scalar> response_range(const Matrix<Scalar>& Y) {
  if (Y.rows() == 0) return Vector<Scalar>::Zero(Y.cols());
  return (Y.colwise().maxCoeff() - Y.colwise().minCoeff()).transpose();
}

template <typename Scalar>
Scalar response_scale(const Matrix<Scalar>& Y) {
  const Vector<Scalar> r = response_range(Y);
  const Scalar s = r.size() ? r.maxCoeff() : Scalar(0);
  return s > Scalar(0) ? s : Scalar(1);
}

}  // namespace vqr
