#pragma once

// Synthetic location-scale samples with known conditional quantiles.
//
//   d = 1:  Y = alpha(U) + beta(U) . X,  alpha(u) = u, beta_k(u) = 1 + u
//   d = 2:  Y_k = U_k (1 + beta_k x_1),   beta = (1, 1/2)
//
// with U ~ Uniform(0,1)^d independent of X.

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>

#include "vqr/error.hpp"
#include "vqr/measures.hpp"

namespace vqr {

enum class CovariateLaw { Uniform, Normal };

struct SynthConfig {
  Eigen::Index n_obs = 2000;
  int dim = 1;         // response dimension d (1 or 2)
  int covariates = 1;  // N
  std::uint64_t seed = 7;
  CovariateLaw x_law = CovariateLaw::Uniform;
  bool beta_zero = false;  // Y independent of X

  void validate() const {
    if (n_obs < 1) throw Error(ErrorKind::Config, "synthetic sample size must be positive");
    if (dim != 1 && dim != 2) throw Error(ErrorKind::Config, "synthetic generator supports d = 1 or 2");
    if (covariates < 1) throw Error(ErrorKind::Config, "synthetic generator needs at least one covariate");
  }
};

/// Slope of response component k on the first covariate.
inline double synth_slope(const SynthConfig& cfg, int k) {
  if (cfg.beta_zero) return 0.0;
  return k == 0 ? 1.0 : 0.5;
}

/// True conditional quantile Q(x, u) in raw units.
template <typename Scalar>
Vector<Scalar> true_quantile(const SynthConfig& cfg, const Vector<Scalar>& x, const Vector<Scalar>& u) {
  Vector<Scalar> q(cfg.dim);
  if (cfg.dim == 1) {
    const Scalar slope = cfg.beta_zero ? Scalar(0) : Scalar(1) + u(0);
    q(0) = u(0) + slope * x.sum();
  } else {
    for (int k = 0; k < cfg.dim; ++k) q(k) = u(k) * (Scalar(1) + Scalar(synth_slope(cfg, k)) * x(0));
  }
  return q;
}

template <typename Scalar>
Dataset<Scalar> synthesize(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<Scalar> unif(Scalar(0), Scalar(1));
  std::normal_distribution<Scalar> gauss(Scalar(0), Scalar(1));

  const Eigen::Index J = cfg.n_obs;
  Matrix<Scalar> X(J, cfg.covariates), Y(J, cfg.dim);
  Vector<Scalar> u(cfg.dim), x(cfg.covariates);
  for (Eigen::Index j = 0; j < J; ++j) {
    for (int k = 0; k < cfg.covariates; ++k) x(k) = cfg.x_law == CovariateLaw::Uniform ? unif(rng) : gauss(rng);
    for (int k = 0; k < cfg.dim; ++k) u(k) = unif(rng);
    X.row(j) = x.transpose();
    Y.row(j) = true_quantile<Scalar>(cfg, x, u).transpose();
  }
  return make_dataset<Scalar>(std::move(X), std::move(Y));
}

}  // namespace vqr
