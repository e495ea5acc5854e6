#pragma once

#include "cgdro/data_model.hpp"
#include "cgdro/nuisance.hpp"

#include <vector>

namespace cgdro {

/// Per-source moment vectors and their estimated covariances.
struct MomentSet {
  int d = 0;
  int K = 0;
  std::vector<Vector> mu_hat;   // L vectors of length dK
  std::vector<Matrix> cov_hat;  // L PSD matrices, dK × dK
  Matrix u_hat;                 // dK × L, column l is mu_hat[l]
  double sigma_min = 0.0;       // smallest singular value of u_hat
  std::vector<Index> n_per_source;

  int L() const { return static_cast<int>(mu_hat.size()); }
  int dk() const { return d * K; }
};

/// Block c: -(1/n) sum_i 1(y_i = c) x_i, c = 1..K.
Vector mu_hat_no_shift(const LabeledDataset& ds, int K);

/// (1/n) × empirical covariance (denominator n) of (1(y=1)x, ..., 1(y=K)x).
Matrix cov_hat_no_shift(const LabeledDataset& ds, int K);

/// Bias-corrected block c:
///   -(1/N) sum_j f_c(x^Q_j) x^Q_j - (1/n) sum_i w(x_i) (1(y_i=c) - f_c(x_i)) x_i.
Vector mu_hat_dml(const LabeledDataset& ds, const UnlabeledDataset& target,
                  const NuisancePredictions& pred);

/// Plug-in block c: -(1/N) sum_j f_c(x^Q_j) x^Q_j, without the correction.
Vector mu_hat_plugin(const UnlabeledDataset& target, const NuisancePredictions& pred);

/// (1/n) Cov_P([w (f - y)] ⊗ x) + (1/N) Cov_Q(f ⊗ x).
Matrix cov_hat_dml(const LabeledDataset& ds, const UnlabeledDataset& target,
                   const NuisancePredictions& pred);

/// Symmetrizes and clips negative eigenvalues to zero.
Matrix psd_project(const Matrix& a);

/// Builds u_hat and sigma_min and checks dimensions.
MomentSet assemble_moments(int d, int K, std::vector<Vector> mu, std::vector<Matrix> cov,
                           std::vector<Index> n_per_source);

}  // namespace cgdro
