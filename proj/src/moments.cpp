#include "cgdro/moments.hpp"

#include "cgdro/error.hpp"
#include "cgdro/kernels.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

namespace cgdro {

namespace {

constexpr const char* kModule = "moments";

Matrix indicator(const Labels& y, int K) {
  Matrix h = Matrix::Zero(y.size(), K);
  for (Index i = 0; i < y.size(); ++i) {
    if (y[i] < 0 || y[i] > K) throw ValidationError(kModule, "label outside {0,...,K}");
    if (y[i] > 0) h(i, y[i] - 1) = 1.0;
  }
  return h;
}

void check_predictions(const LabeledDataset& ds, const UnlabeledDataset& target,
                       const NuisancePredictions& pred) {
  if (pred.f_source.rows() != ds.size() || pred.w_source.size() != ds.size() ||
      pred.f_target.rows() != target.size() || pred.f_source.cols() != pred.f_target.cols() ||
      ds.dim() != target.dim()) {
    throw ValidationError(kModule, "nuisance predictions do not match the data");
  }
}

void require_rows(Index n, const char* what) {
  if (n < 2) throw ValidationError(kModule, std::string(what) + " needs at least 2 rows");
}

}  // namespace

Vector mu_hat_no_shift(const LabeledDataset& ds, int K) {
  return -kernels::kron_mean(indicator(ds.y, K), ds.x);
}

Matrix cov_hat_no_shift(const LabeledDataset& ds, int K) {
  require_rows(ds.size(), "covariance");
  const Matrix cov = kernels::kron_covariance(indicator(ds.y, K), ds.x);
  return psd_project(cov / static_cast<double>(ds.size()));
}

Vector mu_hat_plugin(const UnlabeledDataset& target, const NuisancePredictions& pred) {
  return -kernels::kron_mean(pred.f_target, target.x);
}

Vector mu_hat_dml(const LabeledDataset& ds, const UnlabeledDataset& target,
                  const NuisancePredictions& pred) {
  check_predictions(ds, target, pred);
  const int K = static_cast<int>(pred.f_source.cols());
  const Matrix resid =
      (indicator(ds.y, K) - pred.f_source).array().colwise() * pred.w_source.array();
  return -kernels::kron_mean(pred.f_target, target.x) - kernels::kron_mean(resid, ds.x);
}

Matrix cov_hat_dml(const LabeledDataset& ds, const UnlabeledDataset& target,
                   const NuisancePredictions& pred) {
  check_predictions(ds, target, pred);
  require_rows(ds.size(), "covariance");
  require_rows(target.size(), "covariance");
  const int K = static_cast<int>(pred.f_source.cols());
  const Matrix resid =
      (pred.f_source - indicator(ds.y, K)).array().colwise() * pred.w_source.array();
  const Matrix cov = kernels::kron_covariance(resid, ds.x) / static_cast<double>(ds.size()) +
                     kernels::kron_covariance(pred.f_target, target.x) /
                         static_cast<double>(target.size());
  return psd_project(cov);
}

Matrix psd_project(const Matrix& a) {
  if (a.rows() != a.cols()) throw ValidationError(kModule, "psd_project needs a square matrix");
  const Matrix sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) {
    throw NumericalError(kModule, "eigendecomposition failed", 0.0);
  }
  if (eig.eigenvalues().minCoeff() >= 0.0) return sym;
  const Matrix& v = eig.eigenvectors();
  Matrix out = v * eig.eigenvalues().cwiseMax(0.0).asDiagonal() * v.transpose();
  return 0.5 * (out + out.transpose());
}

MomentSet assemble_moments(int d, int K, std::vector<Vector> mu, std::vector<Matrix> cov,
                           std::vector<Index> n_per_source) {
  const std::size_t L = mu.size();
  if (L == 0 || cov.size() != L || n_per_source.size() != L) {
    throw ValidationError(kModule, "moment lists have inconsistent lengths");
  }
  const Index dk = static_cast<Index>(d) * K;
  MomentSet m;
  m.d = d;
  m.K = K;
  m.u_hat.resize(dk, static_cast<Index>(L));
  for (std::size_t l = 0; l < L; ++l) {
    if (mu[l].size() != dk || cov[l].rows() != dk || cov[l].cols() != dk) {
      throw ValidationError(kModule, "moment of source " + std::to_string(l + 1) +
                                         " has the wrong dimension");
    }
    m.u_hat.col(static_cast<Index>(l)) = mu[l];
  }
  m.sigma_min = Eigen::JacobiSVD<Matrix>(m.u_hat).singularValues().minCoeff();
  m.mu_hat = std::move(mu);
  m.cov_hat = std::move(cov);
  m.n_per_source = std::move(n_per_source);
  return m;
}

}  // namespace cgdro
