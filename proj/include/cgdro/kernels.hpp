#pragma once

#include "cgdro/data_model.hpp"

namespace cgdro::kernels {

// Rows are split into at most kMaxBlocks contiguous blocks of at least
// kMinBlockRows rows. The split depends only on n, and partial sums are
// combined in block order, so results do not depend on the thread count.
inline constexpr Index kMinBlockRows = 256;
inline constexpr Index kMaxBlocks = 64;

enum Need : unsigned { kValue = 1u, kGrad = 2u, kHess = 4u, kAll = 7u };

/// Value, gradient and Hessian of the softmax log-partition average
///   S(theta) = (1/n) sum_i log(1 + sum_k exp(theta_k' x_i)).
/// Fields not requested are left empty.
struct SoftmaxTerms {
  double value = 0.0;
  Vector grad;
  Matrix hess;
};

/// n × K matrix of class probabilities p_c(x_i, theta), c = 1..K.
Matrix softmax_p(const Matrix& x, const Vector& theta, int K);

double s_hat(const Matrix& x, const Vector& theta, int K);
Vector grad_s_hat(const Matrix& x, const Vector& theta, int K);
Matrix hess_s_hat(const Matrix& x, const Vector& theta, int K);
SoftmaxTerms s_hat_terms(const Matrix& x, const Vector& theta, int K, unsigned need);

/// (1/n) sum_i w_i ⊗ x_i for an n × K weight matrix, class-major.
Vector kron_mean(const Matrix& w, const Matrix& x);

/// Covariance with denominator n of the rows w_i ⊗ x_i.
Matrix kron_covariance(const Matrix& w, const Matrix& x);

/// Row-by-row reference versions. Same contracts, no blocking, no threads.
namespace serial {

Matrix softmax_p(const Matrix& x, const Vector& theta, int K);
double s_hat(const Matrix& x, const Vector& theta, int K);
Vector grad_s_hat(const Matrix& x, const Vector& theta, int K);
Matrix hess_s_hat(const Matrix& x, const Vector& theta, int K);
SoftmaxTerms s_hat_terms(const Matrix& x, const Vector& theta, int K, unsigned need);
Vector kron_mean(const Matrix& w, const Matrix& x);
Matrix kron_covariance(const Matrix& w, const Matrix& x);

}  // namespace serial

}  // namespace cgdro::kernels
