#include "cgdro/kernels.hpp"

#include "cgdro/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace cgdro::kernels {

namespace {

void check_theta(const Matrix& x, const Vector& theta, int K) {
  if (K < 1 || theta.size() != x.cols() * K) {
    throw ValidationError("kernels", "theta has length " + std::to_string(theta.size()) +
                                         ", expected d*K = " +
                                         std::to_string(x.cols() * std::max(K, 0)));
  }
}

void check_weights(const Matrix& w, const Matrix& x) {
  if (w.rows() != x.rows() || x.rows() == 0) {
    throw ValidationError("kernels", "weight and covariate row counts differ or are zero");
  }
}

// Overflow-safe softmax with an implicit zero score for class 0. Writes the K
// probabilities into p and returns log(1 + sum_k exp(s_k)).
template <class Scores, class Out>
double softmax_row(const Scores& s, Out&& p) {
  const Index K = s.size();
  double m = 0.0;
  for (Index k = 0; k < K; ++k) m = std::max(m, s[k]);
  double den = std::exp(-m);
  for (Index k = 0; k < K; ++k) {
    p[k] = std::exp(s[k] - m);
    den += p[k];
  }
  for (Index k = 0; k < K; ++k) p[k] /= den;
  return m + std::log(den);
}

// Block version of softmax_row on an nr × K score matrix: overwrites s with
// the probabilities and returns the summed log-partition values.
double softmax_block(Matrix& s) {
  if (s.cols() == 1) {
    auto a = s.col(0).array();
    const Eigen::ArrayXd e = (-a.abs()).exp();
    const Eigen::ArrayXd den = 1.0 + e;
    const double value = (a.max(0.0) + den.log()).sum();
    a = (a >= 0.0).select(Eigen::ArrayXd::Ones(a.size()), e) / den;
    return value;
  }
  const Eigen::ArrayXd m = s.rowwise().maxCoeff().array().max(0.0);
  auto e = s.array();
  e = (e.colwise() - m).exp();
  const Eigen::ArrayXd den = (-m).exp() + e.rowwise().sum();
  e.colwise() /= den;
  return (m + den.log()).sum();
}

struct Blocks {
  Index n = 0;
  Index size = 1;
  Index count = 0;

  explicit Blocks(Index rows) : n(rows) {
    size = std::max(kMinBlockRows, (n + kMaxBlocks - 1) / kMaxBlocks);
    count = (n + size - 1) / size;
  }
  Index begin(Index b) const { return b * size; }
  Index rows(Index b) const { return std::min(n, (b + 1) * size) - b * size; }
};

template <class Partial, class Fn>
std::vector<Partial> run_blocks(const Blocks& bl, Fn&& fn) {
  std::vector<Partial> parts(static_cast<std::size_t>(bl.count));
#pragma omp parallel for schedule(static) if (bl.count > 1)
  for (Index b = 0; b < bl.count; ++b) {
    parts[static_cast<std::size_t>(b)] = fn(bl.begin(b), bl.rows(b));
  }
  return parts;
}

Eigen::Map<const Matrix> theta_matrix(const Vector& theta, Index d, int K) {
  return Eigen::Map<const Matrix>(theta.data(), d, K);
}

}  // namespace

Matrix softmax_p(const Matrix& x, const Vector& theta, int K) {
  check_theta(x, theta, K);
  const auto th = theta_matrix(theta, x.cols(), K);
  Matrix p(x.rows(), K);
  const Blocks bl(x.rows());
#pragma omp parallel for schedule(static) if (bl.count > 1)
  for (Index b = 0; b < bl.count; ++b) {
    const Index r0 = bl.begin(b), nr = bl.rows(b);
    Matrix s = x.middleRows(r0, nr) * th;
    softmax_block(s);
    p.middleRows(r0, nr) = s;
  }
  return p;
}

SoftmaxTerms s_hat_terms(const Matrix& x, const Vector& theta, int K, unsigned need) {
  check_theta(x, theta, K);
  if (x.rows() == 0) throw ValidationError("kernels", "empty covariate matrix");
  const Index d = x.cols();
  const Index dk = d * K;
  const auto th = theta_matrix(theta, d, K);
  const bool want_grad = need & kGrad;
  const bool want_hess = need & kHess;

  struct Partial {
    double value = 0.0;
    Matrix grad;
    Matrix hess;
  };
  const Blocks bl(x.rows());
  auto parts = run_blocks<Partial>(bl, [&](Index r0, Index nr) {
    Partial part;
    const auto xb = x.middleRows(r0, nr);
    Matrix p = xb * th;
    part.value = softmax_block(p);
    if (want_grad) part.grad = xb.transpose() * p;
    if (want_hess) {
      part.hess.resize(dk, dk);
      for (int c = 0; c < K; ++c) {
        for (int c2 = c; c2 < K; ++c2) {
          Vector w = -p.col(c).cwiseProduct(p.col(c2));
          if (c == c2) w += p.col(c);
          Matrix blk = xb.transpose() * (xb.array().colwise() * w.array()).matrix();
          if (c == c2) blk = blk.selfadjointView<Eigen::Lower>();
          part.hess.block(c * d, c2 * d, d, d) = blk;
          if (c2 != c) part.hess.block(c2 * d, c * d, d, d) = blk.transpose();
        }
      }
    }
    return part;
  });

  const double inv_n = 1.0 / static_cast<double>(x.rows());
  SoftmaxTerms out;
  Matrix grad = want_grad ? Matrix::Zero(d, K) : Matrix();
  if (want_hess) out.hess = Matrix::Zero(dk, dk);
  for (const auto& part : parts) {
    out.value += part.value;
    if (want_grad) grad += part.grad;
    if (want_hess) out.hess += part.hess;
  }
  out.value *= inv_n;
  if (want_grad) out.grad = Eigen::Map<const Vector>(grad.data(), dk) * inv_n;
  if (want_hess) out.hess *= inv_n;
  return out;
}

double s_hat(const Matrix& x, const Vector& theta, int K) {
  return s_hat_terms(x, theta, K, kValue).value;
}

Vector grad_s_hat(const Matrix& x, const Vector& theta, int K) {
  return s_hat_terms(x, theta, K, kGrad).grad;
}

Matrix hess_s_hat(const Matrix& x, const Vector& theta, int K) {
  return s_hat_terms(x, theta, K, kHess).hess;
}

Vector kron_mean(const Matrix& w, const Matrix& x) {
  check_weights(w, x);
  const Blocks bl(x.rows());
  auto parts = run_blocks<Matrix>(bl, [&](Index r0, Index nr) -> Matrix {
    return x.middleRows(r0, nr).transpose() * w.middleRows(r0, nr);
  });
  Matrix sum = Matrix::Zero(x.cols(), w.cols());
  for (const auto& part : parts) sum += part;
  sum /= static_cast<double>(x.rows());
  return Eigen::Map<const Vector>(sum.data(), sum.size());
}

Matrix kron_covariance(const Matrix& w, const Matrix& x) {
  const Vector mean = kron_mean(w, x);
  const Index d = x.cols();
  const Index K = w.cols();
  const Index dk = d * K;
  const Blocks bl(x.rows());
  auto parts = run_blocks<Matrix>(bl, [&](Index r0, Index nr) -> Matrix {
    const auto xb = x.middleRows(r0, nr);
    Matrix z(nr, dk);
    for (Index c = 0; c < K; ++c) {
      z.middleCols(c * d, d) = xb.array().colwise() * w.col(c).segment(r0, nr).array();
    }
    z.rowwise() -= mean.transpose();
    return z.transpose() * z;
  });
  Matrix cov = Matrix::Zero(dk, dk);
  for (const auto& part : parts) cov += part;
  cov /= static_cast<double>(x.rows());
  return 0.5 * (cov + cov.transpose());
}

namespace serial {

Matrix softmax_p(const Matrix& x, const Vector& theta, int K) {
  check_theta(x, theta, K);
  const Index d = x.cols();
  Matrix p(x.rows(), K);
  Vector s(K);
  for (Index i = 0; i < x.rows(); ++i) {
    for (int c = 0; c < K; ++c) {
      double acc = 0.0;
      for (Index j = 0; j < d; ++j) acc += theta[c * d + j] * x(i, j);
      s[c] = acc;
    }
    auto row = p.row(i);
    softmax_row(s, row);
  }
  return p;
}

SoftmaxTerms s_hat_terms(const Matrix& x, const Vector& theta, int K, unsigned need) {
  check_theta(x, theta, K);
  if (x.rows() == 0) throw ValidationError("kernels", "empty covariate matrix");
  const Index n = x.rows();
  const Index d = x.cols();
  const Index dk = d * K;
  SoftmaxTerms out;
  if (need & kGrad) out.grad = Vector::Zero(dk);
  if (need & kHess) out.hess = Matrix::Zero(dk, dk);
  Vector s(K), p(K);
  for (Index i = 0; i < n; ++i) {
    for (int c = 0; c < K; ++c) {
      double acc = 0.0;
      for (Index j = 0; j < d; ++j) acc += theta[c * d + j] * x(i, j);
      s[c] = acc;
    }
    out.value += softmax_row(s, p);
    if (need & kGrad) {
      for (int c = 0; c < K; ++c)
        for (Index j = 0; j < d; ++j) out.grad[c * d + j] += p[c] * x(i, j);
    }
    if (need & kHess) {
      for (int c = 0; c < K; ++c) {
        for (int c2 = 0; c2 < K; ++c2) {
          const double dcc = (c == c2 ? p[c] : 0.0) - p[c] * p[c2];
          for (Index j = 0; j < d; ++j)
            for (Index k = 0; k < d; ++k) out.hess(c * d + j, c2 * d + k) += dcc * x(i, j) * x(i, k);
        }
      }
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  out.value *= inv_n;
  if (need & kGrad) out.grad *= inv_n;
  if (need & kHess) out.hess *= inv_n;
  return out;
}

double s_hat(const Matrix& x, const Vector& theta, int K) {
  return serial::s_hat_terms(x, theta, K, kValue).value;
}

Vector grad_s_hat(const Matrix& x, const Vector& theta, int K) {
  return serial::s_hat_terms(x, theta, K, kGrad).grad;
}

Matrix hess_s_hat(const Matrix& x, const Vector& theta, int K) {
  return serial::s_hat_terms(x, theta, K, kHess).hess;
}

Vector kron_mean(const Matrix& w, const Matrix& x) {
  check_weights(w, x);
  const Index d = x.cols();
  Vector mean = Vector::Zero(d * w.cols());
  for (Index i = 0; i < x.rows(); ++i)
    for (Index c = 0; c < w.cols(); ++c)
      for (Index j = 0; j < d; ++j) mean[c * d + j] += w(i, c) * x(i, j);
  return mean / static_cast<double>(x.rows());
}

Matrix kron_covariance(const Matrix& w, const Matrix& x) {
  const Vector mean = serial::kron_mean(w, x);
  const Index d = x.cols();
  const Index dk = d * w.cols();
  Matrix cov = Matrix::Zero(dk, dk);
  Vector z(dk);
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index c = 0; c < w.cols(); ++c)
      for (Index j = 0; j < d; ++j) z[c * d + j] = w(i, c) * x(i, j) - mean[c * d + j];
    for (Index a = 0; a < dk; ++a)
      for (Index b = 0; b < dk; ++b) cov(a, b) += z[a] * z[b];
  }
  return cov / static_cast<double>(x.rows());
}

}  // namespace serial

}  // namespace cgdro::kernels
