#include "cgdro/inference.hpp"

#include "cgdro/error.hpp"
#include "cgdro/kernels.hpp"
#include "cgdro/rng.hpp"
#include "newton.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <random>

namespace cgdro {

namespace {

constexpr const char* kModule = "inference";
constexpr double kVarianceFloor = 1e-12;

double upper_quantile(double q) {
  static const boost::math::normal_distribution<double> std_normal(0.0, 1.0);
  return boost::math::quantile(boost::math::complement(std_normal, q));
}

// Factor F with F F' = cov. Semidefinite inputs use pivoted LDLT with
// negative pivots clipped, so a zero covariance yields F = 0.
Matrix sampling_factor(const Matrix& cov) {
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::LDLT<Matrix> ldlt(cov);
  const Vector dsqrt = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
  Matrix l = ldlt.matrixL();
  Matrix f = l * dsqrt.asDiagonal();
  return ldlt.transpositionsP().transpose() * f;
}

Eigen::LLT<Matrix> factor_or_throw(const Matrix& h) {
  Eigen::LLT<Matrix> llt;
  if (!detail::factor_spd(h, llt)) {
    throw NumericalError(kModule, "Hessian could not be factorized", 0.0);
  }
  return llt;
}

}  // namespace

std::vector<Matrix> sample_perturbed_moments(const MomentSet& moments, int M, std::uint64_t seed) {
  if (M < 1) throw ValidationError(kModule, "M must be positive");
  const int L = moments.L();
  const Index dk = moments.dk();
  std::vector<Matrix> factors(L);
  for (int l = 0; l < L; ++l) factors[l] = sampling_factor(moments.cov_hat[l]);
  std::vector<Matrix> draws(static_cast<std::size_t>(M));
  for (int m = 0; m < M; ++m) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(m)));
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix u(dk, L);
    Vector z(dk);
    for (int l = 0; l < L; ++l) {
      for (Index j = 0; j < dk; ++j) z[j] = normal(rng);
      u.col(l) = moments.mu_hat[l] + factors[l] * z;
    }
    draws[static_cast<std::size_t>(m)] = std::move(u);
  }
  return draws;
}

double filter_threshold(double alpha0, double eta0, int dk, int L) {
  if (!(alpha0 > 0.0 && alpha0 < 1.0) || !(eta0 >= 0.0) || dk < 1 || L < 1) {
    throw ValidationError(kModule, "invalid filter parameters");
  }
  return (1.0 + eta0) * upper_quantile(alpha0 / (static_cast<double>(dk) * L));
}

std::vector<int> filter_indices(const std::vector<Matrix>& draws, const MomentSet& moments,
                                double alpha0, double eta0) {
  const int L = moments.L();
  const Index dk = moments.dk();
  const double threshold = filter_threshold(alpha0, eta0, static_cast<int>(dk), L);
  Matrix scale(dk, L);
  for (int l = 0; l < L; ++l) {
    const double inv_n = 1.0 / static_cast<double>(moments.n_per_source[l]);
    scale.col(l) = (moments.cov_hat[l].diagonal().array() + inv_n).sqrt();
  }
  std::vector<int> kept;
  for (std::size_t m = 0; m < draws.size(); ++m) {
    if (draws[m].rows() != dk || draws[m].cols() != L) {
      throw ValidationError(kModule, "perturbed draw has the wrong shape");
    }
    const double dev = ((draws[m] - moments.u_hat).cwiseAbs().array() / scale.array()).maxCoeff();
    if (dev <= threshold) kept.push_back(static_cast<int>(m));
  }
  return kept;
}

Vector project_simplex(const Vector& v) {
  const Index n = v.size();
  if (n == 0) throw ValidationError(kModule, "cannot project an empty vector");
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, tau = 0.0;
  for (Index j = 0; j < n; ++j) {
    cum += u[static_cast<std::size_t>(j)];
    const double t = (cum - 1.0) / static_cast<double>(j + 1);
    if (u[static_cast<std::size_t>(j)] - t > 0.0) tau = t;
  }
  return (v.array() - tau).cwiseMax(0.0);
}

double SimplexQuadratic::kkt_residual(const Vector& gamma) const {
  return (gamma - project_simplex(gamma + grad(gamma))).cwiseAbs().maxCoeff();
}

SimplexQuadratic perturbed_quadratic(const Matrix& u_m, const Vector& theta_hat, const Matrix& hess,
                                     const Vector& grad) {
  if (u_m.rows() != theta_hat.size() || hess.rows() != u_m.rows() || grad.size() != u_m.rows()) {
    throw ValidationError(kModule, "perturbed quadratic inputs have inconsistent sizes");
  }
  const auto llt = factor_or_throw(hess);
  const Matrix hinv_u = llt.solve(u_m);
  SimplexQuadratic q;
  q.A = u_m.transpose() * hinv_u;
  q.A = 0.5 * (q.A + q.A.transpose());
  q.b = u_m.transpose() * theta_hat - hinv_u.transpose() * grad;
  return q;
}

GammaSolution maximize_on_simplex(const SimplexQuadratic& q, const GammaSolverOptions& opt) {
  const Index L = q.b.size();
  GammaSolution sol;
  sol.gamma = Vector::Constant(L, 1.0 / static_cast<double>(L));
  sol.kkt_residual = q.kkt_residual(sol.gamma);
  if (sol.kkt_residual <= opt.tol) return sol;

  const double lmax = Eigen::SelfAdjointEigenSolver<Matrix>(q.A, Eigen::EigenvaluesOnly)
                          .eigenvalues()
                          .maxCoeff();
  const double step = lmax > 1e-300 ? 1.0 / lmax : 1.0;
  Vector y = sol.gamma;
  double t = 1.0;
  double f_cur = q.value(sol.gamma);
  for (int it = 1; it <= opt.max_iter; ++it) {
    Vector next = project_simplex(y + step * q.grad(y));
    double f_next = q.value(next);
    if (f_next < f_cur) {
      // Momentum overshot: restart from the current iterate.
      y = sol.gamma;
      t = 1.0;
      next = project_simplex(y + step * q.grad(y));
      f_next = q.value(next);
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = next + ((t - 1.0) / t_next) * (next - sol.gamma);
    t = t_next;
    sol.gamma = std::move(next);
    f_cur = f_next;
    sol.iterations = it;
    sol.kkt_residual = q.kkt_residual(sol.gamma);
    if (sol.kkt_residual <= opt.tol) return sol;
  }
  throw NumericalError(kModule,
                       "simplex quadratic did not reach the KKT tolerance; residual " +
                           std::to_string(sol.kkt_residual),
                       sol.kkt_residual);
}

GammaSolution solve_gamma_m(const Matrix& u_m, const Vector& theta_hat, const Matrix& hess,
                            const Vector& grad, const GammaSolverOptions& opt) {
  return maximize_on_simplex(perturbed_quadratic(u_m, theta_hat, hess, grad), opt);
}

Vector solve_theta_m(const Vector& gamma_m, const ObjectiveContext& ctx, const Vector& theta_hat,
                     const InnerOptions& opt) {
  return inner_min(ctx, gamma_m, theta_hat, opt);
}

Matrix variance_m(const Vector& gamma_m, const Vector& theta_m, const ObjectiveContext& ctx) {
  const auto& mom = ctx.moments();
  if (gamma_m.size() != mom.L()) throw ValidationError(kModule, "gamma has the wrong length");
  const Matrix& x = ctx.target_x();
  Matrix w = kernels::kron_covariance(kernels::softmax_p(x, theta_m, mom.K), x) /
             static_cast<double>(x.rows());
  for (int l = 0; l < mom.L(); ++l) w += gamma_m[l] * gamma_m[l] * mom.cov_hat[l];
  const auto llt = factor_or_throw(kernels::hess_s_hat(x, theta_m, mom.K));
  const Matrix y = llt.solve(w);
  const Matrix v = llt.solve(Matrix(y.transpose()));
  return psd_project(v);
}

Interval interval_m(const Vector& theta_m, const Matrix& v_m, int j, double alpha_prime) {
  if (j < 0 || j >= theta_m.size()) throw ValidationError(kModule, "coordinate out of range");
  if (!(alpha_prime > 0.0 && alpha_prime < 1.0)) {
    throw ValidationError(kModule, "alpha' must lie in (0, 1)");
  }
  const double half = upper_quantile(alpha_prime / 2.0) * std::sqrt(std::max(v_m(j, j), kVarianceFloor));
  return {theta_m[j] - half, theta_m[j] + half};
}

std::vector<Interval> ci_union(std::vector<Interval> intervals) {
  std::sort(intervals.begin(), intervals.end(), [](const Interval& a, const Interval& b) {
    return a.lo < b.lo || (a.lo == b.lo && a.hi < b.hi);
  });
  std::vector<Interval> out;
  for (const auto& iv : intervals) {
    if (!out.empty() && iv.lo <= out.back().hi) {
      out.back().hi = std::max(out.back().hi, iv.hi);
    } else {
      out.push_back(iv);
    }
  }
  return out;
}

InferenceResult infer_with_draws(const CgdroFit& fit, const std::vector<Matrix>& draws,
                                 const ProblemConfig& cfg, int coord, const InferenceOptions& opt) {
  cfg.validate();
  if (!fit.ctx) throw ValidationError(kModule, "fit has no objective context");
  const ObjectiveContext& ctx = *fit.ctx;
  const auto& mom = ctx.moments();
  if (coord < 0 || coord >= mom.dk()) {
    throw ValidationError(kModule, "coordinate " + std::to_string(coord) + " outside [0, " +
                                       std::to_string(mom.dk()) + ")");
  }
  const Vector& theta_hat = fit.fit.theta;
  const std::vector<int> kept = filter_indices(draws, mom, cfg.alpha0, cfg.eta0);
  if (kept.empty()) {
    throw NumericalError(kModule, "every perturbation was filtered out; increase M or alpha0", 0.0);
  }
  const auto st = kernels::s_hat_terms(ctx.target_x(), theta_hat, mom.K,
                                       kernels::kGrad | kernels::kHess);

  const std::size_t n_kept = kept.size();
  std::vector<PerturbationRecord> records(n_kept);
  std::vector<std::exception_ptr> errors(n_kept);
  const double alpha_prime = cfg.alpha_prime();
#pragma omp parallel for schedule(dynamic) if (opt.parallel)
  for (std::size_t i = 0; i < n_kept; ++i) {
    try {
      const int m = kept[i];
      const auto sol = solve_gamma_m(draws[static_cast<std::size_t>(m)], theta_hat, st.hess,
                                     st.grad, opt.gamma);
      const Vector theta_m = solve_theta_m(sol.gamma, ctx, theta_hat, opt.inner);
      const Matrix v_m = variance_m(sol.gamma, theta_m, ctx);
      PerturbationRecord& rec = records[i];
      rec.m = m;
      rec.gamma = sol.gamma;
      rec.theta_j = theta_m[coord];
      rec.variance_jj = v_m(coord, coord);
      rec.interval = interval_m(theta_m, v_m, coord, alpha_prime);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  InferenceResult res;
  res.fit = fit.fit;
  res.coord = coord;
  res.alpha = cfg.alpha;
  res.alpha0 = cfg.alpha0;
  res.alpha_prime = alpha_prime;
  res.num_draws = static_cast<int>(draws.size());
  std::vector<Interval> ivs;
  ivs.reserve(n_kept);
  for (const auto& r : records) ivs.push_back(r.interval);
  res.ci = ci_union(std::move(ivs));
  res.kept = std::move(records);
  return res;
}

InferenceResult infer_from_fit(const CgdroFit& fit, const ProblemConfig& cfg, int coord,
                               const InferenceOptions& opt) {
  if (!fit.ctx) throw ValidationError(kModule, "fit has no objective context");
  const auto draws = sample_perturbed_moments(fit.ctx->moments(), cfg.M, derive_seed(cfg.seed, 0xd4a3));
  return infer_with_draws(fit, draws, cfg, coord, opt);
}

InferenceResult infer(const std::vector<LabeledDataset>& sources, const UnlabeledDataset& target,
                      const ProblemConfig& cfg, int coord, const InferenceOptions& opt,
                      const CondProbLearner& learner) {
  const CgdroFit fit = cgdro_fit(sources, target, cfg, learner);
  return infer_from_fit(fit, cfg, coord, opt);
}

}  // namespace cgdro
