#pragma once

#include "cgdro/data_model.hpp"
#include "cgdro/moments.hpp"
#include "cgdro/solver.hpp"

#include <cstdint>
#include <vector>

namespace cgdro {

/// M draws; draw m is a dK × L matrix whose column l ~ N(mu_hat[l], cov_hat[l]).
/// Draw m uses the stream derive_seed(seed, m), so any subset can be
/// regenerated independently.
std::vector<Matrix> sample_perturbed_moments(const MomentSet& moments, int M, std::uint64_t seed);

/// (1 + eta0) · z_{alpha0 / (dK·L)}, with z_q the upper q-quantile.
double filter_threshold(double alpha0, double eta0, int dk, int L);

/// Indices m (ascending) whose standardized deviation
///   max_{l,j} |draw_m(j,l) - mu_hat[l](j)| / sqrt(cov_hat[l](j,j) + 1/n_l)
/// is within filter_threshold.
std::vector<int> filter_indices(const std::vector<Matrix>& draws, const MomentSet& moments,
                                double alpha0, double eta0);

/// Euclidean projection onto the probability simplex.
Vector project_simplex(const Vector& v);

/// Concave quadratic F(gamma) = -0.5 gamma' A gamma + b' gamma on the simplex.
struct SimplexQuadratic {
  Matrix A;
  Vector b;

  double value(const Vector& gamma) const { return -0.5 * gamma.dot(A * gamma) + b.dot(gamma); }
  Vector grad(const Vector& gamma) const { return b - A * gamma; }
  /// ||gamma - P(gamma + grad F(gamma))||_inf; zero exactly at the maximizer.
  double kkt_residual(const Vector& gamma) const;
};

/// Builds F from the perturbed moment matrix u_m (dK × L), the point
/// estimate theta_hat and H = Hess S(theta_hat), g = grad S(theta_hat):
///   F(gamma) = -0.5 (u_m gamma + g)' H^{-1} (u_m gamma + g) + theta_hat' u_m gamma
/// up to a constant.
SimplexQuadratic perturbed_quadratic(const Matrix& u_m, const Vector& theta_hat, const Matrix& hess,
                                     const Vector& grad);

struct GammaSolverOptions {
  double tol = 1e-9;
  int max_iter = 10000;
};

struct GammaSolution {
  Vector gamma;
  double kkt_residual = 0.0;
  int iterations = 0;
};

/// Accelerated projected gradient with step 1/lambda_max(A) from the uniform
/// point, restarted whenever F decreases. Throws NumericalError with the
/// residual if tol is not met within max_iter.
GammaSolution maximize_on_simplex(const SimplexQuadratic& q, const GammaSolverOptions& opt = {});

GammaSolution solve_gamma_m(const Matrix& u_m, const Vector& theta_hat, const Matrix& hess,
                            const Vector& grad, const GammaSolverOptions& opt = {});

/// argmin_theta sum_l gamma_l theta' mu_hat[l] + S(theta), warm-started at
/// theta_hat. Uses the unperturbed moments.
Vector solve_theta_m(const Vector& gamma_m, const ObjectiveContext& ctx, const Vector& theta_hat,
                     const InnerOptions& opt = {});

/// H^{-1} W H^{-1} with H = Hess S(theta_m) and
///   W = sum_l gamma_l² cov_hat[l] + (1/N) Cov_Q(p(x, theta_m) ⊗ x).
Matrix variance_m(const Vector& gamma_m, const Vector& theta_m, const ObjectiveContext& ctx);

/// theta_m[j] ± z_{alpha'/2} sqrt(max(V_jj, 1e-12)).
Interval interval_m(const Vector& theta_m, const Matrix& v_m, int j, double alpha_prime);

/// Sorted union of closed intervals; touching intervals merge.
std::vector<Interval> ci_union(std::vector<Interval> intervals);

struct InferenceOptions {
  bool parallel = true;  // parallelize over kept draws
  GammaSolverOptions gamma;
  InnerOptions inner;
};

/// Perturbation intervals for coordinate `coord` (0-based) from a finished
/// fit and a fixed set of draws.
InferenceResult infer_with_draws(const CgdroFit& fit, const std::vector<Matrix>& draws,
                                 const ProblemConfig& cfg, int coord,
                                 const InferenceOptions& opt = {});

/// Draws cfg.M perturbations with seed derive_seed(cfg.seed, 0xd4a3) and
/// calls infer_with_draws.
InferenceResult infer_from_fit(const CgdroFit& fit, const ProblemConfig& cfg, int coord,
                               const InferenceOptions& opt = {});

/// Full pipeline: fit, moments, draws, filter, per-draw intervals, union.
InferenceResult infer(const std::vector<LabeledDataset>& sources, const UnlabeledDataset& target,
                      const ProblemConfig& cfg, int coord, const InferenceOptions& opt = {},
                      const CondProbLearner& learner = {});

}  // namespace cgdro
