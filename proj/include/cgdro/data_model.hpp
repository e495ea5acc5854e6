#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace cgdro {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Labels = Eigen::VectorXi;

/// One source domain: covariates (n × d) and labels in {0, ..., K}.
/// Class 0 is the reference category.
struct LabeledDataset {
  Matrix x;
  Labels y;
  int source_id = 1;

  Index size() const { return x.rows(); }
  int dim() const { return static_cast<int>(x.cols()); }
  int max_label() const { return y.size() == 0 ? 0 : y.maxCoeff(); }
};

/// Target-domain covariates (N × d); no labels.
struct UnlabeledDataset {
  Matrix x;

  Index size() const { return x.rows(); }
  int dim() const { return static_cast<int>(x.cols()); }
};

/// Problem dimensions. Parameter vectors have length d*K and are stacked
/// class-major: (theta_1, ..., theta_K), theta_0 == 0 is never stored.
struct Dims {
  int d = 0;
  int K = 0;
  int L = 0;

  int dk() const { return d * K; }
};

/// Throws ValidationError unless n >= 2, rows are finite and every label lies
/// in {0, ..., K}.
void validate(const LabeledDataset& ds, int K);
void validate(const UnlabeledDataset& ds);

/// Checks d and K agree across all sources and the target, validates every
/// dataset, and returns the dims. K is the largest observed label unless
/// `declared_K` is positive.
Dims check_problem(const std::vector<LabeledDataset>& sources,
                   const UnlabeledDataset& target, int declared_K = 0);

struct ProblemConfig {
  double alpha = 0.05;    // significance level, in (0, 0.5)
  double alpha0 = 0.01;   // filter budget, in (0, 0.01]
  double eta0 = 0.1;      // filter slack
  int M = 500;            // number of perturbation draws
  double eta = 0.1;       // Mirror Prox learning-rate scale
  int max_iter = 20000;   // T
  double tol = 1e-4;      // duality-gap tolerance
  double ridge = 1e-2;    // nuisance ridge penalty when cv_ridge is false
  std::uint64_t seed = 0;

  bool no_shift = false;      // use the label-average moments, omega == 1
  bool cv_ridge = true;       // choose the nuisance ridge by 5-fold CV
  int gap_check_every = 25;

  double alpha_prime() const { return alpha - alpha0; }

  /// Throws ValidationError on out-of-range fields.
  void validate() const;
};

struct GapRecord {
  int iteration = 0;
  double gap = 0.0;
};

struct NuisanceDiagnostics {
  int source_id = 0;
  double ridge_a = 0.0;
  double ridge_b = 0.0;
  double grad_norm_a = 0.0;
  double grad_norm_b = 0.0;
  bool fallback_a = false;
  bool fallback_b = false;
  double ratio_grad_norm = 0.0;  // worst of the two domain classifiers
};

/// Output of a minimax solve. For ERM, gamma is empty and gap_trace too.
struct FitResult {
  std::string method = "cgdro";
  Vector theta;
  Vector gamma;
  std::vector<GapRecord> gap_trace;
  int iterations = 0;
  bool converged = false;
  std::vector<NuisanceDiagnostics> nuisance;

  double final_gap() const {
    return gap_trace.empty() ? 0.0 : gap_trace.back().gap;
  }
};

/// Closed interval [lo, hi].
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double width() const { return hi - lo; }
  bool contains(double v) const { return lo <= v && v <= hi; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Per-draw output for a kept index m.
struct PerturbationRecord {
  int m = 0;
  Vector gamma;
  double theta_j = 0.0;
  double variance_jj = 0.0;
  Interval interval;
};

struct InferenceResult {
  FitResult fit;
  int coord = 0;  // 0-based coordinate of theta
  double alpha = 0.05;
  double alpha0 = 0.01;
  double alpha_prime = 0.04;
  int num_draws = 0;  // M
  std::vector<PerturbationRecord> kept;
  std::vector<Interval> ci;  // sorted, disjoint

  int filtered_m() const { return static_cast<int>(kept.size()); }
  double ci_length() const;
  bool covers(double v) const;
  bool reject_zero() const { return !covers(0.0); }
};

}  // namespace cgdro
