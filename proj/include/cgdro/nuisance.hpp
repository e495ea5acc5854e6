#pragma once

#include "cgdro/data_model.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

namespace cgdro {

inline constexpr double kProbClip = 1e-6;

struct ClipBounds {
  double lo = 0.05;
  double hi = 20.0;
};

/// A fitted conditional class-probability model.
class ProbabilityModel {
 public:
  virtual ~ProbabilityModel() = default;
  /// n × (K+1) matrix whose rows sum to 1 (unclipped).
  virtual Matrix predict_proba(const Matrix& x) const = 0;
  virtual int num_classes() const = 0;  // K
};

/// Multinomial logistic model with reference class 0 and an unpenalized
/// intercept.
class LogisticModel final : public ProbabilityModel {
 public:
  Matrix coef;       // d × K, column k-1 holds class k
  Vector intercept;  // K
  double ridge = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;

  Matrix predict_proba(const Matrix& x) const override;
  int num_classes() const override { return static_cast<int>(coef.cols()); }
};

/// Predicts fixed class frequencies regardless of x.
class ConstantModel final : public ProbabilityModel {
 public:
  explicit ConstantModel(Vector probs) : probs_(std::move(probs)) {}
  Matrix predict_proba(const Matrix& x) const override;
  int num_classes() const override { return static_cast<int>(probs_.size()) - 1; }
  const Vector& probs() const { return probs_; }

 private:
  Vector probs_;
};

struct LogisticFitOptions {
  double ridge = 0.0;
  int max_iter = 100;
  double tol = 1e-8;
  bool fit_intercept = true;
};

/// Minimizes average cross-entropy + (ridge/2)·||coef||² by damped Newton.
/// Throws NumericalError (residual = final gradient norm) if the gradient
/// sup-norm is still above tol after max_iter steps.
LogisticModel fit_multinomial_logistic(const Matrix& x, const Labels& y, int K,
                                       const LogisticFitOptions& opt);

struct LearnerOptions {
  std::vector<double> ridge_grid{1e-3, 1e-2, 1e-1};
  bool cross_validate = true;
  double ridge = 1e-2;  // used when cross_validate is false
  int cv_folds = 5;
  int max_iter = 100;
  double tol = 1e-8;
};

/// Ridge value from the grid minimizing k-fold held-out log-loss; ties go to
/// the earlier grid entry.
double select_ridge_cv(const Matrix& x, const Labels& y, int K, const LearnerOptions& opt,
                       std::uint64_t seed);

/// Trains a model on (x, y) with K non-reference classes.
using CondProbLearner = std::function<std::shared_ptr<const ProbabilityModel>(
    const Matrix& x, const Labels& y, int K, std::uint64_t seed)>;

CondProbLearner logistic_learner(const LearnerOptions& opt);

/// Density ratio via a binary domain classifier labelling target rows G=1:
///   omega(x) = (n_source / n_target) · P(G=1|x) / P(G=0|x), clipped.
class DensityRatioModel {
 public:
  LogisticModel domain;
  double prior_ratio = 1.0;
  ClipBounds clip;

  Vector predict(const Matrix& x) const;
};

DensityRatioModel fit_density_ratio(const Matrix& source_x, const Matrix& target_x,
                                    const ClipBounds& clip, const LearnerOptions& opt,
                                    std::uint64_t seed);

/// Two-fold split: a shuffled permutation whose first floor(n/2) entries
/// form fold A. Index lists are sorted.
struct FoldSplit {
  std::vector<Index> a;
  std::vector<Index> b;
  std::vector<char> in_a;  // per row

  static FoldSplit make(Index n, std::uint64_t seed);
};

/// f^ fitted on each fold. Source rows receive the prediction of the model
/// trained on the other fold; target rows receive the fold average.
struct CondProbPair {
  FoldSplit split;
  std::shared_ptr<const ProbabilityModel> model_a;  // trained on fold A
  std::shared_ptr<const ProbabilityModel> model_b;
  bool fallback_a = false;
  bool fallback_b = false;
  int K = 0;

  /// n × K probabilities for classes 1..K, clipped to [1e-6, 1-1e-6].
  Matrix predict_source(const Matrix& x) const;
  Matrix predict_target(const Matrix& x) const;
};

CondProbPair cross_fit_cond_prob(const LabeledDataset& ds, int K, const CondProbLearner& learner,
                                 std::uint64_t seed);

struct DensityRatioPair {
  FoldSplit split;
  DensityRatioModel model_a;  // source fold A vs all target rows
  DensityRatioModel model_b;

  Vector predict_source(const Matrix& x) const;
};

DensityRatioPair cross_fit_density_ratio(const LabeledDataset& ds, const UnlabeledDataset& target,
                                         const FoldSplit& split, const ClipBounds& clip,
                                         const LearnerOptions& opt, std::uint64_t seed);

struct NuisancePredictions {
  Matrix f_source;  // n × K, out-of-fold
  Matrix f_target;  // N × K, fold average
  Vector w_source;  // n
};

/// Cross-fitted f^ and, unless absent, omega^ for one source; both use the
/// same fold split.
struct NuisancePair {
  CondProbPair f;
  std::optional<DensityRatioPair> omega;  // absent means omega == 1

  NuisancePredictions predict(const LabeledDataset& ds, const UnlabeledDataset& target) const;
  NuisanceDiagnostics diagnostics(int source_id) const;
};

struct NuisanceOptions {
  LearnerOptions learner;
  ClipBounds clip;
  bool density_ratio = true;
};

NuisancePair fit_nuisance(const LabeledDataset& ds, const UnlabeledDataset& target, int K,
                          const NuisanceOptions& opt, std::uint64_t seed,
                          const CondProbLearner& learner = {});

}  // namespace cgdro
