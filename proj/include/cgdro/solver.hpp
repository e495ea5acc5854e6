#pragma once

#include "cgdro/data_model.hpp"
#include "cgdro/kernels.hpp"
#include "cgdro/moments.hpp"
#include "cgdro/nuisance.hpp"

#include <memory>
#include <optional>
#include <vector>

namespace cgdro {

/// Quantities of a saddle objective phi(theta, gamma) that is convex in theta
/// and linear in gamma on the simplex.
struct SaddleTerms {
  Vector vertex_values;  // phi(theta, e_l) for each l; filled with kValue
  double value = 0.0;    // phi(theta, gamma); filled with kValue
  Vector grad;           // gradient in theta; filled with kGrad
  Matrix hess;           // Hessian in theta; filled with kHess
};

class SaddleObjective {
 public:
  virtual ~SaddleObjective() = default;
  virtual int dim() const = 0;
  virtual int num_sources() const = 0;
  virtual SaddleTerms evaluate(const Vector& theta, const Vector& gamma, unsigned need) const = 0;

  double value(const Vector& theta, const Vector& gamma) const {
    return evaluate(theta, gamma, kernels::kValue).value;
  }
};

/// phi(theta, gamma) = sum_l gamma_l theta' mu_l + S(theta), S evaluated on
/// the target covariates.
class ObjectiveContext final : public SaddleObjective {
 public:
  ObjectiveContext(MomentSet moments, Matrix target_x);

  int dim() const override { return moments_.dk(); }
  int num_sources() const override { return moments_.L(); }
  SaddleTerms evaluate(const Vector& theta, const Vector& gamma, unsigned need) const override;

  const MomentSet& moments() const { return moments_; }
  const Matrix& target_x() const { return target_x_; }
  int K() const { return moments_.K; }

 private:
  MomentSet moments_;
  Matrix target_x_;
};

/// phi(theta, gamma) = sum_l gamma_l · (average cross-entropy on source l).
class GroupDroObjective final : public SaddleObjective {
 public:
  GroupDroObjective(const std::vector<LabeledDataset>& sources, int K);

  int dim() const override { return d_ * K_; }
  int num_sources() const override { return static_cast<int>(x_.size()); }
  SaddleTerms evaluate(const Vector& theta, const Vector& gamma, unsigned need) const override;

 private:
  int d_ = 0;
  int K_ = 0;
  std::vector<Matrix> x_;
  std::vector<Vector> label_mean_;  // (1/n) sum 1(y=c) x, stacked
};

struct InnerOptions {
  double tol = 1e-9;
  int max_iter = 100;
};

/// argmin_theta phi(theta, gamma) by damped Newton from theta_init. Throws
/// NumericalError carrying the final gradient norm on failure.
Vector inner_min(const SaddleObjective& obj, const Vector& gamma, const Vector& theta_init,
                 const InnerOptions& opt = {});

struct DualityGap {
  double gap = 0.0;
  double primal = 0.0;  // max_gamma phi(theta, gamma)
  double dual = 0.0;    // min_theta phi(theta, gamma)
  int argmax_source = 0;
  Vector inner_theta;
};

/// max over simplex vertices (ties to the lowest index) minus the inner
/// minimum at gamma, warm-started from `warm` (theta when empty).
DualityGap duality_gap(const SaddleObjective& obj, const Vector& theta, const Vector& gamma,
                       const Vector& warm = {}, const InnerOptions& opt = {});

struct MirrorProxOptions {
  double eta = 0.1;
  std::optional<double> eta_theta;  // default eta
  std::optional<double> eta_gamma;  // default eta / log L, or eta when L = 1
  int max_iter = 20000;
  double epsilon = 1e-4;
  int gap_check_every = 25;
  InnerOptions inner;

  static MirrorProxOptions from(const ProblemConfig& cfg);
};

/// Optimistic Mirror Prox with averaged outputs. Stops when the certified
/// gap of the averages is at most epsilon or after max_iter iterations.
FitResult mirror_prox(const SaddleObjective& obj, const MirrorProxOptions& opt);

/// Everything a fit produces, kept for inference.
struct CgdroFit {
  FitResult fit;
  std::shared_ptr<const ObjectiveContext> ctx;
  std::vector<NuisancePair> nuisance;  // empty in the no-shift regime
};

/// Per-source moments: DML with cross-fitted nuisances, or label averages
/// when cfg.no_shift.
MomentSet estimate_moments(const std::vector<LabeledDataset>& sources,
                           const UnlabeledDataset& target, const ProblemConfig& cfg,
                           std::vector<NuisancePair>* nuisance_out = nullptr,
                           const CondProbLearner& learner = {});

CgdroFit cgdro_fit(const std::vector<LabeledDataset>& sources, const UnlabeledDataset& target,
                   const ProblemConfig& cfg, const CondProbLearner& learner = {});

FitResult group_dro(const std::vector<LabeledDataset>& sources, const MirrorProxOptions& opt,
                    int K = 0);

/// Multinomial logistic MLE without intercept on the pooled sources.
Vector erm_pooled(const std::vector<LabeledDataset>& sources, double ridge = 0.0, int K = 0);

}  // namespace cgdro
