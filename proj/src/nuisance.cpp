#include "cgdro/nuisance.hpp"

#include "cgdro/error.hpp"
#include "cgdro/kernels.hpp"
#include "cgdro/rng.hpp"
#include "newton.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace cgdro {

namespace {

constexpr const char* kModule = "nuisance";

Matrix one_hot(const Labels& y, int K) {
  Matrix h = Matrix::Zero(y.size(), K);
  for (Index i = 0; i < y.size(); ++i) {
    if (y[i] > 0) h(i, y[i] - 1) = 1.0;
  }
  return h;
}

Vector class_counts(const Labels& y, int K) {
  Vector c = Vector::Zero(K + 1);
  for (Index i = 0; i < y.size(); ++i) c[y[i]] += 1.0;
  return c;
}

bool all_classes_present(const Labels& y, int K) {
  return (class_counts(y, K).array() > 0.0).all();
}

Matrix take_rows(const Matrix& x, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = x.row(rows[i]);
  return out;
}

Labels take_rows(const Labels& y, const std::vector<Index>& rows) {
  Labels out(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Index>(i)] = y[rows[i]];
  return out;
}

Matrix clip_probs(Matrix p) {
  return p.cwiseMax(kProbClip).cwiseMin(1.0 - kProbClip);
}

double held_out_log_loss(const ProbabilityModel& model, const Matrix& x, const Labels& y) {
  const Matrix p = model.predict_proba(x);
  double loss = 0.0;
  for (Index i = 0; i < y.size(); ++i) loss -= std::log(std::max(p(i, y[i]), kProbClip));
  return loss / static_cast<double>(y.size());
}

std::shared_ptr<const ProbabilityModel> constant_model(const Labels& y, int K) {
  Vector c = class_counts(y, K);
  return std::make_shared<ConstantModel>(c / c.sum());
}

}  // namespace

Matrix LogisticModel::predict_proba(const Matrix& x) const {
  const Index K = coef.cols();
  Matrix s = x * coef;
  if (intercept.size() == K) s.rowwise() += intercept.transpose();
  Matrix p(x.rows(), K + 1);
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = std::max(0.0, s.row(i).maxCoeff());
    p(i, 0) = std::exp(-m);
    for (Index k = 0; k < K; ++k) p(i, k + 1) = std::exp(s(i, k) - m);
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

Matrix ConstantModel::predict_proba(const Matrix& x) const {
  return probs_.transpose().replicate(x.rows(), 1);
}

LogisticModel fit_multinomial_logistic(const Matrix& x, const Labels& y, int K,
                                       const LogisticFitOptions& opt) {
  if (x.rows() != y.size() || x.rows() == 0) {
    throw ValidationError(kModule, "logistic fit needs matching, non-empty x and y");
  }
  if (K < 1) throw ValidationError(kModule, "K must be at least 1");
  if ((y.array() < 0).any() || (y.array() > K).any()) {
    throw ValidationError(kModule, "labels outside {0,...,K}");
  }
  if (opt.ridge <= 0.0 && (class_counts(y, K).array() > 0.0).count() < 2) {
    throw ValidationError(kModule, "need at least two classes present when ridge is zero");
  }
  const Index d = x.cols();
  const Index da = d + (opt.fit_intercept ? 1 : 0);
  Matrix xa(x.rows(), da);
  xa.leftCols(d) = x;
  if (opt.fit_intercept) xa.col(d).setOnes();

  const Vector r = kernels::kron_mean(one_hot(y, K), xa);
  Vector penalty = Vector::Constant(da * K, opt.ridge);
  if (opt.fit_intercept) {
    for (int k = 0; k < K; ++k) penalty[k * da + d] = 0.0;
  }

  auto terms = [&](const Vector& beta, unsigned need) {
    auto t = kernels::s_hat_terms(xa, beta, K, need);
    t.value += -beta.dot(r) + 0.5 * beta.dot(penalty.cwiseProduct(beta));
    if (need & kernels::kGrad) t.grad += penalty.cwiseProduct(beta) - r;
    if (need & kernels::kHess) t.hess.diagonal() += penalty;
    return t;
  };
  detail::NewtonOptions nopt;
  nopt.tol = opt.tol;
  nopt.max_iter = opt.max_iter;
  auto res = detail::damped_newton(terms, Vector::Zero(da * K), nopt);
  if (!res.converged) {
    throw NumericalError(kModule,
                         "multinomial logistic fit did not converge; gradient norm " +
                             std::to_string(res.grad_norm),
                         res.grad_norm);
  }
  LogisticModel model;
  const Eigen::Map<const Matrix> beta(res.x.data(), da, K);
  model.coef = beta.topRows(d);
  model.intercept = opt.fit_intercept ? Vector(beta.row(d).transpose()) : Vector::Zero(K);
  model.ridge = opt.ridge;
  model.grad_norm = res.grad_norm;
  model.iterations = res.iterations;
  return model;
}

double select_ridge_cv(const Matrix& x, const Labels& y, int K, const LearnerOptions& opt,
                       std::uint64_t seed) {
  if (opt.ridge_grid.empty()) throw ValidationError(kModule, "empty ridge grid");
  const Index n = x.rows();
  const int folds = std::max(2, std::min<int>(opt.cv_folds, static_cast<int>(n)));
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  std::vector<std::vector<Index>> train(folds), test(folds);
  for (Index i = 0; i < n; ++i) {
    const int f = static_cast<int>(i % folds);
    for (int g = 0; g < folds; ++g) (g == f ? test : train)[g].push_back(perm[i]);
  }
  for (auto& v : train) std::sort(v.begin(), v.end());
  for (auto& v : test) std::sort(v.begin(), v.end());

  double best = std::numeric_limits<double>::infinity();
  double best_ridge = opt.ridge_grid.front();
  for (double ridge : opt.ridge_grid) {
    double total = 0.0;
    int used = 0;
    for (int f = 0; f < folds; ++f) {
      const Labels ytr = take_rows(y, train[f]);
      if (!all_classes_present(ytr, K) || test[f].empty()) continue;
      LogisticFitOptions fo{ridge, opt.max_iter, opt.tol, true};
      const auto model = fit_multinomial_logistic(take_rows(x, train[f]), ytr, K, fo);
      total += held_out_log_loss(model, take_rows(x, test[f]), take_rows(y, test[f]));
      ++used;
    }
    const double score = used ? total / used : std::numeric_limits<double>::infinity();
    if (score < best) {
      best = score;
      best_ridge = ridge;
    }
  }
  return best_ridge;
}

CondProbLearner logistic_learner(const LearnerOptions& opt) {
  return [opt](const Matrix& x, const Labels& y, int K,
               std::uint64_t seed) -> std::shared_ptr<const ProbabilityModel> {
    const double ridge = opt.cross_validate ? select_ridge_cv(x, y, K, opt, seed) : opt.ridge;
    LogisticFitOptions fo{ridge, opt.max_iter, opt.tol, true};
    return std::make_shared<LogisticModel>(fit_multinomial_logistic(x, y, K, fo));
  };
}

Vector DensityRatioModel::predict(const Matrix& x) const {
  const Matrix p = domain.predict_proba(x);
  Vector w(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const double p1 = std::clamp(p(i, 1), kProbClip, 1.0 - kProbClip);
    w[i] = std::clamp(prior_ratio * p1 / (1.0 - p1), clip.lo, clip.hi);
  }
  return w;
}

DensityRatioModel fit_density_ratio(const Matrix& source_x, const Matrix& target_x,
                                    const ClipBounds& clip, const LearnerOptions& opt,
                                    std::uint64_t seed) {
  if (source_x.rows() == 0 || target_x.rows() == 0) {
    throw ValidationError(kModule, "density ratio needs non-empty source and target sets");
  }
  if (source_x.cols() != target_x.cols()) {
    throw ValidationError(kModule, "source and target dimensions differ");
  }
  if (!(clip.lo > 0.0 && clip.lo <= clip.hi)) {
    throw ValidationError(kModule, "invalid density-ratio clip bounds");
  }
  const Index ns = source_x.rows(), nt = target_x.rows();
  Matrix x(ns + nt, source_x.cols());
  x.topRows(ns) = source_x;
  x.bottomRows(nt) = target_x;
  Labels g(ns + nt);
  g.head(ns).setZero();
  g.tail(nt).setOnes();

  const double ridge = opt.cross_validate ? select_ridge_cv(x, g, 1, opt, seed) : opt.ridge;
  DensityRatioModel model;
  model.domain = fit_multinomial_logistic(x, g, 1, {ridge, opt.max_iter, opt.tol, true});
  model.prior_ratio = static_cast<double>(ns) / static_cast<double>(nt);
  model.clip = clip;
  return model;
}

FoldSplit FoldSplit::make(Index n, std::uint64_t seed) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  FoldSplit s;
  const auto half = static_cast<std::ptrdiff_t>(n / 2);
  s.a.assign(perm.begin(), perm.begin() + half);
  s.b.assign(perm.begin() + half, perm.end());
  std::sort(s.a.begin(), s.a.end());
  std::sort(s.b.begin(), s.b.end());
  s.in_a.assign(static_cast<std::size_t>(n), 0);
  for (Index i : s.a) s.in_a[static_cast<std::size_t>(i)] = 1;
  return s;
}

Matrix CondProbPair::predict_source(const Matrix& x) const {
  if (static_cast<std::size_t>(x.rows()) != split.in_a.size()) {
    throw ValidationError(kModule, "source rows do not match the fold split");
  }
  const Matrix pa = model_a->predict_proba(x);
  const Matrix pb = model_b->predict_proba(x);
  Matrix out(x.rows(), K);
  for (Index i = 0; i < x.rows(); ++i) {
    // Row in fold A is scored by the model trained on fold B and vice versa.
    const Matrix& p = split.in_a[static_cast<std::size_t>(i)] ? pb : pa;
    out.row(i) = p.row(i).tail(K);
  }
  return clip_probs(out);
}

Matrix CondProbPair::predict_target(const Matrix& x) const {
  const Matrix pa = model_a->predict_proba(x);
  const Matrix pb = model_b->predict_proba(x);
  return clip_probs(0.5 * (pa.rightCols(K) + pb.rightCols(K)));
}

CondProbPair cross_fit_cond_prob(const LabeledDataset& ds, int K, const CondProbLearner& learner,
                                 std::uint64_t seed) {
  if (ds.size() < 4) {
    throw ValidationError(kModule, "source " + std::to_string(ds.source_id) +
                                       ": cross-fitting needs at least 4 rows");
  }
  CondProbPair pair;
  pair.K = K;
  pair.split = FoldSplit::make(ds.size(), derive_seed(seed, 1));
  const auto fit_fold = [&](const std::vector<Index>& rows, std::uint64_t s, bool& fallback) {
    const Labels y = take_rows(ds.y, rows);
    if (!all_classes_present(y, K)) {
      fallback = true;
      return constant_model(ds.y, K);
    }
    return learner(take_rows(ds.x, rows), y, K, s);
  };
  pair.model_a = fit_fold(pair.split.a, derive_seed(seed, 2), pair.fallback_a);
  pair.model_b = fit_fold(pair.split.b, derive_seed(seed, 3), pair.fallback_b);
  return pair;
}

Vector DensityRatioPair::predict_source(const Matrix& x) const {
  if (static_cast<std::size_t>(x.rows()) != split.in_a.size()) {
    throw ValidationError(kModule, "source rows do not match the fold split");
  }
  const Vector wa = model_a.predict(x);
  const Vector wb = model_b.predict(x);
  Vector out(x.rows());
  for (Index i = 0; i < x.rows(); ++i) out[i] = split.in_a[static_cast<std::size_t>(i)] ? wb[i] : wa[i];
  return out;
}

DensityRatioPair cross_fit_density_ratio(const LabeledDataset& ds, const UnlabeledDataset& target,
                                         const FoldSplit& split, const ClipBounds& clip,
                                         const LearnerOptions& opt, std::uint64_t seed) {
  if (static_cast<std::size_t>(ds.size()) != split.in_a.size()) {
    throw ValidationError(kModule, "fold split does not match the source size");
  }
  DensityRatioPair pair;
  pair.split = split;
  pair.model_a = fit_density_ratio(take_rows(ds.x, split.a), target.x, clip, opt, derive_seed(seed, 4));
  pair.model_b = fit_density_ratio(take_rows(ds.x, split.b), target.x, clip, opt, derive_seed(seed, 5));
  return pair;
}

NuisancePredictions NuisancePair::predict(const LabeledDataset& ds,
                                          const UnlabeledDataset& target) const {
  NuisancePredictions out;
  out.f_source = f.predict_source(ds.x);
  out.f_target = f.predict_target(target.x);
  out.w_source = omega ? omega->predict_source(ds.x) : Vector::Ones(ds.size());
  return out;
}

NuisanceDiagnostics NuisancePair::diagnostics(int source_id) const {
  NuisanceDiagnostics diag;
  diag.source_id = source_id;
  diag.fallback_a = f.fallback_a;
  diag.fallback_b = f.fallback_b;
  if (const auto* m = dynamic_cast<const LogisticModel*>(f.model_a.get())) {
    diag.ridge_a = m->ridge;
    diag.grad_norm_a = m->grad_norm;
  }
  if (const auto* m = dynamic_cast<const LogisticModel*>(f.model_b.get())) {
    diag.ridge_b = m->ridge;
    diag.grad_norm_b = m->grad_norm;
  }
  if (omega) {
    diag.ratio_grad_norm =
        std::max(omega->model_a.domain.grad_norm, omega->model_b.domain.grad_norm);
  }
  return diag;
}

NuisancePair fit_nuisance(const LabeledDataset& ds, const UnlabeledDataset& target, int K,
                          const NuisanceOptions& opt, std::uint64_t seed,
                          const CondProbLearner& learner) {
  NuisancePair pair;
  pair.f = cross_fit_cond_prob(ds, K, learner ? learner : logistic_learner(opt.learner), seed);
  if (opt.density_ratio) {
    pair.omega = cross_fit_density_ratio(ds, target, pair.f.split, opt.clip, opt.learner, seed);
  }
  return pair;
}

}  // namespace cgdro
