#include "cgdro/solver.hpp"

#include "cgdro/error.hpp"
#include "cgdro/rng.hpp"
#include "newton.hpp"

#include <cmath>
#include <exception>

namespace cgdro {

namespace {

constexpr const char* kModule = "solver";

Matrix indicator(const Labels& y, int K) {
  Matrix h = Matrix::Zero(y.size(), K);
  for (Index i = 0; i < y.size(); ++i) {
    if (y[i] > 0) h(i, y[i] - 1) = 1.0;
  }
  return h;
}

void check_gamma(const Vector& gamma, int L) {
  if (gamma.size() != L) {
    throw ValidationError(kModule, "gamma has length " + std::to_string(gamma.size()) +
                                       ", expected " + std::to_string(L));
  }
}

void normalize_log(Vector& logw) {
  const double m = logw.maxCoeff();
  logw.array() -= m + std::log((logw.array() - m).exp().sum());
}

int infer_K(const std::vector<LabeledDataset>& sources, int K) {
  if (K > 0) return K;
  for (const auto& s : sources) K = std::max(K, s.max_label());
  if (K < 1) throw ValidationError(kModule, "labels must include a non-reference class");
  return K;
}

}  // namespace

ObjectiveContext::ObjectiveContext(MomentSet moments, Matrix target_x)
    : moments_(std::move(moments)), target_x_(std::move(target_x)) {
  if (target_x_.cols() != moments_.d || moments_.L() == 0) {
    throw ValidationError(kModule, "moment dimension does not match the target covariates");
  }
}

SaddleTerms ObjectiveContext::evaluate(const Vector& theta, const Vector& gamma,
                                       unsigned need) const {
  check_gamma(gamma, num_sources());
  auto s = kernels::s_hat_terms(target_x_, theta, moments_.K, need);
  SaddleTerms out;
  if (need & kernels::kValue) {
    const Vector lin = moments_.u_hat.transpose() * theta;
    out.vertex_values = lin.array() + s.value;
    out.value = gamma.dot(lin) + s.value;
  }
  if (need & kernels::kGrad) out.grad = s.grad + moments_.u_hat * gamma;
  if (need & kernels::kHess) out.hess = std::move(s.hess);
  return out;
}

GroupDroObjective::GroupDroObjective(const std::vector<LabeledDataset>& sources, int K)
    : K_(infer_K(sources, K)) {
  if (sources.empty()) throw ValidationError(kModule, "no source datasets");
  d_ = sources.front().dim();
  for (const auto& s : sources) {
    validate(s, K_);
    if (s.dim() != d_) throw ValidationError(kModule, "sources differ in dimension");
    x_.push_back(s.x);
    label_mean_.push_back(kernels::kron_mean(indicator(s.y, K_), s.x));
  }
}

SaddleTerms GroupDroObjective::evaluate(const Vector& theta, const Vector& gamma,
                                        unsigned need) const {
  const int L = num_sources();
  check_gamma(gamma, L);
  SaddleTerms out;
  const unsigned per_source = need | kernels::kValue;
  out.vertex_values.resize(L);
  if (need & kernels::kGrad) out.grad = Vector::Zero(dim());
  if (need & kernels::kHess) out.hess = Matrix::Zero(dim(), dim());
  for (int l = 0; l < L; ++l) {
    auto s = kernels::s_hat_terms(x_[l], theta, K_, per_source);
    out.vertex_values[l] = s.value - theta.dot(label_mean_[l]);
    if (need & kernels::kGrad) out.grad += gamma[l] * (s.grad - label_mean_[l]);
    if (need & kernels::kHess) out.hess += gamma[l] * s.hess;
  }
  out.value = gamma.dot(out.vertex_values);
  return out;
}

Vector inner_min(const SaddleObjective& obj, const Vector& gamma, const Vector& theta_init,
                 const InnerOptions& opt) {
  check_gamma(gamma, obj.num_sources());
  if (theta_init.size() != obj.dim()) {
    throw ValidationError(kModule, "warm start has the wrong dimension");
  }
  auto terms = [&](const Vector& theta, unsigned need) {
    auto t = obj.evaluate(theta, gamma, need);
    kernels::SoftmaxTerms out;
    out.value = t.value;
    out.grad = std::move(t.grad);
    out.hess = std::move(t.hess);
    return out;
  };
  detail::NewtonOptions nopt;
  nopt.tol = opt.tol;
  nopt.max_iter = opt.max_iter;
  auto res = detail::damped_newton(terms, theta_init, nopt);
  if (!res.converged) {
    throw NumericalError(kModule,
                         "inner minimization did not converge; gradient norm " +
                             std::to_string(res.grad_norm),
                         res.grad_norm);
  }
  return res.x;
}

DualityGap duality_gap(const SaddleObjective& obj, const Vector& theta, const Vector& gamma,
                       const Vector& warm, const InnerOptions& opt) {
  DualityGap g;
  const auto at_theta = obj.evaluate(theta, gamma, kernels::kValue);
  Index arg = 0;
  g.primal = at_theta.vertex_values.maxCoeff(&arg);
  g.argmax_source = static_cast<int>(arg);
  g.inner_theta = inner_min(obj, gamma, warm.size() ? warm : theta, opt);
  g.dual = obj.value(g.inner_theta, gamma);
  g.gap = g.primal - g.dual;
  return g;
}

MirrorProxOptions MirrorProxOptions::from(const ProblemConfig& cfg) {
  MirrorProxOptions o;
  o.eta = cfg.eta;
  o.max_iter = cfg.max_iter;
  o.epsilon = cfg.tol;
  o.gap_check_every = cfg.gap_check_every;
  return o;
}

FitResult mirror_prox(const SaddleObjective& obj, const MirrorProxOptions& opt) {
  const int L = obj.num_sources();
  const int p = obj.dim();
  if (L < 1 || p < 1) throw ValidationError(kModule, "empty saddle problem");
  if (!(opt.eta > 0.0) || opt.max_iter < 1 || opt.gap_check_every < 1) {
    throw ValidationError(kModule, "invalid Mirror Prox options");
  }
  const double eta_theta = opt.eta_theta.value_or(opt.eta);
  const double eta_gamma = opt.eta_gamma.value_or(L >= 2 ? opt.eta / std::log(L) : opt.eta);

  Vector theta = Vector::Zero(p);
  Vector log_gamma = Vector::Constant(L, -std::log(static_cast<double>(L)));
  Vector theta_bar = theta;
  Vector log_gamma_bar = log_gamma;
  const unsigned need = kernels::kValue | kernels::kGrad;
  SaddleTerms g = obj.evaluate(theta_bar, log_gamma_bar.array().exp().matrix(), need);

  Vector theta_sum = Vector::Zero(p);
  Vector gamma_sum = Vector::Zero(L);
  FitResult res;
  res.theta = theta;
  res.gamma = log_gamma.array().exp();
  Vector warm = theta;

  for (int t = 1; t <= opt.max_iter; ++t) {
    // Intermediate step from (theta_t, gamma_t) with the previous gradient.
    theta_bar = theta - eta_theta * g.grad;
    log_gamma_bar = log_gamma + eta_gamma * g.vertex_values;
    normalize_log(log_gamma_bar);
    const Vector gamma_bar = log_gamma_bar.array().exp();

    // Correction step, also from (theta_t, gamma_t).
    g = obj.evaluate(theta_bar, gamma_bar, need);
    theta -= eta_theta * g.grad;
    log_gamma += eta_gamma * g.vertex_values;
    normalize_log(log_gamma);

    theta_sum += theta_bar;
    gamma_sum += gamma_bar;
    res.iterations = t;

    if (t % opt.gap_check_every == 0 || t == opt.max_iter) {
      res.theta = theta_sum / t;
      res.gamma = gamma_sum / gamma_sum.sum();
      const auto gap = duality_gap(obj, res.theta, res.gamma, warm, opt.inner);
      warm = gap.inner_theta;
      res.gap_trace.push_back({t, gap.gap});
      if (gap.gap <= opt.epsilon) {
        res.converged = true;
        break;
      }
    }
  }
  return res;
}

MomentSet estimate_moments(const std::vector<LabeledDataset>& sources,
                           const UnlabeledDataset& target, const ProblemConfig& cfg,
                           std::vector<NuisancePair>* nuisance_out,
                           const CondProbLearner& learner) {
  const Dims dims = check_problem(sources, target);
  const int L = dims.L;
  std::vector<Vector> mu(L);
  std::vector<Matrix> cov(L);
  std::vector<Index> sizes(L);
  std::vector<std::optional<NuisancePair>> pairs(L);
  std::vector<std::exception_ptr> errors(L);

  NuisanceOptions nopt;
  nopt.learner.cross_validate = cfg.cv_ridge;
  nopt.learner.ridge = cfg.ridge;

#pragma omp parallel for schedule(dynamic) if (L > 1)
  for (int l = 0; l < L; ++l) {
    try {
      const auto& src = sources[l];
      sizes[l] = src.size();
      if (cfg.no_shift) {
        mu[l] = mu_hat_no_shift(src, dims.K);
        cov[l] = cov_hat_no_shift(src, dims.K);
      } else {
        auto pair = fit_nuisance(src, target, dims.K, nopt, derive_seed(cfg.seed, l + 1), learner);
        const auto pred = pair.predict(src, target);
        mu[l] = mu_hat_dml(src, target, pred);
        cov[l] = cov_hat_dml(src, target, pred);
        pairs[l] = std::move(pair);
      }
    } catch (...) {
      errors[l] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  if (nuisance_out) {
    nuisance_out->clear();
    for (auto& p : pairs) {
      if (p) nuisance_out->push_back(std::move(*p));
    }
  }
  return assemble_moments(dims.d, dims.K, std::move(mu), std::move(cov), std::move(sizes));
}

CgdroFit cgdro_fit(const std::vector<LabeledDataset>& sources, const UnlabeledDataset& target,
                   const ProblemConfig& cfg, const CondProbLearner& learner) {
  cfg.validate();
  CgdroFit out;
  MomentSet moments = estimate_moments(sources, target, cfg, &out.nuisance, learner);
  out.ctx = std::make_shared<const ObjectiveContext>(std::move(moments), target.x);
  out.fit = mirror_prox(*out.ctx, MirrorProxOptions::from(cfg));
  out.fit.method = "cgdro";
  for (std::size_t l = 0; l < out.nuisance.size(); ++l) {
    out.fit.nuisance.push_back(out.nuisance[l].diagnostics(sources[l].source_id));
  }
  return out;
}

FitResult group_dro(const std::vector<LabeledDataset>& sources, const MirrorProxOptions& opt,
                    int K) {
  const GroupDroObjective obj(sources, K);
  FitResult res = mirror_prox(obj, opt);
  res.method = "gdro";
  return res;
}

Vector erm_pooled(const std::vector<LabeledDataset>& sources, double ridge, int K) {
  if (sources.empty()) throw ValidationError(kModule, "no source datasets");
  K = infer_K(sources, K);
  const int d = sources.front().dim();
  Index n = 0;
  for (const auto& s : sources) {
    validate(s, K);
    if (s.dim() != d) throw ValidationError(kModule, "sources differ in dimension");
    n += s.size();
  }
  Matrix x(n, d);
  Labels y(n);
  Index r = 0;
  for (const auto& s : sources) {
    x.middleRows(r, s.size()) = s.x;
    y.segment(r, s.size()) = s.y;
    r += s.size();
  }
  LogisticFitOptions fo;
  fo.ridge = ridge;
  fo.tol = 1e-9;
  fo.fit_intercept = false;
  const auto model = fit_multinomial_logistic(x, y, K, fo);
  return Eigen::Map<const Vector>(model.coef.data(), model.coef.size());
}

}  // namespace cgdro
