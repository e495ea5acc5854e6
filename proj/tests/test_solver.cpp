#include "cgdro/datagen.hpp"
#include "cgdro/error.hpp"
#include "cgdro/kernels.hpp"
#include "cgdro/moments.hpp"
#include "cgdro/nuisance.hpp"
#include "cgdro/solver.hpp"

#include <doctest.h>

#include <cmath>

using namespace cgdro;

namespace {

ObjectiveContext no_shift_context(const std::vector<LabeledDataset>& src, const Matrix& target_x, int K) {
  std::vector<Vector> mu;
  std::vector<Matrix> cov;
  std::vector<Index> n;
  for (const auto& s : src) {
    mu.push_back(mu_hat_no_shift(s, K));
    cov.push_back(Matrix::Zero(s.dim() * K, s.dim() * K));
    n.push_back(s.size());
  }
  return ObjectiveContext(assemble_moments(src[0].dim(), K, mu, cov, n), target_x);
}

Vector vertex(int L, int l) { return Vector::Unit(L, l); }

// Direct evaluation of sum_l gamma_l theta'mu_l + S(theta).
double phi_direct(const ObjectiveContext& ctx, const Vector& theta, const Vector& gamma) {
  double v = kernels::serial::s_hat(ctx.target_x(), theta, ctx.K());
  for (int l = 0; l < ctx.num_sources(); ++l) v += gamma[l] * theta.dot(ctx.moments().mu_hat[l]);
  return v;
}

Vector mle_no_intercept(const Matrix& x, const Labels& y, int K) {
  LogisticFitOptions o;
  o.fit_intercept = false;
  o.tol = 1e-12;
  const LogisticModel m = fit_multinomial_logistic(x, y, K, o);
  return Eigen::Map<const Vector>(m.coef.data(), m.coef.size());
}

struct TwoSource {
  DgpSpec spec;
  std::vector<LabeledDataset> src;
  Matrix target_x;
};

TwoSource two_source(int d, Index n, std::uint64_t seed) {
  SpecParams p;
  p.d = d;
  TwoSource t{make_spec(Setting::S1, p, seed), {}, {}};
  t.src = {gen_source(t.spec, 0, n, seed + 1), gen_source(t.spec, 1, n, seed + 2)};
  // The pooled source rows keep the objective bounded below.
  t.target_x.resize(2 * n, d);
  t.target_x << t.src[0].x, t.src[1].x;
  return t;
}

}  // namespace

TEST_CASE("objective evaluation agrees with a direct sum") {
  const TwoSource t = two_source(4, 300, 10);
  const ObjectiveContext ctx = no_shift_context(t.src, t.target_x, 1);
  const Vector theta = Vector::LinSpaced(4, -0.5, 0.5);
  const Vector gamma = (Vector(2) << 0.3, 0.7).finished();
  const SaddleTerms terms = ctx.evaluate(theta, gamma, kernels::kAll);
  CHECK(terms.value == doctest::Approx(phi_direct(ctx, theta, gamma)).epsilon(1e-13));
  CHECK(terms.vertex_values[1] == doctest::Approx(phi_direct(ctx, theta, vertex(2, 1))).epsilon(1e-13));
  Vector grad = kernels::serial::grad_s_hat(t.target_x, theta, 1) + ctx.moments().u_hat * gamma;
  CHECK((terms.grad - grad).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((terms.hess - kernels::serial::hess_s_hat(t.target_x, theta, 1)).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("objective is convex in theta") {
  const TwoSource t = two_source(3, 200, 20);
  const ObjectiveContext ctx = no_shift_context(t.src, t.target_x, 1);
  const Vector gamma = (Vector(2) << 0.5, 0.5).finished();
  for (int r = 0; r < 20; ++r) {
    const Vector a = Vector::Random(3) * 2.0, b = Vector::Random(3) * 2.0;
    const double mid = ctx.value(0.5 * (a + b), gamma);
    CHECK(mid <= 0.5 * (ctx.value(a, gamma) + ctx.value(b, gamma)) + 1e-12);
  }
}

TEST_CASE("inner minimization reaches a stationary point") {
  const TwoSource t = two_source(5, 400, 30);
  const ObjectiveContext ctx = no_shift_context(t.src, t.target_x, 1);
  const Vector gamma = (Vector(2) << 0.2, 0.8).finished();
  const Vector th = inner_min(ctx, gamma, Vector::Zero(5));
  const Vector grad = kernels::serial::grad_s_hat(t.target_x, th, 1) + ctx.moments().u_hat * gamma;
  CHECK(grad.cwiseAbs().maxCoeff() <= 1e-9);
  for (int r = 0; r < 10; ++r) CHECK(ctx.value(th, gamma) <= ctx.value(th + 0.01 * Vector::Random(5), gamma));
}

TEST_CASE("inner minimization reports failure on an unbounded objective") {
  // Moment outside the zonotope of the single target row: phi decreases along -x.
  Matrix tx(1, 1);
  tx << 1.0;
  const MomentSet m = assemble_moments(1, 1, {Vector::Constant(1, 2.0)}, {Matrix::Zero(1, 1)}, {1});
  const ObjectiveContext ctx(m, tx);
  InnerOptions o;
  o.max_iter = 30;
  CHECK_THROWS_AS(inner_min(ctx, Vector::Ones(1), Vector::Zero(1), o), NumericalError);
}

TEST_CASE("L=1 solution is the no-intercept MLE") {
  SpecParams p;
  p.d = 3;
  p.L = 1;
  const DgpSpec spec = make_spec(Setting::S1, p, 40);
  const LabeledDataset src = gen_source(spec, 0, 600, 41);
  const ObjectiveContext ctx = no_shift_context({src}, src.x, spec.K);
  const Vector mle = mle_no_intercept(src.x, src.y, spec.K);

  SUBCASE("certificate bound at epsilon 1e-4") {
    MirrorProxOptions o;
    o.epsilon = 1e-4;
    const FitResult fit = mirror_prox(ctx, o);
    REQUIRE(fit.converged);
    CHECK(fit.gamma[0] == 1.0);
    // phi(theta) - phi(mle) <= gap and phi is lambda-strongly convex on the
    // segment, so |theta - mle| <= sqrt(2 gap / lambda).
    double lambda = INFINITY;
    for (int i = 0; i <= 10; ++i) {
      const Vector pt = mle + (fit.theta - mle) * (i / 10.0);
      lambda = std::min(lambda, Eigen::SelfAdjointEigenSolver<Matrix>(ctx.evaluate(pt, fit.gamma, kernels::kHess).hess)
                                    .eigenvalues()
                                    .minCoeff());
    }
    CHECK((fit.theta - mle).norm() <= std::sqrt(2.0 * fit.final_gap() / lambda));
    CHECK(ctx.value(fit.theta, fit.gamma) - ctx.value(mle, fit.gamma) <= fit.final_gap() + 1e-12);
  }
  SUBCASE("within 1e-3 at epsilon 1e-8") {
    MirrorProxOptions o;
    o.epsilon = 1e-8;
    o.max_iter = 400000;
    const FitResult fit = mirror_prox(ctx, o);
    REQUIRE(fit.converged);
    CHECK((fit.theta - mle).cwiseAbs().maxCoeff() <= 1e-3);
  }
}

TEST_CASE("two-source saddle value matches a dual grid search") {
  const TwoSource t = two_source(3, 400, 50);
  const ObjectiveContext ctx = no_shift_context(t.src, t.target_x, 1);
  MirrorProxOptions o;
  o.max_iter = 40000;
  const FitResult fit = mirror_prox(ctx, o);
  REQUIRE(fit.converged);
  // Minimax value = max over gamma of min over theta.
  double best = -INFINITY;
  Vector warm = Vector::Zero(3);
  for (int i = 0; i <= 400; ++i) {
    const Vector g = (Vector(2) << i / 400.0, 1.0 - i / 400.0).finished();
    warm = inner_min(ctx, g, warm);
    best = std::max(best, ctx.value(warm, g));
  }
  const double primal = ctx.evaluate(fit.theta, fit.gamma, kernels::kValue).vertex_values.maxCoeff();
  CHECK(primal >= best - 1e-12);
  CHECK(primal <= best + o.epsilon);
  const DualityGap g = duality_gap(ctx, fit.theta, fit.gamma);
  CHECK(g.dual <= best + 1e-12);
  CHECK(g.gap == doctest::Approx(g.primal - g.dual));
  CHECK(g.gap <= o.epsilon);
}

TEST_CASE("gap trace is checked on schedule and ends below tolerance") {
  const TwoSource t = two_source(3, 300, 60);
  const ObjectiveContext ctx = no_shift_context(t.src, t.target_x, 1);
  MirrorProxOptions o;
  o.gap_check_every = 10;
  o.max_iter = 40000;
  const FitResult fit = mirror_prox(ctx, o);
  REQUIRE(fit.converged);
  REQUIRE(!fit.gap_trace.empty());
  for (const auto& r : fit.gap_trace) CHECK(r.iteration % 10 == 0);
  CHECK(fit.final_gap() <= o.epsilon);
  CHECK(fit.gamma.minCoeff() >= 0.0);
  CHECK(fit.gamma.sum() == doctest::Approx(1.0).epsilon(1e-12));

  MirrorProxOptions capped = o;
  capped.max_iter = 5;
  capped.epsilon = 1e-12;
  const FitResult short_fit = mirror_prox(ctx, capped);
  CHECK_FALSE(short_fit.converged);
  CHECK(short_fit.iterations == 5);
}

TEST_CASE("duality gap at the vertex ties picks the lowest index") {
  const TwoSource t = two_source(2, 200, 70);
  std::vector<LabeledDataset> same{t.src[0], t.src[0]};
  same[1].source_id = 2;
  const ObjectiveContext ctx = no_shift_context(same, t.src[0].x, 1);
  const DualityGap g = duality_gap(ctx, Vector::Zero(2), (Vector(2) << 0.5, 0.5).finished());
  CHECK(g.argmax_source == 0);
  CHECK(g.gap >= 0.0);
}

TEST_CASE("identical sources give equal weights") {
  const TwoSource t = two_source(3, 300, 80);
  std::vector<LabeledDataset> same{t.src[0], t.src[0]};
  same[1].source_id = 2;
  const FitResult fit = mirror_prox(no_shift_context(same, t.src[0].x, 1), MirrorProxOptions{});
  CHECK((fit.gamma.array() - 0.5).abs().maxCoeff() <= 1e-6);
}

TEST_CASE("pooled ERM is the pooled no-intercept MLE") {
  const TwoSource t = two_source(3, 300, 90);
  Matrix x(600, 3);
  x << t.src[0].x, t.src[1].x;
  Labels y(600);
  y << t.src[0].y, t.src[1].y;
  CHECK((erm_pooled(t.src, 0.0, 1) - mle_no_intercept(x, y, 1)).cwiseAbs().maxCoeff() <= 1e-7);
}

TEST_CASE("Group DRO with one source is ERM on it") {
  const TwoSource t = two_source(3, 500, 100);
  MirrorProxOptions o;
  o.epsilon = 1e-8;
  o.max_iter = 400000;
  const FitResult fit = group_dro({t.src[0]}, o, 1);
  CHECK(fit.method == "gdro");
  CHECK((fit.theta - erm_pooled({t.src[0]}, 0.0, 1)).cwiseAbs().maxCoeff() <= 1e-3);
}

TEST_CASE("Group DRO objective is the per-source cross-entropy") {
  const TwoSource t = two_source(3, 100, 110);
  const GroupDroObjective obj(t.src, 1);
  const Vector theta = Vector::LinSpaced(3, -1.0, 1.0);
  const SaddleTerms terms = obj.evaluate(theta, (Vector(2) << 0.25, 0.75).finished(), kernels::kAll);
  for (int l = 0; l < 2; ++l) {
    double ce = 0.0;
    for (Index i = 0; i < 100; ++i) {
      const double s = t.src[l].x.row(i).dot(theta);
      ce += std::log1p(std::exp(s)) - (t.src[l].y[i] == 1 ? s : 0.0);
    }
    CHECK(terms.vertex_values[l] == doctest::Approx(ce / 100.0).epsilon(1e-12));
  }
  CHECK(terms.value == doctest::Approx(0.25 * terms.vertex_values[0] + 0.75 * terms.vertex_values[1]));
}

TEST_CASE("step sizes default from eta and L") {
  ProblemConfig cfg;
  cfg.eta = 0.2;
  cfg.tol = 1e-3;
  cfg.max_iter = 7;
  const MirrorProxOptions o = MirrorProxOptions::from(cfg);
  CHECK(o.eta == 0.2);
  CHECK(o.epsilon == 1e-3);
  CHECK(o.max_iter == 7);
  CHECK(!o.eta_gamma.has_value());
}

TEST_CASE("cgdro_fit rejects mismatched inputs") {
  const TwoSource t = two_source(3, 100, 120);
  ProblemConfig cfg;
  cfg.no_shift = true;
  CHECK_THROWS_AS(cgdro_fit(t.src, UnlabeledDataset{Matrix::Zero(10, 4)}, cfg), ValidationError);
  CHECK_THROWS_AS(cgdro_fit({}, UnlabeledDataset{t.target_x}, cfg), ValidationError);
  cfg.alpha = 0.7;
  CHECK_THROWS_AS(cgdro_fit(t.src, UnlabeledDataset{t.target_x}, cfg), ValidationError);
}
