// Acceptance runner. `acceptance` runs every criterion; `acceptance AC4 AC7`
// runs a subset. Prints one PASS/FAIL line per criterion.

#include "cgdro/datagen.hpp"
#include "cgdro/harness.hpp"
#include "cgdro/inference.hpp"
#include "cgdro/io.hpp"
#include "cgdro/kernels.hpp"
#include "cgdro/metrics.hpp"
#include "cgdro/moments.hpp"
#include "cgdro/nuisance.hpp"
#include "cgdro/rng.hpp"
#include "cgdro/solver.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#ifndef CGDRO_CACHE_DIR
#define CGDRO_CACHE_DIR "cgdro_cache"
#endif

using namespace cgdro;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

PopulationOptions population() {
  PopulationOptions p;
  p.seed = 2024;
  p.cache_dir = CGDRO_CACHE_DIR;
  return p;
}

ProblemConfig population_cfg() {
  ProblemConfig cfg;
  cfg.seed = 99;
  return cfg;
}

Matrix one_hot(const Labels& y, int K) {
  Matrix w = Matrix::Zero(y.size(), K);
  for (Index i = 0; i < y.size(); ++i)
    if (y[i] > 0) w(i, y[i] - 1) = 1.0;
  return w;
}

// Finite-difference gradient/Hessian checks of the softmax log-partition.
Outcome ac1() {
  Rng rng(11);
  std::normal_distribution<double> nd;
  std::uniform_int_distribution<int> dd(1, 10), kd(1, 3), nn(1, 200);
  double worst_g = 0.0, worst_h = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    const int d = dd(rng), K = kd(rng);
    const Index N = nn(rng);
    Matrix x(N, d);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = nd(rng);
    Vector theta(d * K);
    for (Index i = 0; i < theta.size(); ++i) theta[i] = 0.5 * nd(rng);

    const Vector g = kernels::grad_s_hat(x, theta, K);
    const Matrix h = kernels::hess_s_hat(x, theta, K);
    const double step = 1e-5;
    Vector fd_g(theta.size());
    Matrix fd_h(theta.size(), theta.size());
    for (Index j = 0; j < theta.size(); ++j) {
      Vector tp = theta, tm = theta;
      tp[j] += step;
      tm[j] -= step;
      fd_g[j] = (kernels::s_hat(x, tp, K) - kernels::s_hat(x, tm, K)) / (2 * step);
      fd_h.col(j) = (kernels::grad_s_hat(x, tp, K) - kernels::grad_s_hat(x, tm, K)) / (2 * step);
    }
    worst_g = std::max(worst_g, (g - fd_g).norm() / fd_g.norm());
    worst_h = std::max(worst_h, (h - fd_h).norm() / fd_h.norm());
  }
  return {worst_g <= 1e-5 && worst_h <= 1e-4,
          "grad rel err " + fmt("%.2e", worst_g) + ", hess rel err " + fmt("%.2e", worst_h)};
}

// Mirror Prox certificate and O(1/T) decay of the gap trace on S1.
Outcome ac2() {
  SpecParams params;
  params.d = 10;
  const DgpSpec spec = make_spec(Setting::S1, params, 1);
  const auto sources = gen_sources(spec, {500, 500}, 21);
  const auto target = gen_target(spec, 2000, 22);
  ProblemConfig cfg;
  cfg.seed = 23;
  const FitResult fit = cgdro_fit(sources, target, cfg).fit;
  std::vector<double> lt, lg;
  for (const auto& r : fit.gap_trace) {
    if (r.gap > 0.0) {
      lt.push_back(std::log(static_cast<double>(r.iteration)));
      lg.push_back(std::log(r.gap));
    }
  }
  const double slope = lt.size() >= 2 ? ols_slope(lt, lg) : 0.0;
  return {fit.converged && fit.final_gap() <= 1e-4 && slope <= -0.9,
          "gap " + fmt("%.2e", fit.final_gap()) + " after " + std::to_string(fit.iterations) +
              " iterations, log-log slope " + fmt("%.3f", slope)};
}

// Degenerate cases: L = 1 versus the MLE, DML with trivial nuisances, and
// identical sources.
Outcome ac3() {
  SpecParams params;
  params.d = 5;
  params.L = 1;
  const DgpSpec spec = make_spec(Setting::S1, params, 3);
  const LabeledDataset src = gen_source(spec, 0, 1000, 31);
  UnlabeledDataset same{src.x};

  ProblemConfig cfg;
  cfg.no_shift = true;
  cfg.tol = 1e-8;
  cfg.max_iter = 400000;
  const Vector theta = cgdro_fit({src}, same, cfg).fit.theta;
  LogisticFitOptions lopt;
  lopt.fit_intercept = false;
  lopt.tol = 1e-12;
  const LogisticModel mle = fit_multinomial_logistic(src.x, src.y, spec.K, lopt);
  const Vector mle_theta = Eigen::Map<const Vector>(mle.coef.data(), mle.coef.size());
  const double err_mle = (theta - mle_theta).cwiseAbs().maxCoeff();

  NuisancePredictions pred;
  pred.f_source = one_hot(src.y, spec.K);
  pred.f_target = pred.f_source;
  pred.w_source = Vector::Ones(src.size());
  const double err_dml = (mu_hat_dml(src, same, pred) - mu_hat_no_shift(src, spec.K)).cwiseAbs().maxCoeff();

  const DgpSpec spec2 = make_spec(Setting::S1, SpecParams{}, 4);
  LabeledDataset a = gen_source(spec2, 0, 500, 41);
  LabeledDataset b = a;
  b.source_id = 2;
  ProblemConfig cfg2;
  cfg2.no_shift = true;
  const FitResult sym = cgdro_fit({a, b}, UnlabeledDataset{a.x}, cfg2).fit;
  const double err_sym = (sym.gamma.array() - 0.5).abs().maxCoeff();

  return {err_mle <= 1e-3 && err_dml <= 1e-13 && err_sym <= 1e-6,
          "L=1 vs MLE " + fmt("%.2e", err_mle) + ", DML vs label mean " + fmt("%.2e", err_dml) +
              ", symmetric gamma dev " + fmt("%.2e", err_sym)};
}

// Estimation error rate on S1.
Outcome ac4() {
  RateStudyOptions opt;
  opt.setting = Setting::S1;
  opt.params.d = 10;
  opt.spec_seed = 5;
  opt.n_grid = {200, 400, 800, 1600};
  opt.N = 10000;
  opt.reps = 50;
  opt.seed = 51;
  opt.population = population();
  opt.population_cfg = population_cfg();
  const RateStudyResult res = rate_study(opt);
  std::string means;
  for (double m : res.mean_error) means += fmt(" %.4f", m);
  return {res.slope >= -0.65 && res.slope <= -0.35,
          "slope " + fmt("%.3f", res.slope) + ", mean errors" + means};
}

// Worst-case loss ordering on FIG2 at mixture 0.5.
Outcome ac5() {
  WorstCaseSweepOptions opt;
  opt.setting = Setting::Fig2;
  opt.spec_seed = 6;
  opt.mixtures = {0.5};
  opt.n_total = 4000;
  opt.N = 10000;
  opt.N_eval = 100000;
  opt.seed = 61;
  const auto res = worst_case_sweep(opt);
  const auto& p = res.points.front();
  const double lo = p.non_reducible.minCoeff(), hi = p.non_reducible.maxCoeff();
  const bool ok = p.cgdro + 0.005 <= p.gdro && p.gdro <= p.erm + 0.01 && p.cgdro >= lo && p.cgdro <= hi;
  return {ok, "cgdro " + fmt("%.4f", p.cgdro) + ", gdro " + fmt("%.4f", p.gdro) + ", erm " +
                  fmt("%.4f", p.erm) + ", non-reducible [" + fmt("%.4f", lo) + ", " + fmt("%.4f", hi) + "]"};
}

// Orthogonality: DML versus plug-in under the same nuisance perturbation.
Outcome ac6() {
  const DgpSpec spec = make_spec(Setting::Fig2, SpecParams{}, 7);
  const Index n = 5000, N = 5000;
  const double eps = 0.05;
  const ClipBounds clip;

  // Monte Carlo oracle of mu_c = -E_Q[f_c(X) X] with 1e6 target draws.
  std::vector<Vector> mu_mc(spec.L, Vector::Zero(spec.d * spec.K));
  const Index chunk = 100000;
  for (int c = 0; c < 10; ++c) {
    const Matrix xq = gen_target(spec, chunk, derive_seed(71, c)).x;
    for (int l = 0; l < spec.L; ++l) {
      const Matrix p = cond_prob_matrix(spec, xq, l).rightCols(spec.K);
      mu_mc[l] -= kernels::kron_mean(p, xq) / 10.0;
    }
  }

  const int reps = 50;
  std::vector<double> err_dml(reps), err_plug(reps);
  for (int r = 0; r < reps; ++r) {
    const std::uint64_t seed = derive_seed(72, r);
    const auto sources = gen_sources(spec, {n, n}, seed);
    const auto target = gen_target(spec, N, derive_seed(seed, 7));
    double sd = 0.0, sp = 0.0;
    for (int l = 0; l < spec.L; ++l) {
      const auto& ds = sources[l];
      NuisancePredictions pred;
      pred.f_source = (cond_prob_matrix(spec, ds.x, l).rightCols(spec.K).array() + eps)
                          .cwiseMax(kProbClip).cwiseMin(1.0 - kProbClip);
      pred.f_target = (cond_prob_matrix(spec, target.x, l).rightCols(spec.K).array() + eps)
                          .cwiseMax(kProbClip).cwiseMin(1.0 - kProbClip);
      pred.w_source = (true_density_ratio(spec, l, ds.x).array() + eps).cwiseMax(clip.lo).cwiseMin(clip.hi);
      sd += (mu_hat_dml(ds, target, pred) - mu_mc[l]).squaredNorm();
      sp += (mu_hat_plugin(target, pred) - mu_mc[l]).squaredNorm();
    }
    err_dml[r] = std::sqrt(sd);
    err_plug[r] = std::sqrt(sp);
  }
  double md = 0.0, mp = 0.0;
  for (int r = 0; r < reps; ++r) {
    md += err_dml[r] / reps;
    mp += err_plug[r] / reps;
  }
  return {md <= 0.5 * mp, "mean DML err " + fmt("%.4f", md) + ", mean plug-in err " + fmt("%.4f", mp) +
                              ", ratio " + fmt("%.3f", md / mp)};
}

CoverageStudyOptions s3_coverage(double delta, Index n, Index N, int reps) {
  CoverageStudyOptions opt;
  opt.setting = Setting::S3;
  opt.params.d = 10;
  opt.params.delta = delta;
  opt.spec_seed = 8;
  opt.n = n;
  opt.N = N;
  opt.reps = reps;
  opt.coord = 0;
  opt.seed = derive_seed(81, static_cast<std::uint64_t>(delta * 1000) + static_cast<std::uint64_t>(n));
  opt.cfg.M = 300;
  opt.cfg.alpha = 0.05;
  opt.cfg.alpha0 = 0.01;
  opt.population = population();
  opt.population_cfg = population_cfg();
  return opt;
}

// Coverage of the union interval versus the normality benchmark on S3.
Outcome ac7() {
  const auto r0 = coverage_study(s3_coverage(0.0, 300, 3000, 100));
  const auto r2 = coverage_study(s3_coverage(2.0, 300, 3000, 100));
  const bool ok = r0.coverage >= 0.88 && r2.coverage >= 0.88 && r2.naive_coverage <= 0.85;
  return {ok, "delta=0: coverage " + fmt("%.2f", r0.coverage) + " (naive " + fmt("%.2f", r0.naive_coverage) +
                  ", failures " + std::to_string(r0.failures) + "); delta=2: coverage " +
                  fmt("%.2f", r2.coverage) + " (naive " + fmt("%.2f", r2.naive_coverage) + ", failures " +
                  std::to_string(r2.failures) + ")"};
}

// Union-interval width at n = 1200 relative to n = 300 on S3, delta = 2.
Outcome ac8() {
  const auto small = coverage_study(s3_coverage(2.0, 300, 3000, 50));
  const auto large = coverage_study(s3_coverage(2.0, 1200, 12000, 50));
  const double ratio = large.mean_width / small.mean_width;
  return {ratio >= 0.5 && ratio <= 0.9, "mean width " + fmt("%.4f", small.mean_width) + " -> " +
                                            fmt("%.4f", large.mean_width) + ", ratio " + fmt("%.3f", ratio)};
}

// Property suites: interval union, simplex projection, PSD projection and
// thread-count invariance.
Outcome ac9() {
  Rng rng(91);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(-3.0, 3.0);
  std::string why;

  bool merge_ok = true;
  for (int t = 0; t < 200 && merge_ok; ++t) {
    std::vector<Interval> iv(1 + t % 9);
    for (auto& i : iv) {
      const double a = ud(rng);
      i = {a, a + std::abs(nd(rng))};
    }
    const auto u = ci_union(iv);
    std::shuffle(iv.begin(), iv.end(), rng);
    merge_ok = ci_union(iv) == u && ci_union(u) == u;
    for (std::size_t k = 1; k < u.size() && merge_ok; ++k) merge_ok = u[k - 1].hi < u[k].lo;
  }
  if (!merge_ok) why += " merge";

  double worst_kkt = 0.0;
  for (int t = 0; t < 200; ++t) {
    const int L = 1 + t % 6;
    Matrix g(L + 2, L);
    for (Index i = 0; i < g.size(); ++i) g.data()[i] = nd(rng);
    SimplexQuadratic q{g.transpose() * g + 1e-3 * Matrix::Identity(L, L), Vector(L)};
    for (int l = 0; l < L; ++l) q.b[l] = nd(rng);
    const auto sol = maximize_on_simplex(q);
    worst_kkt = std::max(worst_kkt, q.kkt_residual(sol.gamma));
    const Vector v = 3.0 * Vector::NullaryExpr(L, [&] { return nd(rng); });
    const Vector p = project_simplex(v);
    if (p.minCoeff() < 0.0 || std::abs(p.sum() - 1.0) > 1e-12) why += " projection";
  }
  if (worst_kkt > 1e-9) why += " kkt";

  double worst_eig = 0.0;
  for (int t = 0; t < 50; ++t) {
    Matrix a(6, 6);
    for (Index i = 0; i < a.size(); ++i) a.data()[i] = nd(rng);
    const Matrix p = psd_project(a + a.transpose());
    worst_eig = std::min(worst_eig, Eigen::SelfAdjointEigenSolver<Matrix>(p).eigenvalues().minCoeff());
    if ((p - p.transpose()).norm() != 0.0) why += " symmetric";
  }
  if (worst_eig < -1e-12) why += " psd";

  SpecParams params;
  params.d = 6;
  params.delta = 1.0;
  const DgpSpec spec = make_spec(Setting::S3, params, 9);
  const auto sources = gen_sources(spec, {600, 600}, 92);
  const auto target = gen_target(spec, 1500, 93);
  ProblemConfig cfg;
  cfg.M = 50;
  cfg.seed = 94;
  const auto run = [&](int threads) {
    omp_set_num_threads(threads);
    return to_json(infer(sources, target, cfg, 0)).dump();
  };
  const int saved = omp_get_max_threads();
  const std::string one = run(1), four = run(4), again = run(3);
  omp_set_num_threads(saved);
  if (one != four || one != again) why += " reproducibility";

  return {why.empty(), "max kkt " + fmt("%.1e", worst_kkt) + ", min psd eig " + fmt("%.1e", worst_eig) +
                           (why.empty() ? std::string() : ", failed:" + why)};
}

struct Criterion {
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {"AC1", 5, ac1},   {"AC2", 30, ac2},   {"AC3", 60, ac3},  {"AC4", 600, ac4},  {"AC5", 120, ac5},
      {"AC6", 300, ac6}, {"AC7", 1200, ac7}, {"AC8", 900, ac8}, {"AC9", 60, ac9},
  };
  std::vector<std::string> pick(argv + 1, argv + argc);
  bool all_pass = true;
  for (const auto& c : all) {
    if (!pick.empty() && std::find(pick.begin(), pick.end(), c.name) == pick.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = o.pass && secs < c.budget_s;
    all_pass = all_pass && pass;
    std::printf("%s %s: %s; %.1f s (budget %.0f s)\n", c.name, pass ? "PASS" : "FAIL", o.detail.c_str(), secs,
                c.budget_s);
    std::fflush(stdout);
  }
  return all_pass ? 0 : 1;
}
