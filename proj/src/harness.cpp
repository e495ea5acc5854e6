#include "cgdro/harness.hpp"

#include "cgdro/error.hpp"
#include "cgdro/inference.hpp"
#include "cgdro/io.hpp"
#include "cgdro/rng.hpp"

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <exception>
#include <limits>
#include <ostream>

namespace cgdro {

namespace {

constexpr const char* kModule = "harness";

// Runs fn(i) for i in [0, count) and stores results by index, so the output
// does not depend on scheduling.
template <class T, class Fn>
std::vector<T> run_tasks(int count, bool parallel, Fn&& fn, std::vector<std::exception_ptr>& errors) {
  std::vector<T> out(static_cast<std::size_t>(count));
  errors.assign(static_cast<std::size_t>(count), nullptr);
#pragma omp parallel for schedule(dynamic) if (parallel && count > 1)
  for (int i = 0; i < count; ++i) {
    try {
      out[static_cast<std::size_t>(i)] = fn(i);
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  return out;
}

void rethrow_first(const std::vector<std::exception_ptr>& errors) {
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string param_label(const char* name, double v) { return std::string(name) + "=" + format_double(v); }

}  // namespace

void write_tidy_csv(std::ostream& out, const std::vector<TidyRow>& rows) {
  out << "setting,param,rep,method,metric,value\n";
  for (const auto& r : rows) {
    out << r.setting << ',' << r.param << ',' << r.rep << ',' << r.method << ',' << r.metric << ','
        << format_double(r.value) << '\n';
  }
}

std::vector<LabeledDataset> gen_sources(const DgpSpec& spec, const std::vector<Index>& n,
                                        std::uint64_t seed) {
  if (static_cast<int>(n.size()) != spec.L) {
    throw ValidationError(kModule, "need one sample size per source");
  }
  std::vector<LabeledDataset> out;
  for (int l = 0; l < spec.L; ++l) out.push_back(gen_source(spec, l, n[static_cast<std::size_t>(l)], seed));
  return out;
}

double ols_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ValidationError(kModule, "slope needs 2+ points");
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx <= 0.0) throw ValidationError(kModule, "slope needs distinct x values");
  return sxy / sxx;
}

WorstCaseSweepResult worst_case_sweep(const WorstCaseSweepOptions& opt) {
  const DgpSpec spec = make_spec(opt.setting, opt.params, opt.spec_seed);
  if (spec.L != 2) throw ValidationError(kModule, "mixture sweeps need exactly two sources");
  if (opt.mixtures.empty() || opt.reps < 1) throw ValidationError(kModule, "empty sweep");
  const Matrix eval_x = gen_target(spec, opt.N_eval, derive_seed(opt.seed, 0xe7a1)).x;
  Vector nonred(spec.L);
  for (int l = 0; l < spec.L; ++l) {
    nonred[l] = non_reducible_loss(spec, l, eval_x, derive_seed(opt.seed, 0x4e52 + l));
  }

  const int tasks = static_cast<int>(opt.mixtures.size()) * opt.reps;
  std::vector<std::exception_ptr> errors;
  auto points = run_tasks<WorstCasePoint>(tasks, opt.parallel, [&](int task) {
    const int mi = task / opt.reps;
    const int rep = task % opt.reps;
    const double mix = opt.mixtures[static_cast<std::size_t>(mi)];
    if (!(mix > 0.0 && mix < 1.0)) throw ValidationError(kModule, "mixture must lie in (0, 1)");
    const auto n1 = static_cast<Index>(std::llround(mix * static_cast<double>(opt.n_total)));
    const std::uint64_t seed = derive_seed(derive_seed(opt.seed, mi), rep);
    const auto sources = gen_sources(spec, {n1, opt.n_total - n1}, seed);
    const auto target = gen_target(spec, opt.N, derive_seed(seed, 7));
    ProblemConfig cfg = opt.cfg;
    cfg.seed = seed;
    WorstCasePoint pt;
    pt.mixture = mix;
    pt.rep = rep;
    pt.cgdro = worst_case_loss(cgdro_fit(sources, target, cfg).fit.theta, spec, eval_x).worst;
    pt.gdro = worst_case_loss(group_dro(sources, opt.gdro, spec.K).theta, spec, eval_x).worst;
    pt.erm = worst_case_loss(erm_pooled(sources, 0.0, spec.K), spec, eval_x).worst;
    pt.non_reducible = nonred;
    return pt;
  }, errors);
  rethrow_first(errors);

  WorstCaseSweepResult res;
  const std::string setting = to_string(spec.setting);
  for (const auto& pt : points) {
    const std::string param = param_label("mixture", pt.mixture);
    res.rows.push_back({setting, param, pt.rep, "cgdro", "worst_case_loss", pt.cgdro});
    res.rows.push_back({setting, param, pt.rep, "gdro", "worst_case_loss", pt.gdro});
    res.rows.push_back({setting, param, pt.rep, "erm", "worst_case_loss", pt.erm});
    for (int l = 0; l < spec.L; ++l) {
      res.rows.push_back({setting, param, pt.rep, "oracle",
                          "non_reducible_" + std::to_string(l + 1), pt.non_reducible[l]});
    }
  }
  res.points = std::move(points);
  return res;
}

RateStudyResult rate_study(const RateStudyOptions& opt) {
  const DgpSpec spec = make_spec(opt.setting, opt.params, opt.spec_seed);
  if (opt.n_grid.size() < 2 || opt.reps < 1) throw ValidationError(kModule, "rate study needs 2+ sizes");
  RateStudyResult res;
  res.theta_ref = population_theta(spec, opt.population, opt.population_cfg);

  const int per = opt.reps;
  const int tasks = static_cast<int>(opt.n_grid.size()) * per;
  std::vector<std::exception_ptr> errors;
  const auto errs = run_tasks<double>(tasks, opt.parallel, [&](int task) {
    const int gi = task / per;
    const int rep = task % per;
    const Index n = opt.n_grid[static_cast<std::size_t>(gi)];
    const std::uint64_t seed = derive_seed(derive_seed(opt.seed, gi), rep);
    const auto sources = gen_sources(spec, std::vector<Index>(spec.L, n), seed);
    const auto target = gen_target(spec, opt.N, derive_seed(seed, 7));
    ProblemConfig cfg = opt.cfg;
    cfg.seed = seed;
    return estimation_error(cgdro_fit(sources, target, cfg).fit.theta, res.theta_ref, spec.d);
  }, errors);
  rethrow_first(errors);

  std::vector<double> logn, logerr;
  const std::string setting = to_string(spec.setting);
  for (std::size_t gi = 0; gi < opt.n_grid.size(); ++gi) {
    double sum = 0.0;
    const std::string param = param_label("n", static_cast<double>(opt.n_grid[gi]));
    for (int rep = 0; rep < per; ++rep) {
      const double e = errs[gi * static_cast<std::size_t>(per) + static_cast<std::size_t>(rep)];
      sum += e;
      res.rows.push_back({setting, param, rep, "cgdro", "est_error", e});
    }
    res.mean_error.push_back(sum / per);
    logn.push_back(std::log(static_cast<double>(opt.n_grid[gi])));
    logerr.push_back(std::log(res.mean_error.back()));
  }
  res.slope = ols_slope(logn, logerr);
  res.rows.push_back({setting, "all", -1, "cgdro", "log_log_slope", res.slope});
  return res;
}

CoverageStudyResult coverage_study(const CoverageStudyOptions& opt) {
  const DgpSpec spec = make_spec(opt.setting, opt.params, opt.spec_seed);
  if (opt.reps < 2) throw ValidationError(kModule, "coverage study needs at least 2 replications");
  CoverageStudyResult res;
  res.theta_ref_j = population_theta(spec, opt.population, opt.population_cfg)[opt.coord];

  struct Rep {
    double theta_j = std::numeric_limits<double>::quiet_NaN();
    double width = std::numeric_limits<double>::quiet_NaN();
    bool covered = false;
    bool failed = true;
  };
  std::vector<std::exception_ptr> errors;
  auto reps = run_tasks<Rep>(opt.reps, opt.parallel, [&](int rep) {
    const std::uint64_t seed = derive_seed(opt.seed, rep);
    const auto sources = gen_sources(spec, std::vector<Index>(spec.L, opt.n), seed);
    const auto target = gen_target(spec, opt.N, derive_seed(seed, 7));
    ProblemConfig cfg = opt.cfg;
    cfg.seed = seed;
    InferenceOptions iopt;
    iopt.parallel = !opt.parallel;
    Rep r;
    try {
      const auto inf = infer(sources, target, cfg, opt.coord, iopt);
      r.theta_j = inf.fit.theta[opt.coord];
      r.width = inf.ci_length();
      r.covered = inf.covers(res.theta_ref_j);
      r.failed = false;
    } catch (const NumericalError&) {
      // Counted below as a non-covering replication.
    }
    return r;
  }, errors);
  rethrow_first(errors);

  const std::string setting = to_string(spec.setting);
  const std::string param = opt.params.delta ? param_label("delta", *opt.params.delta)
                            : opt.params.sigma ? param_label("sigma", *opt.params.sigma)
                                               : param_label("n", static_cast<double>(opt.n));
  double sum = 0.0, sum_w = 0.0;
  int ok = 0, covered = 0;
  for (int i = 0; i < opt.reps; ++i) {
    const Rep& r = reps[static_cast<std::size_t>(i)];
    res.theta_hat_j.push_back(r.theta_j);
    res.width.push_back(r.width);
    res.covered.push_back(r.covered ? 1 : 0);
    if (r.failed) {
      ++res.failures;
      continue;
    }
    ++ok;
    covered += r.covered;
    sum += r.theta_j;
    sum_w += r.width;
    res.rows.push_back({setting, param, i, "proposed", "covered", r.covered ? 1.0 : 0.0});
    res.rows.push_back({setting, param, i, "proposed", "ci_length", r.width});
    res.rows.push_back({setting, param, i, "proposed", "theta_hat", r.theta_j});
  }
  if (ok < 2) throw NumericalError(kModule, "fewer than two replications succeeded", ok);
  const double mean = sum / ok;
  double ss = 0.0;
  for (const auto& r : reps) {
    if (!r.failed) ss += (r.theta_j - mean) * (r.theta_j - mean);
  }
  res.replication_se = std::sqrt(ss / (ok - 1));
  res.coverage = static_cast<double>(covered) / opt.reps;
  res.mean_width = sum_w / ok;

  const boost::math::normal_distribution<double> std_normal(0.0, 1.0);
  const double z = boost::math::quantile(boost::math::complement(std_normal, opt.cfg.alpha / 2.0));
  int naive = 0;
  for (const auto& r : reps) {
    if (!r.failed && std::abs(r.theta_j - res.theta_ref_j) <= z * res.replication_se) ++naive;
  }
  res.naive_coverage = static_cast<double>(naive) / opt.reps;

  res.rows.push_back({setting, param, -1, "proposed", "coverage", res.coverage});
  res.rows.push_back({setting, param, -1, "proposed", "mean_ci_length", res.mean_width});
  res.rows.push_back({setting, param, -1, "normality", "coverage", res.naive_coverage});
  res.rows.push_back({setting, param, -1, "oracle", "theta_ref", res.theta_ref_j});
  res.rows.push_back({setting, param, -1, "proposed", "failures", static_cast<double>(res.failures)});
  return res;
}

}  // namespace cgdro
