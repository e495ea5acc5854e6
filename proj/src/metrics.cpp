#include "cgdro/metrics.hpp"

#include "cgdro/error.hpp"
#include "cgdro/rng.hpp"
#include "cgdro/inference.hpp"
#include "cgdro/solver.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>
#include <system_error>

namespace cgdro {

namespace {

constexpr const char* kModule = "metrics";

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t cache_key(const DgpSpec& spec, const PopulationOptions& opt, const ProblemConfig& cfg) {
  std::uint64_t h = spec_digest(spec);
  const auto mix = [&h](std::uint64_t v) { h = splitmix64(h ^ v); };
  mix(static_cast<std::uint64_t>(opt.n_big));
  mix(static_cast<std::uint64_t>(opt.N_big));
  mix(opt.seed);
  const auto bits = [](double x) {
    std::uint64_t u;
    std::memcpy(&u, &x, sizeof u);
    return u;
  };
  mix(bits(cfg.eta));
  mix(bits(cfg.tol));
  mix(bits(cfg.ridge));
  mix(static_cast<std::uint64_t>(cfg.max_iter));
  mix(static_cast<std::uint64_t>(cfg.no_shift) << 1 | static_cast<std::uint64_t>(cfg.cv_ridge));
  mix(cfg.seed);
  mix(opt.refine ? 1 : 0);
  return h;
}

}  // namespace

WorstCaseLoss worst_case_loss(const Vector& theta, const DgpSpec& spec, const Matrix& target_x) {
  const int K = spec.K;
  if (theta.size() != static_cast<Index>(spec.d) * K) {
    throw ValidationError(kModule, "theta length differs from d*K");
  }
  if (target_x.cols() != spec.d || target_x.rows() == 0) {
    throw ValidationError(kModule, "target covariates do not match the DGP dimension");
  }
  const Eigen::Map<const Matrix> th(theta.data(), spec.d, K);
  const Matrix scores = target_x * th;
  Vector lse(target_x.rows());
  for (Index i = 0; i < target_x.rows(); ++i) {
    const double m = std::max(0.0, scores.row(i).maxCoeff());
    lse[i] = m + std::log(std::exp(-m) + (scores.row(i).array() - m).exp().sum());
  }
  WorstCaseLoss out;
  out.per_source.resize(spec.L);
  for (int l = 0; l < spec.L; ++l) {
    const Matrix p = cond_prob_matrix(spec, target_x, l);
    double total = 0.0;
    for (Index i = 0; i < target_x.rows(); ++i) {
      double ce = lse[i];
      for (int c = 0; c < K; ++c) ce -= p(i, c + 1) * scores(i, c);
      total += ce;
    }
    out.per_source[l] = total / static_cast<double>(target_x.rows());
  }
  Index arg = 0;
  out.worst = out.per_source.maxCoeff(&arg);
  out.argmax = static_cast<int>(arg);
  return out;
}

double non_reducible_loss(const DgpSpec& spec, int l, const Matrix& target_x, std::uint64_t seed) {
  if (target_x.rows() == 0) throw ValidationError(kModule, "empty target sample");
  const Matrix p = cond_prob_matrix(spec, target_x, l);
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double total = 0.0;
  for (Index i = 0; i < p.rows(); ++i) {
    const double u = unif(rng);
    double acc = 0.0;
    Index label = p.cols() - 1;
    for (Index c = 0; c < p.cols(); ++c) {
      acc += p(i, c);
      if (u < acc) {
        label = c;
        break;
      }
    }
    total -= std::log(p(i, label));
  }
  return total / static_cast<double>(p.rows());
}

double estimation_error(const Vector& theta_hat, const Vector& theta_ref, int d) {
  if (theta_hat.size() != theta_ref.size()) {
    throw ValidationError(kModule, "estimate and reference differ in length");
  }
  if (d < 1) throw ValidationError(kModule, "d must be positive");
  return (theta_hat - theta_ref).norm() / std::sqrt(static_cast<double>(d));
}

FitResult refine_saddle(const ObjectiveContext& ctx, FitResult start) {
  const int L = ctx.num_sources();
  const Matrix& u = ctx.moments().u_hat;
  InnerOptions inner;
  inner.tol = 1e-10;
  Vector gamma = start.gamma;
  Vector theta = inner_min(ctx, gamma, start.theta, inner);
  double g = ctx.value(theta, gamma);
  for (int it = 0; it < 100 && L > 1; ++it) {
    // Quadratic model of the concave dual: gradient U' theta(gamma), Hessian -U' H^{-1} U.
    const Vector lin = u.transpose() * theta;
    if ((gamma - project_simplex(gamma + lin)).cwiseAbs().maxCoeff() <= 1e-12) break;
    const Eigen::LLT<Matrix> llt(ctx.evaluate(theta, gamma, kernels::kHess).hess);
    if (llt.info() != Eigen::Success) break;
    SimplexQuadratic q{u.transpose() * llt.solve(u), Vector()};
    q.A = 0.5 * (q.A + q.A.transpose());
    q.b = lin + q.A * gamma;
    const Vector dir = maximize_on_simplex(q, {1e-13, 100000}).gamma - gamma;
    if (dir.cwiseAbs().maxCoeff() <= 1e-14) break;
    bool moved = false;
    for (double t = 1.0; t > 1e-6; t *= 0.5) {
      const Vector trial = gamma + t * dir;
      const Vector th = inner_min(ctx, trial, theta, inner);
      const double gt = ctx.value(th, trial);
      if (gt >= g) {
        gamma = trial;
        theta = th;
        g = gt;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  const double gap = ctx.evaluate(theta, gamma, kernels::kValue).vertex_values.maxCoeff() - g;
  if (start.gap_trace.empty() || gap < start.final_gap()) {
    start.theta = theta;
    start.gamma = gamma;
    start.gap_trace.push_back({start.iterations, gap});
  }
  return start;
}

Vector population_theta(const DgpSpec& spec, const PopulationOptions& opt, const ProblemConfig& cfg) {
  const Index dk = static_cast<Index>(spec.d) * spec.K;
  std::filesystem::path file;
  if (!opt.cache_dir.empty()) {
    file = opt.cache_dir / ("theta_" + hex64(cache_key(spec, opt, cfg)) + ".json");
    std::ifstream in(file);
    if (in) {
      try {
        const auto j = nlohmann::json::parse(in);
        const auto v = j.at("theta").get<std::vector<double>>();
        if (static_cast<Index>(v.size()) == dk) return Eigen::Map<const Vector>(v.data(), dk);
      } catch (const nlohmann::json::exception&) {
        // Unreadable cache entry: recompute and overwrite.
      }
    }
  }

  std::vector<LabeledDataset> sources;
  for (int l = 0; l < spec.L; ++l) {
    sources.push_back(gen_source(spec, l, opt.n_big, derive_seed(opt.seed, 100 + l)));
  }
  const UnlabeledDataset target = gen_target(spec, opt.N_big, derive_seed(opt.seed, 99));
  const CgdroFit fit = cgdro_fit(sources, target, cfg);
  const Vector theta = opt.refine ? refine_saddle(*fit.ctx, fit.fit).theta : fit.fit.theta;

  if (!file.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(opt.cache_dir, ec);
    const auto tmp = file.string() + ".tmp";
    std::ofstream out(tmp);
    if (out) {
      nlohmann::json j;
      j["setting"] = to_string(spec.setting);
      j["theta"] = std::vector<double>(theta.data(), theta.data() + theta.size());
      out << j.dump();
      out.close();
      std::filesystem::rename(tmp, file, ec);
    }
  }
  return theta;
}

}  // namespace cgdro
