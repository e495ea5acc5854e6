#include "cgdro/datagen.hpp"

#include "cgdro/error.hpp"
#include "cgdro/rng.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <random>

namespace cgdro {

namespace {

constexpr const char* kModule = "datagen";

[[noreturn]] void fail(const std::string& msg) { throw ValidationError(kModule, msg); }

struct SettingName {
  Setting setting;
  const char* name;
};

constexpr SettingName kNames[] = {
    {Setting::S1, "S1"},
    {Setting::S2, "S2"},
    {Setting::S3, "S3"},
    {Setting::S4, "S4"},
    {Setting::S5, "S5"},
    {Setting::Fig2, "FIG2"},
    {Setting::Fig3NonRegular, "FIG3_NONREG"},
    {Setting::Fig3Unstable, "FIG3_UNSTABLE"},
    {Setting::Fig3Regular, "FIG3_REG"},
};

Matrix gaussian_factor(const Matrix& cov) {
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  // Semidefinite: pivoted LDLT with negative pivots clipped to zero.
  Eigen::LDLT<Matrix> ldlt(cov);
  const Vector dsqrt = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
  Matrix l = ldlt.matrixL();
  Matrix f = l * dsqrt.asDiagonal();
  return ldlt.transpositionsP().transpose() * f;
}

Vector constant(int d, double v) { return Vector::Constant(d, v); }

int resolve_int(const std::optional<int>& v, int dflt, bool allowed, int min_value,
                const char* name, Setting s) {
  if (!v) return dflt;
  if (!allowed) fail(std::string(name) + " cannot be set for setting " + to_string(s));
  if (*v < min_value) {
    fail(std::string(name) + " must be at least " + std::to_string(min_value) + " for setting " +
         to_string(s));
  }
  return *v;
}

double resolve_real(const std::optional<double>& v, double dflt, bool allowed, double lo,
                    double hi, const char* name, Setting s) {
  if (!v) return dflt;
  if (!allowed) fail(std::string(name) + " cannot be set for setting " + to_string(s));
  if (!(*v >= lo && *v <= hi)) {
    fail(std::string(name) + " must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) +
         "] for setting " + to_string(s));
  }
  return *v;
}

void set_linear(DgpSpec& spec) {
  spec.beta.assign(spec.L, Matrix::Zero(spec.d, spec.K));
}

NonlinearScores draw_nonlinear(int L, int K, int d, double delta, Rng& rng) {
  std::uniform_real_distribution<double> unif(-0.5, 0.5);
  std::gamma_distribution<double> gamma(1.0, 1.0);
  NonlinearScores nl;
  nl.a.resize(L, K);
  nl.b.resize(L, K);
  nl.c.resize(L, K);
  nl.w.resize(L, d);
  nl.delta = delta;
  for (int l = 0; l < L; ++l) {
    for (int k = 0; k < K; ++k) {
      nl.a(l, k) = unif(rng);
      nl.b(l, k) = unif(rng);
      nl.c(l, k) = unif(rng);
    }
    for (int j = 0; j < d; ++j) nl.w(l, j) = gamma(rng);
    nl.w.row(l) /= nl.w.row(l).sum();
  }
  return nl;
}

double log_gaussian_density(const GaussianLaw& law, const Eigen::LLT<Matrix>& llt,
                            double logdet, const Vector& x) {
  const Vector z = llt.matrixL().solve(x - law.mean);
  return -0.5 * z.squaredNorm() - 0.5 * logdet;
}

template <class T>
void mix(std::uint64_t& h, const T& v) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
}

void mix_matrix(std::uint64_t& h, const Matrix& m) {
  mix(h, m.rows());
  mix(h, m.cols());
  for (Index i = 0; i < m.size(); ++i) mix(h, m.data()[i]);
}

}  // namespace

GaussianLaw GaussianLaw::isotropic(const Vector& mean, double variance) {
  GaussianLaw g;
  g.mean = mean;
  g.cov = Matrix::Identity(mean.size(), mean.size()) * variance;
  g.factor = Matrix::Identity(mean.size(), mean.size()) * std::sqrt(variance);
  return g;
}

Setting parse_setting(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  for (const auto& entry : kNames) {
    if (upper == entry.name) return entry.setting;
  }
  fail("unknown setting '" + std::string(name) + "'");
}

std::string to_string(Setting s) {
  for (const auto& entry : kNames) {
    if (entry.setting == s) return entry.name;
  }
  return "?";
}

DgpSpec make_spec(Setting setting, const SpecParams& p, std::uint64_t seed) {
  DgpSpec spec;
  spec.setting = setting;
  spec.seed = seed;
  Rng rng(derive_seed(seed, 0x5eed));
  std::normal_distribution<double> normal(0.0, 1.0);

  const bool has_delta = setting == Setting::S3 || setting == Setting::S5;
  const bool has_sigma = setting == Setting::S4 || setting == Setting::Fig3Unstable;
  const bool nonlinear = setting == Setting::S2 || setting == Setting::S5;

  int d = 0, L = 0, K = 1;
  bool d_free = false, L_free = false, K_free = false;
  int d_min = 1;
  switch (setting) {
    case Setting::S1: d = 20, L = 2, d_free = L_free = true; break;
    case Setting::S2: d = 5, L = 4, K = 3, L_free = K_free = true, d_min = 4; break;
    case Setting::S3: d = 20, L = 2, d_free = true, d_min = 6; break;
    case Setting::S4: d = 20, L = 4, K = 3, d_free = L_free = K_free = true, d_min = 5; break;
    case Setting::S5: d = 5, L = 3, K = 3, L_free = K_free = true, d_min = 4; break;
    case Setting::Fig2: d = 4, L = 2; break;
    case Setting::Fig3NonRegular: d = 20, L = 2, d_free = true, d_min = 4; break;
    case Setting::Fig3Unstable: d = 4, L = 4, L_free = true; break;
    case Setting::Fig3Regular: d = 20, L = 2, d_free = true, d_min = 4; break;
  }
  spec.d = resolve_int(p.d, d, d_free, d_min, "d", setting);
  spec.L = resolve_int(p.L, L, L_free, 1, "L", setting);
  spec.K = resolve_int(p.K, K, K_free, 1, "K", setting);
  spec.delta = resolve_real(p.delta, 0.0, has_delta, 0.0, 4.0, "delta", setting);
  spec.sigma = resolve_real(p.sigma, has_sigma ? 0.1 : 0.0, has_sigma, 0.0, 10.0,
                            "sigma", setting);
  d = spec.d;
  L = spec.L;
  K = spec.K;

  const double target_shift = [&] {
    switch (setting) {
      case Setting::Fig3NonRegular:
      case Setting::Fig3Unstable:
      case Setting::Fig3Regular: return 0.1;
      default: return 0.2;
    }
  }();
  const double target_var = nonlinear ? 0.25 : 1.0;
  spec.source_x.assign(L, GaussianLaw::isotropic(Vector::Zero(d), 1.0));
  if (setting == Setting::Fig2) {
    spec.target_x = GaussianLaw::isotropic((Vector(4) << -1.0, -1.0, 1.0, 1.0).finished(), 1.0);
  } else {
    spec.target_x = GaussianLaw::isotropic(constant(d, target_shift), target_var);
  }

  if (nonlinear) {
    spec.nonlinear = draw_nonlinear(L, K, d, setting == Setting::S5 ? spec.delta : 0.0, rng);
    return spec;
  }

  set_linear(spec);
  auto& beta = spec.beta;
  switch (setting) {
    case Setting::S1:
      for (int l = 0; l < L; ++l)
        for (int j = 0; j < d; ++j) beta[l](j, 0) = 0.5 * normal(rng);
      break;
    case Setting::S3:
      beta[0].col(0).head(4).setConstant(0.5);
      beta[0](0, 0) += spec.delta;
      beta[1].col(0).segment(4, 2).setConstant(0.5);
      break;
    case Setting::S4:
      for (int l = 0; l < L; ++l) {
        for (int k = 0; k < K; ++k) {
          beta[l](0, k) = 1.0;
          beta[l](1, k) = 1.0;
          for (int j = 0; j < 5; ++j) beta[l](j, k) += spec.sigma * normal(rng);
        }
      }
      break;
    case Setting::Fig2:
      beta[0].col(0) << -0.4, -0.4, 0.2, 0.2;
      beta[1].col(0) << 1.0, 1.0, 0.2, 0.2;
      break;
    case Setting::Fig3NonRegular:
      beta[0].col(0).head(4) << 6.0, 0.5, 0.5, 0.5;
      beta[1].col(0).head(4).setConstant(0.5);
      break;
    case Setting::Fig3Unstable:
      for (int l = 0; l < L; ++l) {
        beta[l](0, 0) = 1.0;
        beta[l](1, 0) = 1.0;
        for (int j = 0; j < d; ++j) beta[l](j, 0) += spec.sigma * normal(rng);
      }
      break;
    case Setting::Fig3Regular:
      beta[0].col(0).head(2).setConstant(0.5);
      beta[1].col(0).segment(2, 2).setConstant(0.5);
      break;
    default: break;
  }
  return spec;
}

Vector eval_scores(const DgpSpec& spec, const Vector& x, int l) {
  if (l < 0 || l >= spec.L) fail("source index " + std::to_string(l) + " out of range");
  if (x.size() != spec.d) fail("covariate length differs from d");
  if (spec.linear()) return spec.beta[l].transpose() * x;
  const auto& nl = *spec.nonlinear;
  Vector s(spec.K);
  for (int kk = 0; kk < spec.K; ++kk) {
    const double k = kk + 1.0;
    double v = nl.a(l, kk);
    for (int j = 0; j < spec.d; ++j) {
      const double u = x[j] - k / 4.0;
      v += nl.w(l, j) * std::exp(-u * u / 4.0);
    }
    v += nl.b(l, kk) * x[0] * x[1];
    v += nl.c(l, kk) * std::sin((x[2] - x[3]) + k / 3.0);
    if (l == 0 && kk == 0) v += nl.delta * x[0];
    s[kk] = v;
  }
  return s;
}

Vector eval_cond_prob(const DgpSpec& spec, const Vector& x, int l) {
  const Vector s = eval_scores(spec, x, l);
  const double m = std::max(0.0, s.maxCoeff());
  Vector p(spec.K + 1);
  p[0] = std::exp(-m);
  for (int k = 0; k < spec.K; ++k) p[k + 1] = std::exp(s[k] - m);
  return p / p.sum();
}

Matrix cond_prob_matrix(const DgpSpec& spec, const Matrix& x, int l) {
  Matrix p(x.rows(), spec.K + 1);
  for (Index i = 0; i < x.rows(); ++i) p.row(i) = eval_cond_prob(spec, x.row(i).transpose(), l);
  return p;
}

Vector true_theta(const DgpSpec& spec, int l) {
  if (!spec.linear()) fail("setting " + to_string(spec.setting) + " has no linear coefficients");
  if (l < 0 || l >= spec.L) fail("source index out of range");
  return Eigen::Map<const Vector>(spec.beta[l].data(), spec.beta[l].size());
}

Matrix sample_gaussian(const GaussianLaw& law, Index n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index d = law.mean.size();
  Matrix z(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) z(i, j) = normal(rng);
  const Matrix f = law.factor.size() ? law.factor : gaussian_factor(law.cov);
  Matrix x = z * f.transpose();
  x.rowwise() += law.mean.transpose();
  return x;
}

LabeledDataset gen_source(const DgpSpec& spec, int l, Index n, std::uint64_t seed) {
  if (l < 0 || l >= spec.L) fail("source index " + std::to_string(l) + " out of range");
  if (n < 1) fail("n must be at least 1");
  const std::uint64_t stream = derive_seed(seed, static_cast<std::uint64_t>(l) + 1);
  LabeledDataset ds;
  ds.source_id = l + 1;
  ds.x = sample_gaussian(spec.source_x[l], n, stream);
  ds.y.resize(n);
  Rng rng(derive_seed(stream, 1));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (Index i = 0; i < n; ++i) {
    const Vector p = eval_cond_prob(spec, ds.x.row(i).transpose(), l);
    const double u = unif(rng);
    double acc = 0.0;
    int label = spec.K;
    for (int c = 0; c <= spec.K; ++c) {
      acc += p[c];
      if (u < acc) {
        label = c;
        break;
      }
    }
    ds.y[i] = label;
  }
  return ds;
}

UnlabeledDataset gen_target(const DgpSpec& spec, Index N, std::uint64_t seed) {
  if (N < 1) fail("N must be at least 1");
  return {sample_gaussian(spec.target_x, N, derive_seed(seed, 0))};
}

Vector true_density_ratio(const DgpSpec& spec, int l, const Matrix& x) {
  if (l < 0 || l >= spec.L) fail("source index out of range");
  const auto& p = spec.source_x[l];
  const auto& q = spec.target_x;
  Eigen::LLT<Matrix> lp(p.cov), lq(q.cov);
  if (lp.info() != Eigen::Success || lq.info() != Eigen::Success) {
    fail("density ratio needs non-singular covariances");
  }
  const double logdet_p = 2.0 * Matrix(lp.matrixL()).diagonal().array().log().sum();
  const double logdet_q = 2.0 * Matrix(lq.matrixL()).diagonal().array().log().sum();
  Vector w(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const Vector xi = x.row(i).transpose();
    w[i] = std::exp(log_gaussian_density(q, lq, logdet_q, xi) -
                    log_gaussian_density(p, lp, logdet_p, xi));
  }
  return w;
}

std::uint64_t spec_digest(const DgpSpec& spec) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  mix(h, static_cast<int>(spec.setting));
  mix(h, spec.L);
  mix(h, spec.K);
  mix(h, spec.d);
  mix(h, spec.delta);
  mix(h, spec.sigma);
  mix(h, spec.seed);
  for (const auto& g : spec.source_x) {
    mix_matrix(h, g.mean);
    mix_matrix(h, g.cov);
  }
  mix_matrix(h, spec.target_x.mean);
  mix_matrix(h, spec.target_x.cov);
  for (const auto& b : spec.beta) mix_matrix(h, b);
  if (spec.nonlinear) {
    mix_matrix(h, spec.nonlinear->a);
    mix_matrix(h, spec.nonlinear->b);
    mix_matrix(h, spec.nonlinear->c);
    mix_matrix(h, spec.nonlinear->w);
    mix(h, spec.nonlinear->delta);
  }
  return h;
}

}  // namespace cgdro
