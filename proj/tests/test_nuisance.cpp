#include "cgdro/datagen.hpp"
#include "cgdro/error.hpp"
#include "cgdro/nuisance.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace cgdro;

namespace {

// Predicts class K with probability 1 on rows seen in training and class 0
// elsewhere, so out-of-fold use is visible in the output.
class MemoryModel final : public ProbabilityModel {
 public:
  MemoryModel(Matrix seen, int K) : seen_(std::move(seen)), K_(K) {}
  Matrix predict_proba(const Matrix& x) const override {
    Matrix p = Matrix::Zero(x.rows(), K_ + 1);
    for (Index i = 0; i < x.rows(); ++i) {
      bool hit = false;
      for (Index j = 0; j < seen_.rows() && !hit; ++j) hit = seen_.row(j) == x.row(i);
      p(i, hit ? K_ : 0) = 1.0;
    }
    return p;
  }
  int num_classes() const override { return K_; }

 private:
  Matrix seen_;
  int K_;
};

CondProbLearner memory_learner() {
  return [](const Matrix& x, const Labels&, int K, std::uint64_t) {
    return std::make_shared<MemoryModel>(x, K);
  };
}

LabeledDataset gaussian_labels(Index n, int d, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  LabeledDataset ds{Matrix(n, d), Labels(n), 1};
  for (Index i = 0; i < ds.x.size(); ++i) ds.x.data()[i] = nd(rng);
  for (Index i = 0; i < n; ++i) ds.y[i] = ds.x(i, 0) + 0.5 * nd(rng) > 0 ? (i % 2 ? 1 : 2) : 0;
  return ds;
}

// Gradient of the penalized average cross-entropy, computed independently.
Vector penalized_gradient(const LogisticModel& m, const Matrix& x, const Labels& y, double ridge) {
  const int K = m.num_classes();
  const Index d = x.cols();
  const Matrix p = m.predict_proba(x);
  Vector g = Vector::Zero(K * (d + 1));
  for (Index i = 0; i < x.rows(); ++i) {
    for (int c = 0; c < K; ++c) {
      const double r = p(i, c + 1) - (y[i] == c + 1 ? 1.0 : 0.0);
      g.segment(c * d, d) += r * x.row(i).transpose();
      g[K * d + c] += r;
    }
  }
  g /= static_cast<double>(x.rows());
  for (int c = 0; c < K; ++c) g.segment(c * d, d) += ridge * m.coef.col(c);
  return g;
}

}  // namespace

TEST_CASE("balanced labels independent of x give zero coefficients") {
  Matrix x(40, 2);
  Labels y(40);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  for (Index i = 0; i < 20; ++i) {
    x(2 * i, 0) = x(2 * i + 1, 0) = nd(rng);
    x(2 * i, 1) = x(2 * i + 1, 1) = nd(rng);
    y[2 * i] = 0;
    y[2 * i + 1] = 1;
  }
  LogisticFitOptions opt;
  opt.ridge = 1.0;
  const LogisticModel m = fit_multinomial_logistic(x, y, 1, opt);
  CHECK(m.coef.cwiseAbs().maxCoeff() <= 1e-8);
  CHECK(m.predict_proba(x).isApproxToConstant(0.5, 1e-8));
}

TEST_CASE("separable 1-D data gives monotone probabilities") {
  Matrix x(20, 1);
  Labels y(20);
  for (Index i = 0; i < 20; ++i) {
    x(i, 0) = static_cast<double>(i) - 9.5;
    y[i] = i >= 10;
  }
  LogisticFitOptions opt;
  opt.ridge = 0.1;
  const LogisticModel m = fit_multinomial_logistic(x, y, 1, opt);
  const Matrix p = m.predict_proba(x);
  for (Index i = 1; i < 20; ++i) CHECK(p(i, 1) > p(i - 1, 1));
  CHECK(m.coef(0, 0) > 0.0);
}

TEST_CASE("large ridge shrinks coefficients to zero") {
  const LabeledDataset ds = gaussian_labels(300, 3, 2);
  LogisticFitOptions opt;
  opt.ridge = 1e8;
  CHECK(fit_multinomial_logistic(ds.x, ds.y, 2, opt).coef.cwiseAbs().maxCoeff() <= 1e-7);
}

TEST_CASE("returned model meets the gradient tolerance") {
  const LabeledDataset ds = gaussian_labels(500, 4, 3);
  for (double ridge : {0.0, 1e-2}) {
    LogisticFitOptions opt;
    opt.ridge = ridge;
    opt.tol = 1e-9;
    const LogisticModel m = fit_multinomial_logistic(ds.x, ds.y, 2, opt);
    CHECK(penalized_gradient(m, ds.x, ds.y, ridge).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((m.predict_proba(ds.x).rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("Newton non-convergence reports the gradient norm") {
  const LabeledDataset ds = gaussian_labels(200, 2, 4);
  LogisticFitOptions opt;
  opt.max_iter = 1;
  opt.tol = 1e-15;
  try {
    fit_multinomial_logistic(ds.x, ds.y, 2, opt);
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(e.residual() > 0.0);
  }
  Labels one_class = Labels::Zero(ds.size());
  CHECK_THROWS_AS(fit_multinomial_logistic(ds.x, one_class, 2, LogisticFitOptions{}), ValidationError);
}

TEST_CASE("fold split partitions the rows") {
  const FoldSplit s = FoldSplit::make(11, 5);
  CHECK(s.a.size() == 5);
  CHECK(s.b.size() == 6);
  std::vector<Index> all(s.a);
  all.insert(all.end(), s.b.begin(), s.b.end());
  std::sort(all.begin(), all.end());
  for (Index i = 0; i < 11; ++i) CHECK(all[static_cast<std::size_t>(i)] == i);
  CHECK(std::is_sorted(s.a.begin(), s.a.end()));
  for (Index i : s.a) CHECK(s.in_a[static_cast<std::size_t>(i)]);
}

TEST_CASE("source rows get the other fold's model") {
  const LabeledDataset ds = gaussian_labels(30, 2, 6);
  const CondProbPair pair = cross_fit_cond_prob(ds, 2, memory_learner(), 7);
  const Matrix f = pair.predict_source(ds.x);
  // Every row is unseen by the model that scores it: class K gets the floor.
  CHECK(f.col(1).isConstant(kProbClip));
  CHECK(f.col(0).isConstant(kProbClip));
  // Row-level check of the swap against the fold bookkeeping.
  const Matrix pb = pair.model_b->predict_proba(ds.x);
  for (Index i : pair.split.a) CHECK(pb(i, 2) == 0.0);
}

TEST_CASE("identical fold models give the same target prediction") {
  const LabeledDataset ds = gaussian_labels(60, 2, 8);
  const auto model = std::make_shared<ConstantModel>((Vector(3) << 0.2, 0.3, 0.5).finished());
  const CondProbLearner same = [&](const Matrix&, const Labels&, int, std::uint64_t) { return model; };
  const CondProbPair pair = cross_fit_cond_prob(ds, 2, same, 9);
  const Matrix t = pair.predict_target(ds.x);
  CHECK(t.col(0).isConstant(0.3, 1e-15));
  CHECK(t.col(1).isConstant(0.5, 1e-15));
}

TEST_CASE("predictions are clipped") {
  const LabeledDataset ds = gaussian_labels(40, 1, 10);
  const auto model = std::make_shared<ConstantModel>((Vector(2) << 0.0, 1.0).finished());
  const CondProbLearner extreme = [&](const Matrix&, const Labels&, int, std::uint64_t) { return model; };
  const CondProbPair pair = cross_fit_cond_prob(ds, 1, extreme, 11);
  CHECK(pair.predict_source(ds.x).maxCoeff() == 1.0 - kProbClip);
  CHECK(pair.predict_target(ds.x).maxCoeff() == 1.0 - kProbClip);
}

TEST_CASE("a fold missing a class falls back to pooled frequencies") {
  LabeledDataset ds{Matrix::Random(20, 2), Labels::Zero(20), 1};
  ds.y[3] = 1;  // a single class-1 row can sit in only one fold
  const CondProbPair pair = cross_fit_cond_prob(ds, 1, logistic_learner({}), 12);
  CHECK((pair.fallback_a || pair.fallback_b));
  const auto* c = dynamic_cast<const ConstantModel*>(pair.fallback_a ? pair.model_a.get() : pair.model_b.get());
  REQUIRE(c != nullptr);
  CHECK(c->probs()[1] == doctest::Approx(0.05));
  CHECK_THROWS_AS(cross_fit_cond_prob(LabeledDataset{Matrix::Ones(3, 1), Labels::Zero(3), 1}, 1,
                                      logistic_learner({}), 1),
                  ValidationError);
}

TEST_CASE("cross-validated ridge comes from the grid") {
  const LabeledDataset ds = gaussian_labels(300, 3, 13);
  LearnerOptions opt;
  const double r = select_ridge_cv(ds.x, ds.y, 2, opt, 14);
  CHECK(std::find(opt.ridge_grid.begin(), opt.ridge_grid.end(), r) != opt.ridge_grid.end());
  CHECK(select_ridge_cv(ds.x, ds.y, 2, opt, 14) == r);
}

TEST_CASE("density ratio is near one without shift") {
  const GaussianLaw law = GaussianLaw::isotropic(Vector::Zero(3), 1.0);
  const Matrix src = sample_gaussian(law, 5000, 15);
  const Matrix tgt = sample_gaussian(law, 5000, 16);
  const DensityRatioModel m = fit_density_ratio(src, tgt, {}, {}, 17);
  const Matrix probe = sample_gaussian(law, 500, 18);
  // Probe rows within two standard deviations of the common mean.
  Vector w = m.predict(probe);
  double worst = 0.0;
  for (Index i = 0; i < probe.rows(); ++i) {
    if (probe.row(i).norm() <= 2.0) worst = std::max(worst, std::abs(w[i] - 1.0));
  }
  CHECK(worst <= 0.15);
}

TEST_CASE("density ratio under the FIG2 shift") {
  const DgpSpec spec = make_spec(Setting::Fig2, {}, 1);
  const Matrix src = gen_source(spec, 0, 3000, 19).x;
  const Matrix tgt = gen_target(spec, 3000, 20).x;
  const ClipBounds clip;
  const DensityRatioModel m = fit_density_ratio(src, tgt, clip, {}, 21);
  Matrix probe(3, 4);
  probe.row(0) = spec.target_x.mean.transpose();
  probe.row(1) = 50.0 * spec.target_x.mean.transpose();
  probe.row(2) = -50.0 * spec.target_x.mean.transpose();
  const Vector w = m.predict(probe);
  CHECK(w[0] > 1.0);
  CHECK(w[1] == clip.hi);
  CHECK(w[2] == clip.lo);
}

TEST_CASE("density-ratio cross-fitting swaps folds on source rows") {
  const DgpSpec spec = make_spec(Setting::Fig2, {}, 1);
  const LabeledDataset ds = gen_source(spec, 0, 400, 22);
  const UnlabeledDataset tgt = gen_target(spec, 400, 23);
  const FoldSplit split = FoldSplit::make(ds.size(), 24);
  const DensityRatioPair pair = cross_fit_density_ratio(ds, tgt, split, {}, {}, 25);
  const Vector w = pair.predict_source(ds.x);
  const Vector wa = pair.model_a.predict(ds.x);
  const Vector wb = pair.model_b.predict(ds.x);
  for (Index i = 0; i < ds.size(); ++i) CHECK(w[i] == (split.in_a[static_cast<std::size_t>(i)] ? wb[i] : wa[i]));
  CHECK(w.minCoeff() >= 0.05);
  CHECK(w.maxCoeff() <= 20.0);
}
