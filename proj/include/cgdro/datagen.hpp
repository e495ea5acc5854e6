#pragma once

#include "cgdro/data_model.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cgdro {

enum class Setting { S1, S2, S3, S4, S5, Fig2, Fig3NonRegular, Fig3Unstable, Fig3Regular };

/// Accepts "S1".."S5", "FIG2", "FIG3_NONREG", "FIG3_UNSTABLE", "FIG3_REG"
/// (case-insensitive). Throws ValidationError otherwise.
Setting parse_setting(std::string_view name);
std::string to_string(Setting s);

struct SpecParams {
  std::optional<double> delta;
  std::optional<double> sigma;
  std::optional<int> d;
  std::optional<int> L;
  std::optional<int> K;
};

struct GaussianLaw {
  Vector mean;
  Matrix cov;
  Matrix factor;  // lower triangular, cov = factor * factor'

  static GaussianLaw isotropic(const Vector& mean, double variance);
};

/// Parameters of the nonlinear score
///   phi_k(x) = a_k + sum_j w_j exp(-(x_j - k/4)^2 / 4) + b_k x_1 x_2
///              + c_k sin(x_3 - x_4 + k/3) + delta x_1 [l = 1, k = 1].
struct NonlinearScores {
  Matrix a, b, c;  // L × K
  Matrix w;        // L × d, rows on the simplex
  double delta = 0.0;
};

struct DgpSpec {
  Setting setting = Setting::S1;
  int L = 0;
  int K = 0;
  int d = 0;
  double delta = 0.0;
  double sigma = 0.0;
  std::uint64_t seed = 0;

  std::vector<GaussianLaw> source_x;
  GaussianLaw target_x;
  std::vector<Matrix> beta;  // linear settings: L entries of d × K, column k-1 is beta^(l,k)
  std::optional<NonlinearScores> nonlinear;

  bool linear() const { return !nonlinear.has_value(); }
  Dims dims() const { return {d, K, L}; }
};

/// Coefficients are drawn once from `seed` and frozen. Throws ValidationError
/// for parameters outside the setting's range.
DgpSpec make_spec(Setting setting, const SpecParams& params, std::uint64_t seed);

/// Scores (phi_1, ..., phi_K) for source l (0-based); phi_0 is 0.
Vector eval_scores(const DgpSpec& spec, const Vector& x, int l);

/// Softmax of (0, phi_1, ..., phi_K); length K+1.
Vector eval_cond_prob(const DgpSpec& spec, const Vector& x, int l);

/// Row-wise eval_cond_prob; n × (K+1).
Matrix cond_prob_matrix(const DgpSpec& spec, const Matrix& x, int l);

/// Stacked beta^(l,1..K) of a linear setting, length d*K.
Vector true_theta(const DgpSpec& spec, int l);

/// n rows from P^(l); labels drawn from eval_cond_prob. source_id = l + 1.
LabeledDataset gen_source(const DgpSpec& spec, int l, Index n, std::uint64_t seed);
UnlabeledDataset gen_target(const DgpSpec& spec, Index N, std::uint64_t seed);

/// Draws n rows from a Gaussian law.
Matrix sample_gaussian(const GaussianLaw& law, Index n, std::uint64_t seed);

/// Exact dQ_X/dP^(l)_X at each row of x.
Vector true_density_ratio(const DgpSpec& spec, int l, const Matrix& x);

/// Stable 64-bit digest of every field; used as a cache key.
std::uint64_t spec_digest(const DgpSpec& spec);

}  // namespace cgdro
