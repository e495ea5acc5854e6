#pragma once

#include "cgdro/data_model.hpp"
#include "cgdro/datagen.hpp"
#include "cgdro/solver.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace cgdro {

struct WorstCaseLoss {
  double worst = 0.0;
  Vector per_source;  // L
  int argmax = 0;     // lowest index on ties
};

/// Per-source target risk -(1/N) sum_i sum_c P^(l)(c|x_i) log p_c(x_i, theta)
/// with analytic conditional probabilities, and its maximum over sources.
WorstCaseLoss worst_case_loss(const Vector& theta, const DgpSpec& spec, const Matrix& target_x);

/// Labels drawn once from P^(l)(.|x) under `seed`; returns the average
/// negative log true probability of the drawn labels.
double non_reducible_loss(const DgpSpec& spec, int l, const Matrix& target_x, std::uint64_t seed);

/// ||theta_hat - theta_ref||_2 / sqrt(d).
double estimation_error(const Vector& theta_hat, const Vector& theta_ref, int d);

struct PopulationOptions {
  Index n_big = 100000;  // per source
  Index N_big = 200000;
  std::uint64_t seed = 0;
  std::filesystem::path cache_dir;  // empty disables caching
  bool refine = true;               // polish the Mirror Prox output, see below
};

/// Full CG-DRO fit on a very large sample, used as the reference theta*.
/// With `refine`, the Mirror Prox solution is then polished by projected
/// Newton ascent on the dual g(gamma) = min_theta phi(theta, gamma), whose
/// curvature is U' H^{-1} U; averaged Mirror Prox alone needs O(1/eps)
/// iterations for a gap of eps. Results are cached under cache_dir keyed by
/// the DgpSpec digest, sizes, seed, refine flag and the solver fields of cfg.
Vector population_theta(const DgpSpec& spec, const PopulationOptions& opt, const ProblemConfig& cfg);

/// Polishes an approximate saddle point (theta, gamma) of ctx as described
/// above. Returns the refined pair with its gap appended to gap_trace when it
/// improves on the input.
FitResult refine_saddle(const ObjectiveContext& ctx, FitResult start);

struct EvalReport {
  std::string method;
  double worst_case_loss = 0.0;
  Vector per_source_loss;
  Vector non_reducible;
  double est_error = 0.0;
};

}  // namespace cgdro
