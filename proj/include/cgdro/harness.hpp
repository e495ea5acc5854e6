#pragma once

#include "cgdro/datagen.hpp"
#include "cgdro/metrics.hpp"
#include "cgdro/solver.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace cgdro {

/// One long-format output record.
struct TidyRow {
  std::string setting;
  std::string param;
  int rep = 0;
  std::string method;
  std::string metric;
  double value = 0.0;
};

void write_tidy_csv(std::ostream& out, const std::vector<TidyRow>& rows);

/// Source datasets of sizes n[l] and a target sample, all from replication
/// seed `seed`.
std::vector<LabeledDataset> gen_sources(const DgpSpec& spec, const std::vector<Index>& n,
                                        std::uint64_t seed);

struct WorstCaseSweepOptions {
  Setting setting = Setting::Fig2;
  SpecParams params;
  std::uint64_t spec_seed = 0;
  std::vector<double> mixtures{0.5};  // share of the n_total rows drawn from source 1
  Index n_total = 4000;
  Index N = 10000;
  Index N_eval = 100000;  // target rows used to evaluate losses
  int reps = 1;
  std::uint64_t seed = 0;
  ProblemConfig cfg;
  MirrorProxOptions gdro;
  bool parallel = true;
};

struct WorstCasePoint {
  double mixture = 0.0;
  int rep = 0;
  double cgdro = 0.0;
  double gdro = 0.0;
  double erm = 0.0;
  Vector non_reducible;
};

struct WorstCaseSweepResult {
  std::vector<WorstCasePoint> points;
  std::vector<TidyRow> rows;
};

/// Worst-case target loss of CG-DRO, Group DRO and pooled ERM as the source
/// mixture varies (two sources only).
WorstCaseSweepResult worst_case_sweep(const WorstCaseSweepOptions& opt);

struct RateStudyOptions {
  Setting setting = Setting::S1;
  SpecParams params;
  std::uint64_t spec_seed = 0;
  std::vector<Index> n_grid{200, 400, 800, 1600};
  Index N = 10000;
  int reps = 50;
  std::uint64_t seed = 0;
  ProblemConfig cfg;
  PopulationOptions population;
  ProblemConfig population_cfg;
  bool parallel = true;
};

struct RateStudyResult {
  Vector theta_ref;
  std::vector<double> mean_error;  // per n_grid entry
  double slope = 0.0;              // OLS slope of log mean error on log n
  std::vector<TidyRow> rows;
};

RateStudyResult rate_study(const RateStudyOptions& opt);

struct CoverageStudyOptions {
  Setting setting = Setting::S3;
  SpecParams params;
  std::uint64_t spec_seed = 0;
  Index n = 300;  // per source
  Index N = 3000;
  int reps = 100;
  int coord = 0;
  std::uint64_t seed = 0;
  ProblemConfig cfg;
  PopulationOptions population;
  ProblemConfig population_cfg;
  bool parallel = true;
};

struct CoverageStudyResult {
  double theta_ref_j = 0.0;
  std::vector<double> theta_hat_j;  // per replication, NaN on failure
  std::vector<double> width;        // union-CI length
  std::vector<char> covered;
  int failures = 0;                 // counted as not covered
  double coverage = 0.0;
  double mean_width = 0.0;
  double replication_se = 0.0;      // sd of theta_hat_j across replications
  double naive_coverage = 0.0;      // theta_hat_j ± z_{alpha/2}·replication_se
  std::vector<TidyRow> rows;
};

/// Repeated perturbation inference against the population reference.
CoverageStudyResult coverage_study(const CoverageStudyOptions& opt);

/// OLS slope of y on x.
double ols_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace cgdro
