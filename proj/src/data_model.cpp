#include "cgdro/data_model.hpp"

#include "cgdro/error.hpp"

#include <string>

namespace cgdro {

namespace {

constexpr const char* kModule = "data_model";

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(kModule, msg);
}

}  // namespace

void validate(const LabeledDataset& ds, int K) {
  const std::string tag = "source " + std::to_string(ds.source_id) + ": ";
  require(ds.x.rows() == ds.y.size(), tag + "row count of x and y differ");
  require(ds.size() >= 2, tag + "need at least 2 rows, got " + std::to_string(ds.size()));
  require(ds.x.allFinite(), tag + "covariates contain non-finite values");
  for (Index i = 0; i < ds.y.size(); ++i) {
    require(ds.y[i] >= 0 && ds.y[i] <= K,
            tag + "label " + std::to_string(ds.y[i]) + " at row " + std::to_string(i) +
                " outside {0,...," + std::to_string(K) + "}");
  }
}

void validate(const UnlabeledDataset& ds) {
  require(ds.size() >= 2, "target: need at least 2 rows, got " + std::to_string(ds.size()));
  require(ds.x.allFinite(), "target: covariates contain non-finite values");
}

Dims check_problem(const std::vector<LabeledDataset>& sources,
                   const UnlabeledDataset& target, int declared_K) {
  require(!sources.empty(), "no source datasets");
  Dims dims;
  dims.L = static_cast<int>(sources.size());
  dims.d = sources.front().dim();
  int K = 0;
  for (const auto& s : sources) {
    require(s.dim() == dims.d, "source " + std::to_string(s.source_id) + " has d=" +
                                   std::to_string(s.dim()) + ", expected " +
                                   std::to_string(dims.d));
    K = std::max(K, s.max_label());
  }
  if (declared_K > 0) K = declared_K;
  require(K >= 1, "labels must include at least one non-reference class");
  dims.K = K;
  for (const auto& s : sources) validate(s, K);
  require(target.dim() == dims.d, "target has d=" + std::to_string(target.dim()) +
                                      ", expected " + std::to_string(dims.d));
  validate(target);
  return dims;
}

void ProblemConfig::validate() const {
  require(alpha > 0.0 && alpha < 0.5, "alpha must lie in (0, 0.5)");
  require(alpha0 > 0.0 && alpha0 <= 0.01, "alpha0 must lie in (0, 0.01]");
  require(alpha > alpha0, "alpha must exceed alpha0");
  require(eta0 > 0.0, "eta0 must be positive");
  require(M >= 1, "M must be positive");
  require(eta > 0.0, "eta must be positive");
  require(max_iter >= 1, "max_iter must be positive");
  require(tol > 0.0, "tol must be positive");
  require(ridge >= 0.0, "ridge must be non-negative");
  require(gap_check_every >= 1, "gap_check_every must be positive");
}

double InferenceResult::ci_length() const {
  double total = 0.0;
  for (const auto& iv : ci) total += iv.width();
  return total;
}

bool InferenceResult::covers(double v) const {
  for (const auto& iv : ci) {
    if (iv.contains(v)) return true;
  }
  return false;
}

}  // namespace cgdro
