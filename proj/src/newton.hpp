#pragma once

#include "cgdro/kernels.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>

namespace cgdro::detail {

struct NewtonOptions {
  double tol = 1e-10;  // on the sup-norm of the gradient
  int max_iter = 100;
  int max_halvings = 60;
};

struct NewtonResult {
  Vector x;
  double value = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Cholesky factor of symmetric h, adding jitter 1e-8, 1e-7, ... times the
/// diagonal scale until the factorization succeeds. Returns false if none did.
inline bool factor_spd(const Matrix& h, Eigen::LLT<Matrix>& llt) {
  llt.compute(h);
  if (llt.info() == Eigen::Success) return true;
  const double scale = std::max(1.0, h.diagonal().cwiseAbs().maxCoeff());
  Matrix hj = h;
  for (double jitter = 1e-8; jitter < 1e4; jitter *= 10.0) {
    hj.diagonal() = h.diagonal().array() + jitter * scale;
    llt.compute(hj);
    if (llt.info() == Eigen::Success) return true;
  }
  return false;
}

/// h^{-1} g with the jittered factor; falls back to a scaled gradient step.
inline Vector solve_spd(const Matrix& h, const Vector& g) {
  Eigen::LLT<Matrix> llt;
  if (factor_spd(h, llt)) return llt.solve(g);
  return g / std::max(1.0, h.diagonal().cwiseAbs().maxCoeff());
}

/// Damped Newton with Armijo backtracking (factor 0.5) for a smooth convex
/// objective. `terms(x, need)` returns value/grad/hess as kernels::SoftmaxTerms.
template <class Terms>
NewtonResult damped_newton(Terms&& terms, Vector x, const NewtonOptions& opt) {
  constexpr double kArmijo = 1e-4;
  NewtonResult res;
  auto cur = terms(x, kernels::kAll);
  for (int it = 0; it < opt.max_iter; ++it) {
    res.grad_norm = cur.grad.cwiseAbs().maxCoeff();
    if (res.grad_norm <= opt.tol) {
      res.converged = true;
      break;
    }
    const Vector step = solve_spd(cur.hess, cur.grad);
    double slope = -cur.grad.dot(step);
    Vector dir = -step;
    if (!(slope < 0.0)) {
      dir = -cur.grad;
      slope = -cur.grad.squaredNorm();
    }
    double t = 1.0;
    bool accepted = false;
    for (int h = 0; h <= opt.max_halvings; ++h, t *= 0.5) {
      const Vector trial = x + t * dir;
      const double v = terms(trial, kernels::kValue).value;
      if (std::isfinite(v) && v <= cur.value + kArmijo * t * slope) {
        x = trial;
        accepted = true;
        break;
      }
      // Near the optimum the decrease is below rounding; accept a full step
      // that does not increase the value beyond noise and shrinks the gradient.
      if (h == 0 && std::isfinite(v) &&
          v - cur.value <= 1e-14 * std::max(1.0, std::abs(cur.value))) {
        auto probe = terms(trial, kernels::kGrad);
        if (probe.grad.cwiseAbs().maxCoeff() < res.grad_norm) {
          x = trial;
          accepted = true;
          break;
        }
      }
    }
    res.iterations = it + 1;
    if (!accepted) break;
    cur = terms(x, kernels::kAll);
  }
  res.grad_norm = cur.grad.cwiseAbs().maxCoeff();
  if (res.grad_norm <= opt.tol) res.converged = true;
  res.x = std::move(x);
  res.value = cur.value;
  return res;
}

}  // namespace cgdro::detail
