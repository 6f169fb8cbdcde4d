#pragma once

// Covariance matrix adaptation evolution strategy, the standard
// (mu/mu_w, lambda) formulation with cumulative step-size control.
// Feasibility is enforced by rejection: infeasible draws are resampled up to
// a per-slot cap. Deterministic for a fixed seed.

#include <functional>
#include <vector>

#include "rtbm/error.hpp"
#include "rtbm/types.hpp"

namespace rtbm {

struct CmaOptions {
  int lambda = 0;            // population size; 0 selects 4 + floor(3 ln n)
  int max_iters = 1000;
  double tol = 1e-4;         // stop when the best cost moves less than this
  int tol_window = 10;       // ... over this many consecutive iterations
  double sigma0 = 0.3;       // initial step size
  double bound = 50.0;       // symmetric box constraint on every coordinate
  std::uint64_t seed = 0;
  int resample_cap = 500;    // per candidate slot per iteration
};

struct CmaResult {
  Vector best_x;
  double best_cost;
  int iterations;
  long rejected_candidates;
  std::vector<double> history;  // best-so-far cost per iteration, non-increasing
};

// Minimizes cost over the feasible set {x : |x|_inf <= bound and
// feasible(x)}. The cost may return +infinity to deprioritize a candidate;
// NaN raises Diverged. x0 must be feasible.
CmaResult cma_es_minimize(const std::function<double(const Vector&)>& cost,
                          const std::function<bool(const Vector&)>& feasible,
                          const Vector& x0, const CmaOptions& opts);

}  // namespace rtbm
