#pragma once

// Maximum-likelihood fitting of single models and mixtures. train_ml drives
// the CMA-ES strategy with feasibility rejection; train_gradient runs Adam or
// plain SGD on the analytic gradients with backtracking into the feasible
// region. Costs are negative log-likelihood sums, never exponentiated values.

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "rtbm/core.hpp"
#include "rtbm/mixture.hpp"
#include "rtbm/types.hpp"

namespace rtbm {

enum class Optimizer { CmaEs, Adam, Sgd };

struct TrainConfig {
  Optimizer optimizer = Optimizer::CmaEs;
  double bound = 50.0;        // symmetric box on every flat parameter
  int population = 0;         // CMA-ES lambda; 0 selects 4 + floor(3 ln n)
  int max_iters = 500;
  double tol = 1e-4;          // stop when best cost stalls by less than this
  std::uint64_t seed = 0;
  double init_scale = 1.0;    // range for init_random when callers draw starts
  double sigma0 = 0.3;        // CMA-ES initial step size
  double learning_rate = 0.01;  // Adam / SGD step size
};

struct TrainReport {
  double final_cost = 0.0;
  int iterations = 0;
  long rejected_candidates = 0;
  std::vector<double> history;  // best-so-far cost per iteration, non-increasing
};

// Flat-space driver shared by every trainer in the library. Dispatches on
// config.optimizer: CMA-ES uses cost values only (evaluation failures rank
// last); Adam/SGD also request the gradient. cost(x, grad) returns the cost
// at x and, when grad is non-null, writes the cost gradient into it.
std::pair<Vector, TrainReport> minimize_flat(
    const std::function<double(const Vector&, Vector*)>& cost,
    const std::function<bool(const Vector&)>& feasible, const Vector& x0,
    const TrainConfig& config);

// Negative log-likelihood sum -sum_i log P(v_i) over samples stored as
// columns. Throws EmptyData, NonFiniteSample, DimensionMismatch.
double nll_cost(const RtbmParams& params, const Eigen::Ref<const Matrix>& data);
double nll_cost(const MixtureModel& mixture, const Eigen::Ref<const Matrix>& data);

// CMA-ES maximum likelihood. Candidates violating the model invariants or
// the box bound are rejected and redrawn; candidates whose likelihood is not
// evaluable rank last. Returns the best feasible model found; deterministic
// for a fixed config.seed. The optimizer field of the config is ignored
// here: this entry point is the non-gradient path.
std::pair<RtbmParams, TrainReport> train_ml(const RtbmParams& initial,
                                            const Eigen::Ref<const Matrix>& data,
                                            const TrainConfig& config);
std::pair<MixtureModel, TrainReport> train_ml(const MixtureModel& initial,
                                              const Eigen::Ref<const Matrix>& data,
                                              const TrainConfig& config);

// Gradient-descent maximum likelihood (config.optimizer must be Adam or
// Sgd). Requires diagonal T. Steps that leave the feasible region are halved
// up to 20 times before LineSearchFailed.
std::pair<RtbmParams, TrainReport> train_gradient(const RtbmParams& initial,
                                                  const Eigen::Ref<const Matrix>& data,
                                                  const TrainConfig& config);
std::pair<MixtureModel, TrainReport> train_gradient(const MixtureModel& initial,
                                                    const Eigen::Ref<const Matrix>& data,
                                                    const TrainConfig& config);

}  // namespace rtbm
