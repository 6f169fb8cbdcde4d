#include "rtbm/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "rtbm/cma_es.hpp"
#include "rtbm/error.hpp"

namespace rtbm {
namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr int kMaxHalvings = 20;
constexpr int kTolWindow = 10;  // matches the CMA-ES stall window

void check_config(const TrainConfig& config) {
  if (!(config.bound > 0.0)) fail(ErrorCode::InvalidArgument, "bound must be positive");
  if (!(config.tol > 0.0)) fail(ErrorCode::InvalidArgument, "tol must be positive");
  if (config.max_iters < 0) fail(ErrorCode::InvalidArgument, "max_iters must be nonnegative");
}

void check_data(const Eigen::Ref<const Matrix>& data, Index n_v) {
  if (data.cols() == 0) fail(ErrorCode::EmptyData, "no training samples");
  if (data.rows() != n_v)
    fail(ErrorCode::DimensionMismatch, "sample length does not match N_v");
  if (!data.allFinite())
    fail(ErrorCode::NonFiniteSample, "training data contains non-finite entries");
}

bool model_is_valid(const RtbmParams& params) { return is_valid(params); }

bool model_is_valid(const MixtureModel& model) {
  if (model.components.empty() || model.omegas.size() != model.size()) return false;
  for (const auto& component : model.components)
    if (!is_valid(component)) return false;
  return true;
}

double sum_nll(const RtbmParams& params, const Eigen::Ref<const Matrix>& data) {
  return RtbmEvaluator(params).mean_nll(data) * static_cast<double>(data.cols());
}

double sum_nll(const MixtureModel& model, const Eigen::Ref<const Matrix>& data) {
  return MixtureEvaluator(model).mean_nll(data) * static_cast<double>(data.cols());
}

// Gradient of the mean log-density rearranged into the flat layout. The
// off-diagonal T slots carry no gradient: this path requires diagonal T, so
// those coordinates stay frozen. d_q already follows the paired-move
// convention and therefore matches a flat slot that writes both (i, j) and
// (j, i).
Vector grad_to_flat(const RtbmParams& params, const DensityGradients& g) {
  const Index nv = params.n_v();
  const Index nh = params.n_h();
  Vector out(param_count(params));
  Index idx = 0;
  for (Index i = 0; i < nv; ++i)
    for (Index j = 0; j <= i; ++j) out(idx++) = i == j ? g.d_t_diag(i) : 0.0;
  for (Index i = 0; i < nh; ++i)
    for (Index j = 0; j <= i; ++j) out(idx++) = g.d_q(i, j);
  for (Index i = 0; i < nv; ++i)
    for (Index j = 0; j < nh; ++j) out(idx++) = g.d_w(i, j);
  out.segment(idx, nv) = g.d_b_v;
  idx += nv;
  out.segment(idx, nh) = g.d_b_h;
  return out;
}

// Sum-NLL and its flat gradient in one pass.
double cost_and_grad(const RtbmParams& params, const Eigen::Ref<const Matrix>& data,
                     Vector& grad) {
  const RtbmEvaluator ev(params);
  const DensityGradients g = ev.mean_log_density_gradients(data);
  const double n = static_cast<double>(data.cols());
  grad = -n * grad_to_flat(params, g);
  return -n * g.log_p;
}

double cost_and_grad(const MixtureModel& model, const Eigen::Ref<const Matrix>& data,
                     Vector& grad) {
  const Index k_count = model.size();
  const Index n = data.cols();
  std::vector<RtbmEvaluator> evs;
  evs.reserve(static_cast<std::size_t>(k_count));
  for (const auto& component : model.components) evs.emplace_back(component);
  const Vector lw = log_weights(model);

  // One pass for log M and the posterior responsibilities; the latter weight
  // the per-component gradient batches.
  Matrix resp(k_count, n);
  Vector terms(k_count);
  double cost = 0.0;
  for (Index c = 0; c < n; ++c) {
    for (Index k = 0; k < k_count; ++k)
      terms(k) = lw(k) + evs[static_cast<std::size_t>(k)].log_density(data.col(c));
    const double mx = terms.maxCoeff();
    const double lse = mx + std::log((terms.array() - mx).exp().sum());
    cost -= lse;
    resp.col(c) = (terms.array() - lse).exp();
  }

  grad.resize(param_count(model));
  Index idx = 0;
  for (Index k = 0; k < k_count; ++k) {
    const Vector wts = resp.row(k).transpose();
    const DensityGradients g =
        evs[static_cast<std::size_t>(k)].mean_log_density_gradients(data, &wts);
    const Index per = param_count(model.components[static_cast<std::size_t>(k)]);
    grad.segment(idx, per) =
        grad_to_flat(model.components[static_cast<std::size_t>(k)], g);
    idx += per;
  }
  // d mean log M / d omega_k = mean responsibility - softmax weight.
  grad.segment(idx, k_count) = resp.rowwise().mean() - lw.array().exp().matrix();
  grad *= -static_cast<double>(n);
  return cost;
}

// Hooks tying a model type to the flat driver. The cost hook skips gradient
// work when the caller does not request it (the CMA-ES path).
template <typename Model>
std::pair<Model, TrainReport> run_flat(const Model& initial,
                                       const Eigen::Ref<const Matrix>& data,
                                       const TrainConfig& config) {
  validate(initial);
  check_data(data, initial.n_v());

  Model feas_scratch = initial;
  const auto feasible = [&](const Vector& x) {
    unflatten_into(feas_scratch, x);
    return model_is_valid(feas_scratch);
  };
  Model cost_scratch = initial;
  const auto cost = [&](const Vector& x, Vector* grad) {
    unflatten_into(cost_scratch, x);
    if (grad == nullptr) return sum_nll(cost_scratch, data);
    return cost_and_grad(cost_scratch, data, *grad);
  };

  auto [best_x, report] = minimize_flat(cost, feasible, flatten(initial), config);
  Model out = initial;
  unflatten_into(out, best_x);
  return {std::move(out), std::move(report)};
}

}  // namespace

std::pair<Vector, TrainReport> minimize_flat(
    const std::function<double(const Vector&, Vector*)>& cost,
    const std::function<bool(const Vector&)>& feasible, const Vector& x0,
    const TrainConfig& config) {
  check_config(config);

  if (config.optimizer == Optimizer::CmaEs) {
    // Candidates that pass the feasibility test but whose cost is not
    // evaluable (theta zero, truncation overflow) rank last instead of
    // aborting the run.
    const auto safe_cost = [&](const Vector& x) {
      try {
        return cost(x, nullptr);
      } catch (const Error&) {
        return std::numeric_limits<double>::infinity();
      }
    };
    CmaOptions copts;
    copts.lambda = config.population;
    copts.max_iters = config.max_iters;
    copts.tol = config.tol;
    // Dimension-aware stall window (the usual TolFun horizon); a fixed short
    // window quits high-dimensional runs during ordinary CMA plateaus.
    const int n = static_cast<int>(x0.size());
    const int lambda = config.population > 0
                           ? config.population
                           : 4 + static_cast<int>(3.0 * std::log(std::max(n, 1)));
    copts.tol_window =
        kTolWindow + (30 * n + lambda - 1) / std::max(lambda, 1);
    copts.sigma0 = config.sigma0;
    copts.bound = config.bound;
    copts.seed = config.seed;
    const CmaResult r = cma_es_minimize(safe_cost, feasible, x0, copts);
    TrainReport report;
    report.final_cost = r.best_cost;
    report.iterations = r.iterations;
    report.rejected_candidates = r.rejected_candidates;
    report.history = r.history;
    return {r.best_x, report};
  }

  if (!(config.learning_rate >= 0.0))
    fail(ErrorCode::InvalidArgument, "learning rate must be nonnegative");
  if (x0.cwiseAbs().maxCoeff() > config.bound || !feasible(x0))
    fail(ErrorCode::InvalidArgument, "starting point is infeasible");

  Vector x = x0;
  Vector grad(x.size());
  double current = cost(x, &grad);
  if (std::isnan(current)) fail(ErrorCode::Diverged, "cost is NaN");

  TrainReport report;
  Vector best_x = x;
  double best = current;
  std::vector<double> trajectory;  // raw per-iteration costs for the stall test
  trajectory.push_back(current);

  const bool adam = config.optimizer == Optimizer::Adam;
  Vector m = Vector::Zero(x.size());
  Vector v = Vector::Zero(x.size());

  for (int iter = 1; iter <= config.max_iters; ++iter) {
    Vector step(x.size());
    if (adam) {
      m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * grad;
      v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * grad.cwiseProduct(grad);
      const Vector m_hat = m / (1.0 - std::pow(kAdamBeta1, iter));
      const Vector v_hat = v / (1.0 - std::pow(kAdamBeta2, iter));
      step = config.learning_rate *
             (m_hat.array() / (v_hat.array().sqrt() + kAdamEps)).matrix();
    } else {
      step = config.learning_rate * grad;
    }

    // Backtrack into the feasible region: halve the step until the candidate
    // satisfies the invariants and its cost is evaluable and finite.
    double factor = 1.0;
    bool accepted = false;
    Vector cand;
    Vector cand_grad(x.size());
    double cand_cost = 0.0;
    for (int attempt = 0; attempt <= kMaxHalvings; ++attempt) {
      cand = x - factor * step;
      if (cand.cwiseAbs().maxCoeff() <= config.bound && feasible(cand)) {
        try {
          cand_cost = cost(cand, &cand_grad);
          if (std::isfinite(cand_cost)) {
            accepted = true;
            break;
          }
        } catch (const Error&) {
        }
      }
      ++report.rejected_candidates;
      factor *= 0.5;
    }
    if (!accepted)
      fail(ErrorCode::LineSearchFailed,
           "no feasible step within " + std::to_string(kMaxHalvings) + " halvings");

    x = cand;
    grad = cand_grad;
    current = cand_cost;
    if (current < best) {
      best = current;
      best_x = x;
    }
    report.history.push_back(best);
    report.iterations = iter;

    // Stall when the raw trajectory flattens: best-so-far comparisons would
    // declare any non-monotone stretch (routine for Adam) a stall.
    trajectory.push_back(current);
    if (static_cast<int>(trajectory.size()) > kTolWindow) {
      double lo = trajectory.back(), hi = trajectory.back();
      for (std::size_t k = trajectory.size() - kTolWindow; k < trajectory.size();
           ++k) {
        lo = std::min(lo, trajectory[k]);
        hi = std::max(hi, trajectory[k]);
      }
      if (hi - lo < config.tol) break;
    }
  }

  if (report.history.empty()) report.history.push_back(best);
  report.final_cost = best;
  return {best_x, report};
}

double nll_cost(const RtbmParams& params, const Eigen::Ref<const Matrix>& data) {
  validate(params);
  check_data(data, params.n_v());
  return sum_nll(params, data);
}

double nll_cost(const MixtureModel& mixture, const Eigen::Ref<const Matrix>& data) {
  validate(mixture);
  check_data(data, mixture.n_v());
  return sum_nll(mixture, data);
}

std::pair<RtbmParams, TrainReport> train_ml(const RtbmParams& initial,
                                            const Eigen::Ref<const Matrix>& data,
                                            const TrainConfig& config) {
  TrainConfig cma = config;
  cma.optimizer = Optimizer::CmaEs;
  return run_flat(initial, data, cma);
}

std::pair<MixtureModel, TrainReport> train_ml(const MixtureModel& initial,
                                              const Eigen::Ref<const Matrix>& data,
                                              const TrainConfig& config) {
  TrainConfig cma = config;
  cma.optimizer = Optimizer::CmaEs;
  return run_flat(initial, data, cma);
}

std::pair<RtbmParams, TrainReport> train_gradient(const RtbmParams& initial,
                                                  const Eigen::Ref<const Matrix>& data,
                                                  const TrainConfig& config) {
  if (config.optimizer != Optimizer::Adam && config.optimizer != Optimizer::Sgd)
    fail(ErrorCode::InvalidArgument, "train_gradient requires Adam or Sgd");
  return run_flat(initial, data, config);
}

std::pair<MixtureModel, TrainReport> train_gradient(const MixtureModel& initial,
                                                    const Eigen::Ref<const Matrix>& data,
                                                    const TrainConfig& config) {
  if (config.optimizer != Optimizer::Adam && config.optimizer != Optimizer::Sgd)
    fail(ErrorCode::InvalidArgument, "train_gradient requires Adam or Sgd");
  return run_flat(initial, data, config);
}

}  // namespace rtbm
