#include "rtbm/cma_es.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "rtbm/rng.hpp"

namespace rtbm {

CmaResult cma_es_minimize(const std::function<double(const Vector&)>& cost,
                          const std::function<bool(const Vector&)>& feasible,
                          const Vector& x0, const CmaOptions& opts) {
  const int n = static_cast<int>(x0.size());
  if (n < 1) fail(ErrorCode::InvalidArgument, "empty parameter vector");
  if (!(opts.sigma0 > 0.0) || !(opts.bound > 0.0) || !(opts.tol > 0.0))
    fail(ErrorCode::InvalidArgument, "sigma0, bound and tol must be positive");
  if (x0.cwiseAbs().maxCoeff() > opts.bound || !feasible(x0))
    fail(ErrorCode::InvalidArgument, "starting point is infeasible");

  const int lambda = opts.lambda > 0
                         ? opts.lambda
                         : 4 + static_cast<int>(3.0 * std::log(static_cast<double>(n)));
  const int mu = lambda / 2;
  if (mu < 1) fail(ErrorCode::InvalidArgument, "population too small");

  Vector weights(mu);
  for (int i = 0; i < mu; ++i)
    weights(i) = std::log(mu + 0.5) - std::log(static_cast<double>(i + 1));
  weights /= weights.sum();
  const double mu_eff = 1.0 / weights.squaredNorm();

  const double c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
  const double d_sigma =
      1.0 + 2.0 * std::max(0.0, std::sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0) + c_sigma;
  const double c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
  const double c_1 = 2.0 / ((n + 1.3) * (n + 1.3) + mu_eff);
  const double c_mu = std::min(1.0 - c_1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) /
                                              ((n + 2.0) * (n + 2.0) + mu_eff));
  const double chi_n =
      std::sqrt(static_cast<double>(n)) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

  Rng rng(opts.seed);
  Vector mean = x0;
  double sigma = opts.sigma0;
  Matrix c_mat = Matrix::Identity(n, n);
  Vector p_sigma = Vector::Zero(n);
  Vector p_c = Vector::Zero(n);

  CmaResult result;
  result.best_x = x0;
  result.best_cost = cost(x0);
  if (std::isnan(result.best_cost)) fail(ErrorCode::Diverged, "cost is NaN");
  result.rejected_candidates = 0;
  result.iterations = 0;

  std::vector<Vector> xs(lambda), ys(lambda);
  std::vector<double> costs(lambda);
  std::vector<int> order(lambda);

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    // Refresh the eigendecomposition of C; n stays small in this library, so
    // doing it every generation is cheap and keeps the code simple.
    Eigen::SelfAdjointEigenSolver<Matrix> es(c_mat);
    Vector d = es.eigenvalues().cwiseMax(1e-20).cwiseSqrt();
    const Matrix& b = es.eigenvectors();

    for (int k = 0; k < lambda; ++k) {
      bool accepted = false;
      for (int attempt = 0; attempt < opts.resample_cap; ++attempt) {
        Vector z(n);
        for (int i = 0; i < n; ++i) z(i) = rng.normal();
        const Vector y = b * d.cwiseProduct(z).matrix();
        const Vector x = mean + sigma * y;
        if (x.cwiseAbs().maxCoeff() > opts.bound || !feasible(x)) {
          ++result.rejected_candidates;
          continue;
        }
        const double f = cost(x);
        if (std::isnan(f)) fail(ErrorCode::Diverged, "cost is NaN");
        xs[k] = x;
        ys[k] = y;
        costs[k] = f;
        accepted = true;
        break;
      }
      if (!accepted)
        fail(ErrorCode::NoFeasibleCandidate,
             "could not draw a feasible candidate within the resample cap");
    }

    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a2, int b2) { return costs[a2] < costs[b2]; });

    if (costs[order[0]] < result.best_cost) {
      result.best_cost = costs[order[0]];
      result.best_x = xs[order[0]];
    }
    result.history.push_back(result.best_cost);
    result.iterations = iter + 1;

    Vector y_w = Vector::Zero(n);
    Vector new_mean = Vector::Zero(n);
    for (int i = 0; i < mu; ++i) {
      y_w += weights(i) * ys[order[i]];
      new_mean += weights(i) * xs[order[i]];
    }
    mean = new_mean;

    const Vector c_inv_half_yw = b * (b.transpose() * y_w).cwiseQuotient(d).matrix();
    p_sigma = (1.0 - c_sigma) * p_sigma +
              std::sqrt(c_sigma * (2.0 - c_sigma) * mu_eff) * c_inv_half_yw;
    const double expected_decay =
        std::sqrt(1.0 - std::pow(1.0 - c_sigma, 2.0 * (iter + 1)));
    const bool h_sigma =
        p_sigma.norm() / expected_decay < (1.4 + 2.0 / (n + 1.0)) * chi_n;
    p_c = (1.0 - c_c) * p_c;
    if (h_sigma) p_c += std::sqrt(c_c * (2.0 - c_c) * mu_eff) * y_w;

    Matrix rank_mu = Matrix::Zero(n, n);
    for (int i = 0; i < mu; ++i)
      rank_mu += weights(i) * ys[order[i]] * ys[order[i]].transpose();
    const double h_corr = h_sigma ? 0.0 : c_c * (2.0 - c_c);
    c_mat = (1.0 - c_1 - c_mu) * c_mat +
            c_1 * (p_c * p_c.transpose() + h_corr * c_mat) + c_mu * rank_mu;
    c_mat = ((c_mat + c_mat.transpose()) / 2.0).eval();

    sigma *= std::exp((c_sigma / d_sigma) * (p_sigma.norm() / chi_n - 1.0));
    sigma = std::min(sigma, 1e6);

    // Stall only when the best value flattened over the window AND the
    // current generation's costs have collapsed to the same level; a spread
    // population is still exploring even when the best has not moved.
    const int w = opts.tol_window;
    if (static_cast<int>(result.history.size()) > w) {
      const double prev = result.history[result.history.size() - 1 - w];
      const double spread =
          costs[order[lambda - 1]] == std::numeric_limits<double>::infinity()
              ? std::numeric_limits<double>::infinity()
              : costs[order[lambda - 1]] - costs[order[0]];
      if (std::abs(prev - result.best_cost) < opts.tol && spread < opts.tol) break;
    }
  }

  if (result.history.empty()) result.history.push_back(result.best_cost);
  return result;
}

}  // namespace rtbm
