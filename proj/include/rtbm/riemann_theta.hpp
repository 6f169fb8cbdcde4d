#pragma once

// Numerical evaluation of the rescaled Riemann-Theta function
//
//   theta~(z | Omega) = sum_{n in Z^g} exp(-1/2 n^T Omega n + n^T z),
//
// for real symmetric positive definite Omega and complex z.  This is the
// variant of theta(z | Omega') = sum exp(2 pi i (1/2 n^T Omega' n + n^T z))
// obtained by z -> z / (2 pi i), Omega' -> i Omega / (2 pi); all lattice
// sums appearing in RTBM densities take the rescaled form.
//
// The evaluator completes the square around the real part of z,
//
//   -1/2 n^T Omega n + n^T x = -1/2 (n-c)^T Omega (n-c) + 1/2 c^T Omega c,
//   c = Omega^{-1} x,
//
// and sums lattice points inside the ellipsoid 1/2 (n-c)^T Omega (n-c) <= R^2
// enumerated through the Cholesky factor of Omega.  R is chosen so that the
// neglected Gaussian tail is below ThetaOptions::tail_eps relative to the
// leading term; the Gaussian peak value 1/2 c^T Omega c is returned
// separately as log_scale so that huge arguments never overflow.
//
// Derivatives are taken in the function's own first argument: a request
// {i,j,k} yields sum (n_i n_j n_k) exp(...), i.e. d^3 theta~ / dz_i dz_j dz_k,
// scaled by the same exp(-log_scale) factor as the value.

#include <array>
#include <optional>
#include <utility>
#include <vector>

#include "rtbm/error.hpp"
#include "rtbm/types.hpp"

namespace rtbm::theta {

// Practical genus bound: lattice enumeration cost is exponential in g.
inline constexpr Index kMaxGenus = 8;

// Multi-index of a partial derivative in z, up to third order.
struct DerivIndex {
  int order = 0;
  std::array<int, 3> idx{{0, 0, 0}};

  static DerivIndex d1(int i) { return {1, {{i, 0, 0}}}; }
  static DerivIndex d2(int i, int j) { return {2, {{i, j, 0}}}; }
  static DerivIndex d3(int i, int j, int k) { return {3, {{i, j, k}}}; }

  // Indices sorted ascending; derivative order is insensitive to ordering.
  DerivIndex normalized() const;
  bool operator==(const DerivIndex& o) const;
};

struct DerivativeSpec {
  std::vector<DerivIndex> directions;

  static DerivativeSpec none() { return {}; }
  // All first derivatives d/dz_i, i < g.
  static DerivativeSpec gradient(Index g);
  // All first plus all distinct second derivatives.
  static DerivativeSpec gradient_hessian(Index g);
  // First, second and third derivatives (distinct sorted tuples).
  static DerivativeSpec up_to_third(Index g);
};

struct ThetaOptions {
  // Truncation target: excluded tail below tail_eps times the leading term.
  double tail_eps = 1e-13;
  // Guard on enumerated lattice points; exceeding it raises
  // TruncationOverflow.
  double max_points = 4e7;
};

// theta~ = value * exp(log_scale); derivs carry the same scale factor.
struct ThetaResult {
  double log_scale = 0.0;
  Complex value{0.0, 0.0};
  // Lower bound on the magnitude of the largest scaled term; |value| far
  // below it means the sum cancelled to roundoff (a theta zero).
  double leading_mag = 1.0;
  std::vector<std::pair<DerivIndex, Complex>> derivs;

  // Scaled derivative for a requested multi-index.
  Complex deriv(const DerivIndex& d) const;
  // deriv / value; the scale factor cancels.
  Complex ratio(const DerivIndex& d) const;
};

// Reusable factorization of Omega for many evaluations at different z.
// Validates symmetry (1e-12 elementwise), positive definiteness
// (eigenvalues > 1e-12) and the genus bound on construction.
class ThetaBasis {
 public:
  ThetaBasis(const Matrix& omega, const ThetaOptions& opts = {});

  Index genus() const { return g_; }
  const Matrix& omega() const { return omega_; }

  // z purely real (RTBM phase I); result is real and positive.
  ThetaResult eval_real(const Eigen::Ref<const Vector>& x,
                        const DerivativeSpec& spec = {}) const;
  // z = i*y purely imaginary (RTBM phase II); value and even-order
  // derivatives are real, odd orders purely imaginary.
  ThetaResult eval_imag(const Eigen::Ref<const Vector>& y,
                        const DerivativeSpec& spec = {}) const;
  // General complex z.
  ThetaResult eval(const Eigen::Ref<const ComplexVector>& z,
                   const DerivativeSpec& spec = {}) const;

  // log theta~ with the scale folded back in.  Real-valued overload for
  // real z; the purely imaginary case raises ThetaZeroEncountered when the
  // (real) sum is not positive.
  double log_real(const Eigen::Ref<const Vector>& x) const;
  double log_imag(const Eigen::Ref<const Vector>& y) const;

 private:
  ThetaResult evaluate(const Vector& x, const Vector* y,
                       const DerivativeSpec& spec) const;

  Matrix omega_;
  Matrix chol_u_;     // upper-triangular U with Omega = U^T U
  Matrix omega_inv_;
  double lambda_min_ = 0.0;
  double lambda_max_ = 0.0;
  double sqrt_det_ = 0.0;
  ThetaOptions opts_;
  Index g_ = 0;
};

// One-shot evaluation; builds a ThetaBasis internally.
ThetaResult theta_tilde(const Eigen::Ref<const ComplexVector>& z,
                        const Matrix& omega, const DerivativeSpec& spec = {},
                        const ThetaOptions& opts = {});

// Reference implementation: direct sum over the box n in [-radius, radius]^g,
// stabilized only by factoring out the largest exponent.  Ground truth for
// tests; O((2 radius + 1)^g) and limited to g <= 4, radius <= 50.
ThetaResult theta_tilde_naive(const Eigen::Ref<const ComplexVector>& z,
                              const Matrix& omega, const DerivativeSpec& spec,
                              int radius);

// log theta~(z | Omega); principal branch for complex values.
Complex log_theta_tilde(const Eigen::Ref<const ComplexVector>& z,
                        const Matrix& omega, const ThetaOptions& opts = {});

}  // namespace rtbm::theta
