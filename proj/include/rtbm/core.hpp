#pragma once

// The Riemann-Theta Boltzmann machine: a Gaussian visible sector coupled to
// integer-valued hidden units, with the hidden sums carried out in closed
// form by theta~. Phase I takes real couplings (W, B_h); phase II stores the
// same arrays but interprets them as iW, iB_h, which turns the hidden-sector
// theta arguments purely imaginary while the visible density stays real.

#include <Eigen/Dense>

#include "rtbm/error.hpp"
#include "rtbm/riemann_theta.hpp"
#include "rtbm/rng.hpp"
#include "rtbm/types.hpp"

namespace rtbm {

enum class Phase { I, II };

struct RtbmParams {
  Matrix t;    // visible self-coupling, symmetric PD (N_v x N_v)
  Matrix q;    // hidden self-coupling, symmetric PD (N_h x N_h)
  Matrix w;    // visible-hidden coupling (N_v x N_h); imaginary in phase II
  Vector b_v;  // visible bias (N_v)
  Vector b_h;  // hidden bias (N_h); imaginary in phase II
  Phase phase = Phase::I;

  Index n_v() const { return t.rows(); }
  Index n_h() const { return q.rows(); }
};

struct DensityValue {
  double log_p;
  double p;  // exp(log_p); may underflow to zero in the tails
};

// Gradient record. density_gradients fills the slots with d P / d param,
// log_density_gradients with d log P / d param; both carry the density.
// d_t_diag holds d/dT_ii (T must be diagonal for this branch), d_q the full
// symmetric matrix of paired derivatives d/dQ_ij == d/dQ_ji.
struct DensityGradients {
  double log_p;
  double p;
  Vector d_b_v;
  Vector d_b_h;
  Matrix d_w;
  Matrix d_q;
  Vector d_t_diag;
};

struct Moments {
  Vector mean;
  Matrix second_moment;  // <v v^T>, symmetric
};

// Throws on the first violated invariant: shape consistency, finiteness,
// symmetry and positive definiteness of T and Q, and in phase I positive
// definiteness of the Schur complement Q - W^T T^{-1} W.
void validate(const RtbmParams& params);
bool is_valid(const RtbmParams& params) noexcept;

// Hidden-sector coupling of the marginalized partition sum:
// Q - W^T T^{-1} W in phase I, Q + W^T T^{-1} W in phase II.
Matrix partition_coupling(const RtbmParams& params);

// Random initialization: A = X X^T with X uniform in [-scale, scale],
// T, Q, W cut out of the blocks of A (hidden block first), biases zero.
// The construction makes every positive-definiteness invariant hold; nearly
// singular draws are rejected and resampled up to a retry cap.
RtbmParams init_random(Index n_v, Index n_h, double scale, std::uint64_t seed);

// E(v,h) = 1/2 v^T T v + 1/2 h^T Q h + v^T W h + B_v^T v + B_h^T h.
// Real in phase I; in phase II the W and B_h terms land in the imaginary
// part. Exists chiefly for oracle summations.
Complex energy(const RtbmParams& params, const Eigen::Ref<const Vector>& v,
               const Eigen::Ref<const Eigen::VectorXi>& h);

// F(v) = 1/2 v^T T v + B_v^T v - log theta~(W^T v + B_h | Q), so that
// P(v) = exp(-F(v)) / Z.
double free_energy(const RtbmParams& params, const Eigen::Ref<const Vector>& v);

// log Z = (N_v/2) log 2pi - 1/2 log det T + 1/2 B_v^T T^{-1} B_v
//         + log theta~(B_h - W^T T^{-1} B_v | partition_coupling).
double log_z(const RtbmParams& params);

DensityValue density(const RtbmParams& params, const Eigen::Ref<const Vector>& v);

// P(h|v) = exp(-1/2 h^T Q h - z_a^T h) / theta~(z_a | Q), z_a = W^T v + B_h.
// Complex-valued in phase II; independent of T and B_v in both phases.
Complex conditional_density(const RtbmParams& params,
                            const Eigen::Ref<const Eigen::VectorXi>& h,
                            const Eigen::Ref<const Vector>& v);

// E[h_i | v] = -d/dz_i log theta~(z_a | Q). Phase II values are purely
// imaginary and are rotated onto the real axis (multiplied by i).
Vector expectation(const RtbmParams& params, const Eigen::Ref<const Vector>& v);

DensityGradients log_density_gradients(const RtbmParams& params,
                                       const Eigen::Ref<const Vector>& v);
DensityGradients density_gradients(const RtbmParams& params,
                                   const Eigen::Ref<const Vector>& v);

// First and second visible moments in closed form.
Moments moments(const RtbmParams& params);

// The fully continuous relaxation (hidden units integrated instead of
// summed): a multivariate normal with precision T - W Q^{-1} W^T and mean
// -(T - W Q^{-1} W^T)^{-1} (B_v - W Q^{-1} B_h).
DensityValue continuous_bm_density(const RtbmParams& params,
                                   const Eigen::Ref<const Vector>& v);

// Caches the theta factorizations and the partition constant for repeated
// evaluation under fixed parameters (training loops, quadrature sweeps).
class RtbmEvaluator {
 public:
  explicit RtbmEvaluator(const RtbmParams& params,
                         const theta::ThetaOptions& opts = {});

  const RtbmParams& params() const { return params_; }
  double log_z() const { return log_z_; }

  double free_energy(const Eigen::Ref<const Vector>& v) const;
  double log_density(const Eigen::Ref<const Vector>& v) const;
  DensityValue density(const Eigen::Ref<const Vector>& v) const;
  Vector expectation(const Eigen::Ref<const Vector>& v) const;
  DensityGradients log_density_gradients(const Eigen::Ref<const Vector>& v) const;
  Moments moments() const;

  // Mean negative log-likelihood over samples stored as columns.
  double mean_nll(const Eigen::Ref<const Matrix>& vs) const;
  // Mean of log_density_gradients over samples stored as columns. When
  // weights are given (one per sample), every per-sample term is scaled by
  // its weight before averaging; mixture training feeds posterior
  // responsibilities through this hook.
  DensityGradients mean_log_density_gradients(
      const Eigen::Ref<const Matrix>& vs,
      const Vector* weights = nullptr) const;

 private:
  ComplexVector hidden_argument(const Eigen::Ref<const Vector>& v) const;
  double log_theta_a(const Eigen::Ref<const Vector>& v) const;

  RtbmParams params_;
  theta::ThetaOptions opts_;
  theta::ThetaBasis basis_a_;   // over Q
  theta::ThetaBasis basis_b_;   // over the partition coupling
  Eigen::LLT<Matrix> t_llt_;
  Vector t_inv_b_v_;            // T^{-1} B_v
  Vector z_b_;                  // B_h - W^T T^{-1} B_v (imaginary part in phase II)
  double log_theta_b_;
  double log_z_;
};

}  // namespace rtbm
