#pragma once

// Convex mixtures of RTBM densities with softmax weighting over unbounded
// log-weights, plus the flat parameter-vector view used by the optimizers.

#include <vector>

#include "rtbm/core.hpp"

namespace rtbm {

struct MixtureModel {
  std::vector<RtbmParams> components;  // all sharing the same N_v
  Vector omegas;                       // unnormalized log-weights, one per component

  Index size() const { return static_cast<Index>(components.size()); }
  Index n_v() const { return components.empty() ? 0 : components.front().n_v(); }
};

void validate(const MixtureModel& model);

// Normalized log-weights: omega - logsumexp(omega).
Vector log_weights(const MixtureModel& model);

// M(v) = sum_i softmax(omega)_i P_i(v), assembled in the log domain.
DensityValue mixture_density(const MixtureModel& model,
                             const Eigen::Ref<const Vector>& v);

// Flat parameter views. Per RtbmParams the order is: lower triangle of T
// (rows, j <= i), lower triangle of Q, W row-major, B_v, B_h. A mixture
// appends its components in order followed by the omegas. Shapes and phases
// are carried by the template record receiving the values.
Index param_count(const RtbmParams& params);
Index param_count(const MixtureModel& model);
Vector flatten(const RtbmParams& params);
Vector flatten(const MixtureModel& model);
void unflatten_into(RtbmParams& params, const Eigen::Ref<const Vector>& x);
void unflatten_into(MixtureModel& model, const Eigen::Ref<const Vector>& x);

// Cached per-component evaluators for repeated density queries.
class MixtureEvaluator {
 public:
  explicit MixtureEvaluator(const MixtureModel& model,
                            const theta::ThetaOptions& opts = {});

  Index size() const { return static_cast<Index>(components_.size()); }
  double log_density(const Eigen::Ref<const Vector>& v) const;
  DensityValue density(const Eigen::Ref<const Vector>& v) const;
  double mean_nll(const Eigen::Ref<const Matrix>& vs) const;

  // Per-component posterior responsibilities softmax(omega)_i P_i(v) / M(v),
  // returned in the linear domain together with log M(v).
  Vector responsibilities(const Eigen::Ref<const Vector>& v, double* log_m = nullptr) const;

 private:
  std::vector<RtbmEvaluator> components_;
  Vector log_w_;
};

}  // namespace rtbm
