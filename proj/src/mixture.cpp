#include "rtbm/mixture.hpp"

#include <cmath>

namespace rtbm {

namespace {

double log_sum_exp(const Vector& a) {
  const double m = a.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((a.array() - m).exp().sum());
}

Index tri_count(Index n) { return n * (n + 1) / 2; }

}  // namespace

void validate(const MixtureModel& model) {
  if (model.components.empty())
    fail(ErrorCode::EmptyData, "mixture needs at least one component");
  if (model.omegas.size() != model.size())
    fail(ErrorCode::LengthMismatch, "one omega per component required");
  if (!model.omegas.allFinite())
    fail(ErrorCode::NonFiniteInput, "omegas contain non-finite entries");
  const Index nv = model.components.front().n_v();
  for (const RtbmParams& p : model.components) {
    if (p.n_v() != nv)
      fail(ErrorCode::MixedVisibleDims, "components disagree on N_v");
    validate(p);
  }
}

Vector log_weights(const MixtureModel& model) {
  if (model.omegas.size() == 0) fail(ErrorCode::EmptyData, "mixture has no omegas");
  return model.omegas.array() - log_sum_exp(model.omegas);
}

DensityValue mixture_density(const MixtureModel& model,
                             const Eigen::Ref<const Vector>& v) {
  return MixtureEvaluator(model).density(v);
}

Index param_count(const RtbmParams& params) {
  const Index nv = params.n_v();
  const Index nh = params.n_h();
  return tri_count(nv) + tri_count(nh) + nv * nh + nv + nh;
}

Index param_count(const MixtureModel& model) {
  Index total = model.size();
  for (const RtbmParams& p : model.components) total += param_count(p);
  return total;
}

Vector flatten(const RtbmParams& params) {
  Vector x(param_count(params));
  Index k = 0;
  for (Index i = 0; i < params.n_v(); ++i)
    for (Index j = 0; j <= i; ++j) x(k++) = params.t(i, j);
  for (Index i = 0; i < params.n_h(); ++i)
    for (Index j = 0; j <= i; ++j) x(k++) = params.q(i, j);
  for (Index i = 0; i < params.n_v(); ++i)
    for (Index j = 0; j < params.n_h(); ++j) x(k++) = params.w(i, j);
  x.segment(k, params.n_v()) = params.b_v;
  k += params.n_v();
  x.segment(k, params.n_h()) = params.b_h;
  return x;
}

Vector flatten(const MixtureModel& model) {
  Vector x(param_count(model));
  Index k = 0;
  for (const RtbmParams& p : model.components) {
    x.segment(k, param_count(p)) = flatten(p);
    k += param_count(p);
  }
  x.segment(k, model.size()) = model.omegas;
  return x;
}

void unflatten_into(RtbmParams& params, const Eigen::Ref<const Vector>& x) {
  if (x.size() != param_count(params))
    fail(ErrorCode::LengthMismatch, "parameter vector has wrong length");
  Index k = 0;
  for (Index i = 0; i < params.n_v(); ++i)
    for (Index j = 0; j <= i; ++j) {
      params.t(i, j) = x(k);
      params.t(j, i) = x(k);
      ++k;
    }
  for (Index i = 0; i < params.n_h(); ++i)
    for (Index j = 0; j <= i; ++j) {
      params.q(i, j) = x(k);
      params.q(j, i) = x(k);
      ++k;
    }
  for (Index i = 0; i < params.n_v(); ++i)
    for (Index j = 0; j < params.n_h(); ++j) params.w(i, j) = x(k++);
  params.b_v = x.segment(k, params.n_v());
  k += params.n_v();
  params.b_h = x.segment(k, params.n_h());
}

void unflatten_into(MixtureModel& model, const Eigen::Ref<const Vector>& x) {
  if (x.size() != param_count(model))
    fail(ErrorCode::LengthMismatch, "parameter vector has wrong length");
  Index k = 0;
  for (RtbmParams& p : model.components) {
    unflatten_into(p, x.segment(k, param_count(p)));
    k += param_count(p);
  }
  model.omegas = x.segment(k, model.size());
}

MixtureEvaluator::MixtureEvaluator(const MixtureModel& model,
                                   const theta::ThetaOptions& opts) {
  validate(model);
  log_w_ = rtbm::log_weights(model);
  components_.reserve(model.components.size());
  for (const RtbmParams& p : model.components) components_.emplace_back(p, opts);
}

double MixtureEvaluator::log_density(const Eigen::Ref<const Vector>& v) const {
  Vector terms(size());
  for (Index i = 0; i < size(); ++i)
    terms(i) = log_w_(i) + components_[static_cast<size_t>(i)].log_density(v);
  return log_sum_exp(terms);
}

DensityValue MixtureEvaluator::density(const Eigen::Ref<const Vector>& v) const {
  const double lp = log_density(v);
  return DensityValue{lp, std::exp(lp)};
}

double MixtureEvaluator::mean_nll(const Eigen::Ref<const Matrix>& vs) const {
  if (vs.cols() == 0) fail(ErrorCode::EmptyData, "no samples");
  double acc = 0.0;
  for (Index c = 0; c < vs.cols(); ++c) acc -= log_density(vs.col(c));
  return acc / static_cast<double>(vs.cols());
}

Vector MixtureEvaluator::responsibilities(const Eigen::Ref<const Vector>& v,
                                          double* log_m) const {
  Vector terms(size());
  for (Index i = 0; i < size(); ++i)
    terms(i) = log_w_(i) + components_[static_cast<size_t>(i)].log_density(v);
  const double total = log_sum_exp(terms);
  if (log_m != nullptr) *log_m = total;
  return (terms.array() - total).exp();
}

}  // namespace rtbm
