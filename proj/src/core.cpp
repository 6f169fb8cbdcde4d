#include "rtbm/core.hpp"

#include <cmath>

namespace rtbm {

namespace {

constexpr double kLogTwoPi = 1.83787706640934548356;
constexpr double kMinEig = 1e-12;

void check_shapes(const RtbmParams& p) {
  const Index nv = p.t.rows();
  const Index nh = p.q.rows();
  if (nv < 1 || p.t.cols() != nv) fail(ErrorCode::ShapeMismatch, "t must be square and non-empty");
  if (nh < 1 || p.q.cols() != nh) fail(ErrorCode::ShapeMismatch, "q must be square and non-empty");
  if (p.w.rows() != nv || p.w.cols() != nh)
    fail(ErrorCode::ShapeMismatch, "w must be n_v x n_h");
  if (p.b_v.size() != nv) fail(ErrorCode::ShapeMismatch, "b_v must have length n_v");
  if (p.b_h.size() != nh) fail(ErrorCode::ShapeMismatch, "b_h must have length n_h");
}

void check_finite(const RtbmParams& p) {
  if (!p.t.allFinite() || !p.q.allFinite() || !p.w.allFinite() ||
      !p.b_v.allFinite() || !p.b_h.allFinite())
    fail(ErrorCode::NonFiniteInput, "parameters contain non-finite entries");
}

// In phase II the stored arrays stand for iW, iB_h; the sign of the
// W^T T^{-1} W correction in the partition coupling flips accordingly.
double phase_sign(Phase phase) { return phase == Phase::I ? 1.0 : -1.0; }

Complex phase_unit(Phase phase) {
  return phase == Phase::I ? Complex{1.0, 0.0} : Complex{0.0, 1.0};
}

theta::ThetaResult eval_phased(const theta::ThetaBasis& basis, Phase phase,
                               const Vector& arg, const theta::DerivativeSpec& spec) {
  return phase == Phase::I ? basis.eval_real(arg, spec) : basis.eval_imag(arg, spec);
}

const Matrix& checked_q(const RtbmParams& p) {
  validate(p);
  return p.q;
}

ComplexVector first_ratios(const theta::ThetaResult& r, Index g) {
  ComplexVector out(g);
  for (Index i = 0; i < g; ++i)
    out(i) = r.ratio(theta::DerivIndex::d1(static_cast<int>(i)));
  return out;
}

ComplexMatrix second_ratios(const theta::ThetaResult& r, Index g) {
  ComplexMatrix out(g, g);
  for (Index i = 0; i < g; ++i)
    for (Index j = i; j < g; ++j) {
      out(i, j) = r.ratio(theta::DerivIndex::d2(static_cast<int>(i), static_cast<int>(j)));
      out(j, i) = out(i, j);
    }
  return out;
}

}  // namespace

void validate(const RtbmParams& params) {
  check_shapes(params);
  check_finite(params);
  if (!is_symmetric(params.t)) fail(ErrorCode::InvalidArgument, "t must be symmetric");
  if (!is_symmetric(params.q)) fail(ErrorCode::InvalidArgument, "q must be symmetric");
  if (!is_positive_definite(params.t, kMinEig))
    fail(ErrorCode::NonPositiveDefiniteOmega, "t is not positive definite");
  if (!is_positive_definite(params.q, kMinEig))
    fail(ErrorCode::NonPositiveDefiniteOmega, "q is not positive definite");
  if (params.phase == Phase::I) {
    const Matrix coupling = partition_coupling(params);
    if (!is_positive_definite(coupling, kMinEig))
      fail(ErrorCode::NonPositiveDefiniteSchur,
           "q - w^T t^{-1} w is not positive definite");
  }
}

bool is_valid(const RtbmParams& params) noexcept {
  try {
    validate(params);
    return true;
  } catch (...) {
    return false;
  }
}

Matrix partition_coupling(const RtbmParams& params) {
  check_shapes(params);
  const Matrix ti_w = params.t.llt().solve(params.w);
  Matrix coupling = params.q - phase_sign(params.phase) * params.w.transpose() * ti_w;
  // Symmetrize away solve roundoff; the coupling is symmetric by construction.
  coupling = ((coupling + coupling.transpose()) / 2.0).eval();
  return coupling;
}

RtbmParams init_random(Index n_v, Index n_h, double scale, std::uint64_t seed) {
  if (n_v < 1 || n_h < 1) fail(ErrorCode::InvalidArgument, "n_v and n_h must be at least 1");
  if (!(scale > 0.0)) fail(ErrorCode::InvalidArgument, "scale must be positive");
  const Index n = n_v + n_h;
  Rng rng(seed);
  for (int attempt = 0; attempt < 64; ++attempt) {
    Matrix x(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) x(i, j) = rng.uniform(-scale, scale);
    const Matrix a = x * x.transpose();
    Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
    const double mn = es.eigenvalues().minCoeff();
    const double mx = es.eigenvalues().maxCoeff();
    // The Schur complement of a PD matrix inherits its smallest eigenvalue,
    // so this bound keeps every derived coupling clear of the PD threshold.
    if (!(mn > 1e-11 && mn > 1e-8 * mx)) continue;
    RtbmParams p;
    p.q = a.topLeftCorner(n_h, n_h);
    p.t = a.bottomRightCorner(n_v, n_v);
    p.w = a.bottomLeftCorner(n_v, n_h);
    p.b_v = Vector::Zero(n_v);
    p.b_h = Vector::Zero(n_h);
    p.phase = Phase::I;
    return p;
  }
  fail(ErrorCode::DegenerateA, "could not draw a well-conditioned coupling matrix");
}

Complex energy(const RtbmParams& params, const Eigen::Ref<const Vector>& v,
               const Eigen::Ref<const Eigen::VectorXi>& h) {
  check_shapes(params);
  if (v.size() != params.n_v()) fail(ErrorCode::DimensionMismatch, "v has wrong length");
  if (h.size() != params.n_h()) fail(ErrorCode::DimensionMismatch, "h has wrong length");
  const Vector hd = h.cast<double>();
  const double real_part = 0.5 * v.dot(params.t * v) + 0.5 * hd.dot(params.q * hd) +
                           params.b_v.dot(v);
  const double coupled = v.dot(params.w * hd) + params.b_h.dot(hd);
  return params.phase == Phase::I ? Complex{real_part + coupled, 0.0}
                                  : Complex{real_part, coupled};
}

double free_energy(const RtbmParams& params, const Eigen::Ref<const Vector>& v) {
  check_shapes(params);
  if (v.size() != params.n_v()) fail(ErrorCode::DimensionMismatch, "v has wrong length");
  const theta::ThetaBasis basis(params.q);
  const Vector z_a = params.w.transpose() * v + params.b_h;
  const double log_theta_a =
      params.phase == Phase::I ? basis.log_real(z_a) : basis.log_imag(z_a);
  return 0.5 * v.dot(params.t * v) + params.b_v.dot(v) - log_theta_a;
}

double log_z(const RtbmParams& params) {
  return RtbmEvaluator(params).log_z();
}

DensityValue density(const RtbmParams& params, const Eigen::Ref<const Vector>& v) {
  return RtbmEvaluator(params).density(v);
}

Complex conditional_density(const RtbmParams& params,
                            const Eigen::Ref<const Eigen::VectorXi>& h,
                            const Eigen::Ref<const Vector>& v) {
  check_shapes(params);
  if (v.size() != params.n_v()) fail(ErrorCode::DimensionMismatch, "v has wrong length");
  if (h.size() != params.n_h()) fail(ErrorCode::DimensionMismatch, "h has wrong length");
  // Depends on Q, W, B_h only; T and B_v cancel between numerator and
  // normalization, so they are never touched here.
  const theta::ThetaBasis basis(params.q);
  const Vector z_a = params.w.transpose() * v + params.b_h;
  const Vector hd = h.cast<double>();
  const double quad = -0.5 * hd.dot(params.q * hd);
  const double lin = -z_a.dot(hd);
  if (params.phase == Phase::I)
    return std::exp(Complex{quad + lin - basis.log_real(z_a), 0.0});
  return std::exp(Complex{quad, lin} - Complex{basis.log_imag(z_a), 0.0});
}

Vector expectation(const RtbmParams& params, const Eigen::Ref<const Vector>& v) {
  check_shapes(params);
  if (v.size() != params.n_v()) fail(ErrorCode::DimensionMismatch, "v has wrong length");
  const Index nh = params.n_h();
  const theta::ThetaBasis basis(params.q);
  const Vector z_a = params.w.transpose() * v + params.b_h;
  const theta::ThetaResult r = eval_phased(
      basis, params.phase, z_a, theta::DerivativeSpec::gradient(static_cast<int>(nh)));
  Vector e(nh);
  for (Index i = 0; i < nh; ++i) {
    const Complex ratio = r.ratio(theta::DerivIndex::d1(static_cast<int>(i)));
    // Phase I: -d log theta~ is real. Phase II: it is purely imaginary and
    // gets rotated onto the real axis, leaving Im(d log theta~).
    e(i) = params.phase == Phase::I ? -ratio.real() : ratio.imag();
  }
  return e;
}

DensityGradients log_density_gradients(const RtbmParams& params,
                                       const Eigen::Ref<const Vector>& v) {
  return RtbmEvaluator(params).log_density_gradients(v);
}

DensityGradients density_gradients(const RtbmParams& params,
                                   const Eigen::Ref<const Vector>& v) {
  DensityGradients g = log_density_gradients(params, v);
  g.d_b_v *= g.p;
  g.d_b_h *= g.p;
  g.d_w *= g.p;
  g.d_q *= g.p;
  g.d_t_diag *= g.p;
  return g;
}

Moments moments(const RtbmParams& params) {
  return RtbmEvaluator(params).moments();
}

DensityValue continuous_bm_density(const RtbmParams& params,
                                   const Eigen::Ref<const Vector>& v) {
  check_shapes(params);
  check_finite(params);
  if (v.size() != params.n_v()) fail(ErrorCode::DimensionMismatch, "v has wrong length");
  if (!is_positive_definite(params.q, kMinEig))
    fail(ErrorCode::NonPositiveDefiniteOmega, "q is not positive definite");
  const double s = phase_sign(params.phase);
  const Matrix qi_wt = params.q.llt().solve(params.w.transpose());
  Matrix precision = params.t - s * params.w * qi_wt;
  precision = ((precision + precision.transpose()) / 2.0).eval();
  if (!is_positive_definite(precision, kMinEig))
    fail(ErrorCode::NonPositiveDefiniteSchur,
         "t - w q^{-1} w^T is not positive definite");
  const Vector shift = params.b_v - s * params.w * params.q.llt().solve(params.b_h);
  const Eigen::LLT<Matrix> llt(precision);
  const Vector mean = -llt.solve(shift);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const Vector d = v - mean;
  DensityValue out;
  out.log_p = -0.5 * d.dot(precision * d) + 0.5 * log_det -
              0.5 * static_cast<double>(params.n_v()) * kLogTwoPi;
  out.p = std::exp(out.log_p);
  return out;
}

RtbmEvaluator::RtbmEvaluator(const RtbmParams& params, const theta::ThetaOptions& opts)
    : params_(params),
      opts_(opts),
      basis_a_(checked_q(params), opts),
      basis_b_(partition_coupling(params), opts),
      t_llt_(params.t) {
  t_inv_b_v_ = t_llt_.solve(params_.b_v);
  z_b_ = params_.b_h - params_.w.transpose() * t_inv_b_v_;
  log_theta_b_ = params_.phase == Phase::I ? basis_b_.log_real(z_b_)
                                           : basis_b_.log_imag(z_b_);
  const double log_det_t =
      2.0 * t_llt_.matrixL().toDenseMatrix().diagonal().array().log().sum();
  log_z_ = 0.5 * static_cast<double>(params_.n_v()) * kLogTwoPi - 0.5 * log_det_t +
           0.5 * params_.b_v.dot(t_inv_b_v_) + log_theta_b_;
}

double RtbmEvaluator::log_theta_a(const Eigen::Ref<const Vector>& v) const {
  const Vector z_a = params_.w.transpose() * v + params_.b_h;
  return params_.phase == Phase::I ? basis_a_.log_real(z_a) : basis_a_.log_imag(z_a);
}

double RtbmEvaluator::free_energy(const Eigen::Ref<const Vector>& v) const {
  if (v.size() != params_.n_v()) fail(ErrorCode::DimensionMismatch, "v has wrong length");
  return 0.5 * v.dot(params_.t * v) + params_.b_v.dot(v) - log_theta_a(v);
}

double RtbmEvaluator::log_density(const Eigen::Ref<const Vector>& v) const {
  if (!v.allFinite()) fail(ErrorCode::NonFiniteInput, "v contains non-finite entries");
  return -free_energy(v) - log_z_;
}

DensityValue RtbmEvaluator::density(const Eigen::Ref<const Vector>& v) const {
  const double lp = log_density(v);
  return DensityValue{lp, std::exp(lp)};
}

Vector RtbmEvaluator::expectation(const Eigen::Ref<const Vector>& v) const {
  return rtbm::expectation(params_, v);
}

DensityGradients RtbmEvaluator::log_density_gradients(const Eigen::Ref<const Vector>& v) const {
  Matrix vs(v.size(), 1);
  vs.col(0) = v;
  return mean_log_density_gradients(vs);
}

double RtbmEvaluator::mean_nll(const Eigen::Ref<const Matrix>& vs) const {
  if (vs.rows() != params_.n_v()) fail(ErrorCode::DimensionMismatch, "samples have wrong length");
  if (vs.cols() == 0) fail(ErrorCode::EmptyData, "no samples");
  double acc = 0.0;
  for (Index c = 0; c < vs.cols(); ++c) acc -= log_density(vs.col(c));
  return acc / static_cast<double>(vs.cols());
}

DensityGradients RtbmEvaluator::mean_log_density_gradients(
    const Eigen::Ref<const Matrix>& vs, const Vector* weights) const {
  const Index nv = params_.n_v();
  const Index nh = params_.n_h();
  if (vs.rows() != nv) fail(ErrorCode::DimensionMismatch, "samples have wrong length");
  if (vs.cols() == 0) fail(ErrorCode::EmptyData, "no samples");
  if (weights != nullptr && weights->size() != vs.cols())
    fail(ErrorCode::LengthMismatch, "one weight per sample required");
  if ((params_.t - Matrix(params_.t.diagonal().asDiagonal())).cwiseAbs().maxCoeff() > 1e-12)
    fail(ErrorCode::NonDiagonalT, "T gradients require a diagonal T");

  const Complex unit = phase_unit(params_.phase);
  const Vector t_diag = params_.t.diagonal();
  const Vector t_inv = t_diag.cwiseInverse();
  const ComplexMatrix w_c = unit * params_.w.cast<Complex>();

  const theta::DerivativeSpec spec =
      theta::DerivativeSpec::gradient_hessian(static_cast<int>(nh));
  const theta::ThetaResult rb = eval_phased(basis_b_, params_.phase, z_b_, spec);
  const ComplexVector rb1 = first_ratios(rb, nh);
  const ComplexMatrix rb2 = second_ratios(rb, nh);

  const ComplexVector w_rb1 = w_c * rb1;
  const ComplexMatrix w_rb2 = w_c * rb2;

  // Sample-independent pieces of the gradient of log P.
  const ComplexVector g_bv_const =
      -t_inv_b_v_.cast<Complex>() + t_inv.cast<Complex>().cwiseProduct(w_rb1);
  ComplexVector g_t_const(nv);
  for (Index i = 0; i < nv; ++i) {
    const double ti2 = t_inv(i) * t_inv(i);
    const Complex quad = (w_rb2.row(i) * w_c.row(i).transpose())(0);
    g_t_const(i) = 0.5 * t_inv(i) +
                   0.5 * params_.b_v(i) * params_.b_v(i) * ti2 -
                   params_.b_v(i) * ti2 * w_rb1(i) + 0.5 * ti2 * quad;
  }
  const ComplexMatrix g_w_const =
      t_inv_b_v_.cast<Complex>() * rb1.transpose() -
      t_inv.cast<Complex>().asDiagonal() * w_rb2;

  const Index n = vs.cols();
  ComplexVector acc_bh = ComplexVector::Zero(nh);
  ComplexVector acc_bv = ComplexVector::Zero(nv);
  ComplexMatrix acc_w = ComplexMatrix::Zero(nv, nh);
  ComplexMatrix acc_q = ComplexMatrix::Zero(nh, nh);
  ComplexVector acc_t = ComplexVector::Zero(nv);
  double acc_log_p = 0.0;

  for (Index c = 0; c < n; ++c) {
    const Vector v = vs.col(c);
    if (!v.allFinite()) fail(ErrorCode::NonFiniteInput, "sample contains non-finite entries");
    const double wt = weights != nullptr ? (*weights)(c) : 1.0;
    const Vector z_a = params_.w.transpose() * v + params_.b_h;
    const theta::ThetaResult ra = eval_phased(basis_a_, params_.phase, z_a, spec);
    if (!(ra.value.real() > 1e-12 * ra.leading_mag))
      fail(ErrorCode::ThetaZeroEncountered, "theta~ vanishes at a sample");
    const ComplexVector ra1 = first_ratios(ra, nh);
    const ComplexMatrix ra2 = second_ratios(ra, nh);

    acc_log_p += wt * (-0.5 * v.dot(params_.t * v) - params_.b_v.dot(v) +
                       ra.log_scale + std::log(ra.value.real()) - log_z_);
    acc_bh += wt * (ra1 - rb1);
    acc_bv += wt * (g_bv_const - v.cast<Complex>());
    acc_w += wt * (v.cast<Complex>() * ra1.transpose() + g_w_const);
    acc_q += wt * (rb2 - ra2);
    acc_t += wt * g_t_const;
    for (Index i = 0; i < nv; ++i) acc_t(i) -= wt * 0.5 * v(i) * v(i);
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  DensityGradients out;
  out.log_p = acc_log_p * inv_n;
  out.p = std::exp(out.log_p);
  // Phase II slots stored for the real arrays pick up the chain-rule factor
  // i (W = i W~, B_h = i B_h~); the remaining slots are real already.
  out.d_b_h = (unit * acc_bh * inv_n).real();
  out.d_b_v = (acc_bv * inv_n).real();
  out.d_w = (unit * acc_w * inv_n).real();
  out.d_t_diag = (acc_t * inv_n).real();
  // acc_q holds Rb2 - Ra2 = -(Ra2 - Rb2); the paired-entry convention halves
  // the diagonal (heat-equation factor (1 + delta_ij)^{-1}).
  out.d_q.resize(nh, nh);
  for (Index i = 0; i < nh; ++i)
    for (Index j = 0; j < nh; ++j)
      out.d_q(i, j) = (acc_q(i, j) * inv_n).real() * (i == j ? 0.5 : 1.0);
  return out;
}

Moments RtbmEvaluator::moments() const {
  const Index nv = params_.n_v();
  const Index nh = params_.n_h();
  const theta::ThetaResult rb = eval_phased(
      basis_b_, params_.phase, z_b_,
      theta::DerivativeSpec::gradient_hessian(static_cast<int>(nh)));
  const ComplexVector d_b = first_ratios(rb, nh);
  const ComplexMatrix r2 = second_ratios(rb, nh);
  const ComplexMatrix cov_h = r2 - d_b * d_b.transpose();

  const Matrix ti_w = t_llt_.solve(params_.w);
  const Complex unit = phase_unit(params_.phase);
  Moments out;
  out.mean = -t_inv_b_v_ + (unit * (ti_w.cast<Complex>() * d_b)).real();
  const Matrix t_inv = t_llt_.solve(Matrix::Identity(nv, nv));
  const Matrix cov_h_eff = ((unit * unit) * cov_h).real();
  const Matrix cov_v = t_inv + ti_w * cov_h_eff * ti_w.transpose();
  out.second_moment = out.mean * out.mean.transpose() + cov_v;
  out.second_moment = ((out.second_moment + out.second_moment.transpose()) / 2.0).eval();
  return out;
}

}  // namespace rtbm
