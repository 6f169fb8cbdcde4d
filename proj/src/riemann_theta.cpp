#include "rtbm/riemann_theta.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace rtbm::theta {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Derivative tuple split against the innermost enumeration axis (axis 0):
// the inner loop accumulates moments sum n_0^k exp(...), outer axes
// contribute constant monomial factors per inner run.
struct TupleInfo {
  int zeros = 0;
  std::array<int, 3> outer{{0, 0, 0}};
  int n_outer = 0;
};

}  // namespace

DerivIndex DerivIndex::normalized() const {
  DerivIndex d = *this;
  std::sort(d.idx.begin(), d.idx.begin() + d.order);
  return d;
}

bool DerivIndex::operator==(const DerivIndex& o) const {
  if (order != o.order) return false;
  DerivIndex a = normalized();
  DerivIndex b = o.normalized();
  for (int i = 0; i < order; ++i)
    if (a.idx[i] != b.idx[i]) return false;
  return true;
}

DerivativeSpec DerivativeSpec::gradient(Index g) {
  DerivativeSpec s;
  for (int i = 0; i < g; ++i) s.directions.push_back(DerivIndex::d1(i));
  return s;
}

DerivativeSpec DerivativeSpec::gradient_hessian(Index g) {
  DerivativeSpec s = gradient(g);
  for (int i = 0; i < g; ++i)
    for (int j = i; j < g; ++j) s.directions.push_back(DerivIndex::d2(i, j));
  return s;
}

DerivativeSpec DerivativeSpec::up_to_third(Index g) {
  DerivativeSpec s = gradient_hessian(g);
  for (int i = 0; i < g; ++i)
    for (int j = i; j < g; ++j)
      for (int k = j; k < g; ++k) s.directions.push_back(DerivIndex::d3(i, j, k));
  return s;
}

Complex ThetaResult::deriv(const DerivIndex& d) const {
  for (const auto& [key, val] : derivs)
    if (key == d) return val;
  fail(ErrorCode::InvalidArgument, "derivative was not requested");
}

Complex ThetaResult::ratio(const DerivIndex& d) const { return deriv(d) / value; }

ThetaBasis::ThetaBasis(const Matrix& omega, const ThetaOptions& opts)
    : omega_(omega), opts_(opts), g_(omega.rows()) {
  if (omega_.rows() != omega_.cols())
    fail(ErrorCode::DimensionMismatch, "omega must be square");
  if (g_ < 1 || g_ > kMaxGenus)
    fail(ErrorCode::UnsupportedDim,
         "genus must be in [1, " + std::to_string(kMaxGenus) + "]");
  if (!omega_.allFinite()) fail(ErrorCode::NonFiniteInput, "omega not finite");
  if (!is_symmetric(omega_, 1e-12))
    fail(ErrorCode::NonSymmetricOmega, "omega must be symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix> es(omega_, Eigen::EigenvaluesOnly);
  lambda_min_ = es.eigenvalues().minCoeff();
  lambda_max_ = es.eigenvalues().maxCoeff();
  if (!(lambda_min_ > 1e-12))
    fail(ErrorCode::NonPositiveDefiniteOmega,
         "omega min eigenvalue " + std::to_string(lambda_min_));
  Eigen::LLT<Matrix> llt(omega_);
  if (llt.info() != Eigen::Success)
    fail(ErrorCode::NonPositiveDefiniteOmega, "Cholesky failed");
  chol_u_ = llt.matrixU();
  omega_inv_ = llt.solve(Matrix::Identity(g_, g_));
  sqrt_det_ = chol_u_.diagonal().prod();
}

ThetaResult ThetaBasis::evaluate(const Vector& x, const Vector* y,
                                 const DerivativeSpec& spec) const {
  if (x.size() != g_ || (y && y->size() != g_))
    fail(ErrorCode::DimensionMismatch, "z length does not match genus");
  if (!x.allFinite() || (y && !y->allFinite()))
    fail(ErrorCode::NonFiniteInput, "theta argument not finite");

  int max_order = 0;
  std::vector<TupleInfo> info;
  info.reserve(spec.directions.size());
  for (const auto& d : spec.directions) {
    if (d.order < 1 || d.order > 3)
      fail(ErrorCode::InvalidArgument, "derivative order must be 1..3");
    TupleInfo ti;
    for (int i = 0; i < d.order; ++i) {
      const int ax = d.idx[i];
      if (ax < 0 || ax >= g_)
        fail(ErrorCode::InvalidArgument, "derivative index out of range");
      if (ax == 0)
        ++ti.zeros;
      else
        ti.outer[ti.n_outer++] = ax;
    }
    max_order = std::max(max_order, d.order);
    info.push_back(ti);
  }

  const Vector c = omega_inv_ * x;
  const double log_scale = 0.5 * x.dot(c);

  // Exponent of the (at worst) rounded-center term: a lower bound on the
  // magnitude of the leading term of the scaled sum.
  const Vector d0 = c.array().round().matrix() - c;
  const double q0 = 0.5 * d0.dot(omega_ * d0);

  // Radius in the metric q(n) = 1/2 (n-c)^T Omega (n-c) <= R^2.  Tail of the
  // scaled sum outside R is below
  //   g (2/rho)^g t^{a-1} e^{-t},  t = (R - rho/2)^2,
  // with rho a lower bound on the shortest lattice vector; monomial growth
  // from derivative factors is absorbed by raising a and the |c|-dependent
  // constant.
  const double rho = std::sqrt(lambda_min_ / 2.0);
  const double a_eff = 0.5 * static_cast<double>(g_) + (max_order > 0 ? 2.0 : 0.0);
  const double maxc = c.cwiseAbs().maxCoeff();
  const double log_k = max_order * std::log(2.0 + maxc);
  const double log_eps = std::log(opts_.tail_eps) - std::min(q0, 600.0) - log_k;
  const double big_l =
      std::log(static_cast<double>(g_)) + g_ * std::log(2.0 / rho) - log_eps;
  double t = std::max({big_l, 2.0 * (a_eff - 1.0), 10.0});
  for (int it = 0; it < 40; ++it)
    t = std::max({big_l + (a_eff - 1.0) * std::log(std::max(t, 2.0)),
                  2.0 * (a_eff - 1.0), 10.0});
  double radius = rho / 2.0 + std::sqrt(t) + 0.5;
  radius = std::max(radius, std::sqrt(q0) + 0.1);
  const double r2 = radius * radius;

  const double ball = std::pow(kPi, 0.5 * g_) / std::tgamma(0.5 * g_ + 1.0) *
                      std::pow(radius, static_cast<double>(g_));
  const double estimate = ball * std::pow(2.0, 0.5 * g_) / sqrt_det_;
  if (estimate * 1.5 + 32.0 > opts_.max_points)
    fail(ErrorCode::TruncationOverflow,
         "ellipsoid requires about " +
             std::to_string(static_cast<long long>(estimate)) +
             " lattice points (max_points " +
             std::to_string(static_cast<long long>(opts_.max_points)) + ")");

  const Matrix& u = chol_u_;
  const bool has_y = (y != nullptr);
  const int n_tup = static_cast<int>(info.size());
  double points = 0.0;

  double s0r = 0.0;
  Complex s0c{0.0, 0.0};
  std::vector<double> sdr(info.size(), 0.0);
  std::vector<Complex> sdc(info.size(), Complex{0.0, 0.0});
  std::array<double, kMaxGenus> nval{};

  auto inner = [&](double s, double t0, double phi) {
    const double rem = r2 - s;
    if (rem < 0.0) return;
    const double dd = std::sqrt(2.0 * rem);
    const double u00 = u(0, 0);
    const long long nlo =
        static_cast<long long>(std::ceil(c(0) + (-dd - t0) / u00 - 1e-9));
    const long long nhi =
        static_cast<long long>(std::floor(c(0) + (dd - t0) / u00 + 1e-9));
    if (nlo > nhi) return;
    points += static_cast<double>(nhi - nlo + 1);
    if (points > opts_.max_points)
      fail(ErrorCode::TruncationOverflow, "enumerated points exceed max_points");

    double uu = u00 * (static_cast<double>(nlo) - c(0)) + t0;
    if (has_y) {
      Complex mc[4] = {};
      const double y0 = (*y)(0);
      const Complex rot(std::cos(y0), std::sin(y0));
      Complex ph = std::polar(1.0, phi + static_cast<double>(nlo) * y0);
      for (long long nn = nlo; nn <= nhi; ++nn, uu += u00, ph *= rot) {
        const double w = std::exp(-(s + 0.5 * uu * uu));
        const Complex term = w * ph;
        const double nd = static_cast<double>(nn);
        mc[0] += term;
        if (max_order > 0) {
          mc[1] += nd * term;
          if (max_order > 1) {
            mc[2] += nd * nd * term;
            if (max_order > 2) mc[3] += nd * nd * nd * term;
          }
        }
      }
      s0c += mc[0];
      for (int i = 0; i < n_tup; ++i) {
        Complex f = mc[info[i].zeros];
        for (int j = 0; j < info[i].n_outer; ++j) f *= nval[info[i].outer[j]];
        sdc[i] += f;
      }
    } else {
      double m[4] = {0.0, 0.0, 0.0, 0.0};
      for (long long nn = nlo; nn <= nhi; ++nn, uu += u00) {
        const double w = std::exp(-(s + 0.5 * uu * uu));
        const double nd = static_cast<double>(nn);
        m[0] += w;
        if (max_order > 0) {
          m[1] += nd * w;
          if (max_order > 1) {
            m[2] += nd * nd * w;
            if (max_order > 2) m[3] += nd * nd * nd * w;
          }
        }
      }
      s0r += m[0];
      for (int i = 0; i < n_tup; ++i) {
        double f = m[info[i].zeros];
        for (int j = 0; j < info[i].n_outer; ++j) f *= nval[info[i].outer[j]];
        sdr[i] += f;
      }
    }
  };

  std::array<double, kMaxGenus> dval{};
  std::function<void(int, double, double)> descend = [&](int k, double s,
                                                         double phi) {
    double tk = 0.0;
    for (int j = k + 1; j < g_; ++j) tk += u(k, j) * dval[j];
    if (k == 0) {
      inner(s, tk, phi);
      return;
    }
    const double rem = r2 - s;
    if (rem < 0.0) return;
    const double dd = std::sqrt(2.0 * rem);
    const double ukk = u(k, k);
    const long long nlo =
        static_cast<long long>(std::ceil(c(k) + (-dd - tk) / ukk - 1e-9));
    const long long nhi =
        static_cast<long long>(std::floor(c(k) + (dd - tk) / ukk + 1e-9));
    for (long long nn = nlo; nn <= nhi; ++nn) {
      const double dk = static_cast<double>(nn) - c(k);
      const double uterm = ukk * dk + tk;
      const double s2 = s + 0.5 * uterm * uterm;
      if (s2 > r2) continue;
      nval[k] = static_cast<double>(nn);
      dval[k] = dk;
      descend(k - 1, s2, phi + (has_y ? static_cast<double>(nn) * (*y)(k) : 0.0));
    }
  };
  descend(static_cast<int>(g_) - 1, 0.0, 0.0);

  ThetaResult out;
  out.log_scale = log_scale;
  out.leading_mag = std::exp(-q0);
  if (has_y) {
    out.value = s0c;
    for (int i = 0; i < n_tup; ++i)
      out.derivs.emplace_back(spec.directions[i], sdc[i]);
  } else {
    out.value = Complex(s0r, 0.0);
    for (int i = 0; i < n_tup; ++i)
      out.derivs.emplace_back(spec.directions[i], Complex(sdr[i], 0.0));
  }
  return out;
}

ThetaResult ThetaBasis::eval_real(const Eigen::Ref<const Vector>& x,
                                  const DerivativeSpec& spec) const {
  return evaluate(x, nullptr, spec);
}

ThetaResult ThetaBasis::eval_imag(const Eigen::Ref<const Vector>& y,
                                  const DerivativeSpec& spec) const {
  const Vector x = Vector::Zero(g_);
  const Vector yy = y;
  return evaluate(x, &yy, spec);
}

ThetaResult ThetaBasis::eval(const Eigen::Ref<const ComplexVector>& z,
                             const DerivativeSpec& spec) const {
  const Vector x = z.real();
  const Vector y = z.imag();
  if (y.isZero(0.0)) return evaluate(x, nullptr, spec);
  return evaluate(x, &y, spec);
}

double ThetaBasis::log_real(const Eigen::Ref<const Vector>& x) const {
  const ThetaResult r = eval_real(x);
  return r.log_scale + std::log(r.value.real());
}

double ThetaBasis::log_imag(const Eigen::Ref<const Vector>& y) const {
  const ThetaResult r = eval_imag(y);
  if (!(r.value.real() > 1e-12 * r.leading_mag))
    fail(ErrorCode::ThetaZeroEncountered,
         "theta~ at imaginary argument is not positive");
  return r.log_scale + std::log(r.value.real());
}

ThetaResult theta_tilde(const Eigen::Ref<const ComplexVector>& z,
                        const Matrix& omega, const DerivativeSpec& spec,
                        const ThetaOptions& opts) {
  return ThetaBasis(omega, opts).eval(z, spec);
}

ThetaResult theta_tilde_naive(const Eigen::Ref<const ComplexVector>& z,
                              const Matrix& omega, const DerivativeSpec& spec,
                              int radius) {
  const Index g = omega.rows();
  if (omega.rows() != omega.cols())
    fail(ErrorCode::DimensionMismatch, "omega must be square");
  if (g < 1 || g > 4)
    fail(ErrorCode::UnsupportedDim, "naive sum limited to g <= 4");
  if (radius < 0 || radius > 50)
    fail(ErrorCode::InvalidArgument, "naive radius limited to [0, 50]");
  if (z.size() != g) fail(ErrorCode::DimensionMismatch, "z length != genus");
  if (!omega.allFinite() || !z.allFinite())
    fail(ErrorCode::NonFiniteInput, "non-finite input");
  if (!is_symmetric(omega, 1e-12))
    fail(ErrorCode::NonSymmetricOmega, "omega must be symmetric");
  if (!(min_eigenvalue(omega) > 1e-12))
    fail(ErrorCode::NonPositiveDefiniteOmega, "omega not positive definite");

  const Vector x = z.real();
  const Vector y = z.imag();

  Vector n = Vector::Zero(g);
  double emax = -std::numeric_limits<double>::infinity();
  std::function<void(int)> scan = [&](int k) {
    if (k < 0) {
      emax = std::max(emax, -0.5 * n.dot(omega * n) + n.dot(x));
      return;
    }
    for (int v = -radius; v <= radius; ++v) {
      n(k) = v;
      scan(k - 1);
    }
  };
  scan(static_cast<int>(g) - 1);

  Complex sum{0.0, 0.0};
  std::vector<Complex> dsum(spec.directions.size(), Complex{0.0, 0.0});
  std::function<void(int)> accumulate = [&](int k) {
    if (k < 0) {
      const double e = -0.5 * n.dot(omega * n) + n.dot(x) - emax;
      const Complex term = std::exp(e) * std::polar(1.0, n.dot(y));
      sum += term;
      for (size_t i = 0; i < spec.directions.size(); ++i) {
        Complex f = term;
        const DerivIndex& d = spec.directions[i];
        for (int j = 0; j < d.order; ++j) {
          const int ax = d.idx[j];
          if (ax < 0 || ax >= g)
            fail(ErrorCode::InvalidArgument, "derivative index out of range");
          f *= n(ax);
        }
        dsum[i] += f;
      }
      return;
    }
    for (int v = -radius; v <= radius; ++v) {
      n(k) = v;
      accumulate(k - 1);
    }
  };
  accumulate(static_cast<int>(g) - 1);

  ThetaResult out;
  out.log_scale = emax;
  out.value = sum;
  for (size_t i = 0; i < spec.directions.size(); ++i)
    out.derivs.emplace_back(spec.directions[i], dsum[i]);
  return out;
}

Complex log_theta_tilde(const Eigen::Ref<const ComplexVector>& z,
                        const Matrix& omega, const ThetaOptions& opts) {
  const ThetaResult r = ThetaBasis(omega, opts).eval(z);
  if (std::abs(r.value) <= 1e-12 * r.leading_mag)
    fail(ErrorCode::ThetaZeroEncountered,
         "theta~ cancels to zero at working precision");
  return Complex(r.log_scale, 0.0) + std::log(r.value);
}

}  // namespace rtbm::theta
