#include <doctest.h>

#include <cmath>

#include "rtbm/riemann_theta.hpp"
#include "support/test_support.hpp"

using namespace rtbm;
using namespace rtbm::theta;
using testsup::theta_rel_diff;
using testsup::theta_deriv_rel_diff;

namespace {

constexpr double kTwoPi = 6.28318530717958647692;

ComplexVector cvec1(Complex a) {
  ComplexVector z(1);
  z(0) = a;
  return z;
}

Matrix mat1(double a) {
  Matrix m(1, 1);
  m(0, 0) = a;
  return m;
}

Complex full_value(const ThetaResult& r) {
  return r.value * std::exp(r.log_scale);
}

}  // namespace

TEST_CASE("theta~(0 | 2pi) reproduces the Jacobi theta3 value") {
  // Independently computed by the direct box sum; the closed form is
  // pi^{1/4} / Gamma(3/4) = 1.086434811213308...
  const ThetaResult oracle =
      theta_tilde_naive(cvec1({0.0, 0.0}), mat1(kTwoPi), {}, 10);
  CHECK(std::abs(full_value(oracle).real() - 1.086434811213308) < 1e-12);

  const ThetaResult got = theta_tilde(cvec1({0.0, 0.0}), mat1(kTwoPi));
  CHECK(theta_rel_diff(got, oracle) < 1e-12);
  CHECK(got.value.imag() == 0.0);
}

TEST_CASE("naive sum with radius zero is exactly one") {
  const ThetaResult r = theta_tilde_naive(cvec1({0.7, 0.0}), mat1(3.0), {}, 0);
  CHECK(full_value(r) == Complex{1.0, 0.0});
}

TEST_CASE("naive g=2 diagonal equals the square of the g=1 value") {
  Matrix omega = Matrix::Zero(2, 2);
  omega(0, 0) = omega(1, 1) = kTwoPi;
  ComplexVector z = ComplexVector::Zero(2);
  const Complex v2 = full_value(theta_tilde_naive(z, omega, {}, 10));
  const Complex v1 = full_value(theta_tilde_naive(cvec1({0.0, 0.0}), mat1(kTwoPi), {}, 10));
  CHECK(std::abs(v2 - v1 * v1) < 1e-12);
}

TEST_CASE("shifting z by 2 pi i n leaves theta~ unchanged") {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix omega = testsup::random_spd(rng, 2);
    ComplexVector z(2), zs(2);
    for (int i = 0; i < 2; ++i) {
      z(i) = Complex(rng.uniform(-1.5, 1.5), rng.uniform(-3.0, 3.0));
      zs(i) = z(i) + Complex(0.0, kTwoPi * std::round(rng.uniform(-3.0, 3.0)));
    }
    const ThetaResult a = theta_tilde(z, omega);
    const ThetaResult b = theta_tilde(zs, omega);
    CHECK(theta_rel_diff(b, a) < 1e-10);
  }
}

TEST_CASE("theta~ is even in z") {
  Rng rng(12);
  for (int rep = 0; rep < 20; ++rep) {
    const Matrix omega = testsup::random_spd(rng, 2);
    ComplexVector z(2);
    for (int i = 0; i < 2; ++i)
      z(i) = Complex(rng.uniform(-2.0, 2.0), rng.uniform(-3.0, 3.0));
    const ThetaResult a = theta_tilde(z, omega);
    const ThetaResult b = theta_tilde((-z).eval(), omega);
    CHECK(theta_rel_diff(b, a) < 1e-10);
  }
}

TEST_CASE("diagonal omega factorizes into one-dimensional values") {
  Rng rng(13);
  for (int rep = 0; rep < 10; ++rep) {
    Matrix omega = Matrix::Zero(3, 3);
    ComplexVector z(3);
    Complex prod{1.0, 0.0};
    double prod_scale = 0.0;
    for (int i = 0; i < 3; ++i) {
      omega(i, i) = rng.uniform(0.8, 5.0);
      z(i) = Complex(rng.uniform(-2.0, 2.0), rng.uniform(-3.0, 3.0));
      const ThetaResult one =
          theta_tilde(cvec1(z(i)), mat1(omega(i, i)));
      prod *= one.value;
      prod_scale += one.log_scale;
    }
    const ThetaResult joint = theta_tilde(z, omega);
    const Complex lhs = joint.value * std::exp(joint.log_scale - prod_scale);
    CHECK(std::abs(lhs - prod) / std::abs(prod) < 1e-10);
  }
}

TEST_CASE("log theta~ quasi-periodicity under lattice shifts of z") {
  // log theta~(z - Omega n) = log theta~(z) - n.z + n.Omega.n / 2
  const Matrix omega = mat1(2.0);
  const double lhs = log_theta_tilde(cvec1({1.3 - 2.0, 0.0}), omega).real();
  const double rhs = log_theta_tilde(cvec1({1.3, 0.0}), omega).real() - 1.3 + 1.0;
  CHECK(std::abs(lhs - rhs) < 1e-12);

  Rng rng(14);
  for (int rep = 0; rep < 25; ++rep) {
    const int g = 1 + static_cast<int>(rng.below(3));
    const Matrix om = testsup::random_spd(rng, g);
    const Vector x = testsup::random_vector(rng, g, -2.0, 2.0);
    Vector n(g);
    for (int i = 0; i < g; ++i) n(i) = std::round(rng.uniform(-2.0, 2.0));
    const ComplexVector z = x.cast<Complex>();
    const ComplexVector zs = (x - om * n).cast<Complex>();
    const double lhs2 = log_theta_tilde(zs, om).real();
    const double rhs2 = log_theta_tilde(z, om).real() - n.dot(x) +
                        0.5 * n.dot(om * n);
    CHECK(std::abs(lhs2 - rhs2) / std::max(1.0, std::abs(rhs2)) < 1e-8);
  }
}

TEST_CASE("log theta~ stays finite for huge arguments") {
  const Matrix omega = mat1(kTwoPi);
  const double big = log_theta_tilde(cvec1({200.0, 0.0}), omega).real();
  CHECK(std::isfinite(big));
  // Reduce by the lattice shift n = 32 and compare through the identity.
  const double n = 32.0;
  const double reduced =
      log_theta_tilde(cvec1({200.0 - kTwoPi * n, 0.0}), omega).real();
  const double expect = reduced + n * 200.0 - 0.5 * kTwoPi * n * n;
  CHECK(std::abs(big - expect) / std::abs(expect) < 1e-10);
}

TEST_CASE("log of theta~(0 | 2pi)") {
  const double v = log_theta_tilde(ComplexVector::Zero(1), mat1(kTwoPi)).real();
  CHECK(std::abs(v - 0.08290152003105467) < 1e-12);
}

TEST_CASE("first derivatives match finite differences in z") {
  Rng rng(15);
  for (int rep = 0; rep < 10; ++rep) {
    const int g = 1 + static_cast<int>(rng.below(3));
    const Matrix om = testsup::random_spd(rng, g);
    const Vector x = testsup::random_vector(rng, g, -1.5, 1.5);
    const DerivativeSpec spec = DerivativeSpec::gradient(g);
    const ThetaResult r = theta_tilde(x.cast<Complex>(), om, spec);
    for (int i = 0; i < g; ++i) {
      const double h = 1e-5;
      Vector xp = x, xm = x;
      xp(i) += h;
      xm(i) -= h;
      const double fd =
          (full_value(theta_tilde(xp.cast<Complex>(), om)).real() -
           full_value(theta_tilde(xm.cast<Complex>(), om)).real()) /
          (2.0 * h);
      const double an = (r.deriv(DerivIndex::d1(i)) * std::exp(r.log_scale)).real();
      CHECK(std::abs(fd - an) / std::max(1.0, std::abs(an)) < 1e-6);
    }
  }
}

TEST_CASE("omega derivative obeys the heat-equation relation") {
  // d theta~ / d Omega_jk = -(1 + delta_jk)^{-1} d^2 theta~ / dz_j dz_k,
  // with symmetric perturbation of the (j,k) and (k,j) entries.
  Rng rng(16);
  for (int rep = 0; rep < 8; ++rep) {
    const int g = 2 + static_cast<int>(rng.below(2));
    const Matrix om = testsup::random_spd(rng, g);
    const Vector x = testsup::random_vector(rng, g, -1.0, 1.0);
    const ThetaResult r =
        theta_tilde(x.cast<Complex>(), om, DerivativeSpec::gradient_hessian(g));
    const double h = 1e-5;
    for (int j = 0; j < g; ++j) {
      for (int k = j; k < g; ++k) {
        Matrix op = om, omm = om;
        op(j, k) += h;
        omm(j, k) -= h;
        if (j != k) {
          op(k, j) += h;
          omm(k, j) -= h;
        }
        const double fd = (full_value(theta_tilde(x.cast<Complex>(), op)).real() -
                           full_value(theta_tilde(x.cast<Complex>(), omm)).real()) /
                          (2.0 * h);
        const double delta = (j == k) ? 1.0 : 0.0;
        const double an = -(1.0 / (1.0 + delta)) *
                          (r.deriv(DerivIndex::d2(j, k)) * std::exp(r.log_scale)).real();
        CHECK(std::abs(fd - an) / std::max(1.0, std::abs(an)) < 1e-5);
      }
    }
  }
}

TEST_CASE("ellipsoid evaluation matches the naive sum with derivatives") {
  Rng rng(17);
  for (int g = 1; g <= 3; ++g) {
    const DerivativeSpec spec = DerivativeSpec::up_to_third(g);
    for (int rep = 0; rep < 12; ++rep) {
      const Matrix om = testsup::random_spd(rng, g);
      ComplexVector z(g);
      const Vector c = testsup::random_vector(rng, g, -2.0, 2.0);
      const Vector x = om * c;
      for (int i = 0; i < g; ++i)
        z(i) = Complex(x(i), rng.uniform(-3.1, 3.1));
      const ThetaResult fast = theta_tilde(z, om, spec);
      const ThetaResult ref = theta_tilde_naive(z, om, spec, 30);
      CHECK(theta_rel_diff(fast, ref) < 1e-10);
      for (const auto& d : spec.directions)
        CHECK(theta_deriv_rel_diff(fast, ref, d) < 1e-10);
    }
  }
}

TEST_CASE("purely imaginary z gives a real value through the complex path") {
  Rng rng(18);
  for (int rep = 0; rep < 10; ++rep) {
    const Matrix om = testsup::random_spd(rng, 2);
    ComplexVector z(2);
    for (int i = 0; i < 2; ++i) z(i) = Complex(0.0, rng.uniform(-3.0, 3.0));
    const ThetaResult r = theta_tilde(z, om);
    CHECK(std::abs(r.value.imag()) <= 1e-10 * std::abs(r.value));
  }
}

TEST_CASE("derivative lookup ignores index ordering") {
  Rng rng(19);
  const Matrix omega = testsup::random_spd(rng, 2);
  DerivativeSpec spec;
  spec.directions.push_back(DerivIndex::d2(1, 0));
  const ThetaResult r =
      theta_tilde(ComplexVector::Zero(2), omega, spec);
  CHECK(r.deriv(DerivIndex::d2(0, 1)) == r.deriv(DerivIndex::d2(1, 0)));
}

TEST_CASE("argument validation") {
  CHECK_THROWS_AS(theta_tilde(ComplexVector::Zero(2), mat1(2.0)), Error);
  Matrix bad(2, 2);
  bad << 1.0, 0.5, -0.5, 1.0;
  try {
    theta_tilde(ComplexVector::Zero(2), bad);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonSymmetricOmega);
  }
  Matrix npd(2, 2);
  npd << 1.0, 2.0, 2.0, 1.0;
  try {
    theta_tilde(ComplexVector::Zero(2), npd);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonPositiveDefiniteOmega);
  }
}

TEST_CASE("truncation overflow is reported when the ellipsoid is too large") {
  ThetaOptions opts;
  opts.max_points = 16;
  try {
    theta_tilde(ComplexVector::Zero(2), (0.05 * Matrix::Identity(2, 2)).eval(),
                {}, opts);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TruncationOverflow);
  }
}

TEST_CASE("log theta~ reports exact zeros") {
  // theta~(omega/2 + i pi | omega) vanishes identically: terms pair up with
  // opposite signs.  The evaluator must refuse to take the log.
  try {
    log_theta_tilde(cvec1({1.0, 3.14159265358979323846}), mat1(2.0));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ThetaZeroEncountered);
  }
}

TEST_CASE("options control the truncation target") {
  // A looser tail target still reproduces the value to its own accuracy.
  ThetaOptions loose;
  loose.tail_eps = 1e-6;
  const ThetaResult a = theta_tilde(cvec1({0.9, 0.4}), mat1(2.5), {}, loose);
  const ThetaResult b = theta_tilde(cvec1({0.9, 0.4}), mat1(2.5));
  CHECK(theta_rel_diff(a, b) < 1e-5);
}
