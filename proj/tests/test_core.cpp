#include <doctest.h>

#include <cmath>
#include <functional>

#include "rtbm/core.hpp"
#include "support/quadrature.hpp"
#include "support/test_support.hpp"

using namespace rtbm;
using testsup::integrate;
using testsup::integrate_2d;

namespace {

constexpr double kLogTwoPi = 1.83787706640934548356;

Vector vec1(double a) {
  Vector v(1);
  v(0) = a;
  return v;
}

Eigen::VectorXi ivec1(int a) {
  Eigen::VectorXi v(1);
  v(0) = a;
  return v;
}

RtbmParams random_params(Rng& rng, Index nv, Index nh, Phase phase,
                         double bias_scale = 0.5) {
  RtbmParams p = init_random(nv, nh, 1.0, rng.below(1u << 30));
  p.phase = phase;
  for (Index i = 0; i < nv; ++i) p.b_v(i) = rng.uniform(-bias_scale, bias_scale);
  for (Index i = 0; i < nh; ++i) p.b_h(i) = rng.uniform(-bias_scale, bias_scale);
  return p;
}

// Diagonal-T parameters with the Schur condition built in: Q is a random SPD
// part plus exactly the W^T T^{-1} W correction.
RtbmParams diag_t_params(Rng& rng, Index nv, Index nh, Phase phase) {
  RtbmParams p;
  p.t = Matrix::Zero(nv, nv);
  for (Index i = 0; i < nv; ++i) p.t(i, i) = rng.uniform(0.6, 2.2);
  p.w = Matrix::Zero(nv, nh);
  for (Index i = 0; i < nv; ++i)
    for (Index j = 0; j < nh; ++j) p.w(i, j) = rng.uniform(-0.6, 0.6);
  p.q = testsup::random_spd(rng, nh, 0.5);
  if (phase == Phase::I) {
    p.q += (p.w.transpose() * p.t.llt().solve(p.w)).eval();
    p.q = ((p.q + p.q.transpose()) / 2.0).eval();
  }
  p.b_v = testsup::random_vector(rng, nv, -0.5, 0.5);
  p.b_h = testsup::random_vector(rng, nh, -0.5, 0.5);
  p.phase = phase;
  return p;
}

// Well-conditioned parameters for the fixed-box oracle tests: eigenvalues of
// T and of the partition coupling bounded away from zero so the probability
// mass stays deep inside the [-30, 30] quadrature window and the hidden
// lattice radius. Phase II additionally keeps Q diagonally dominant
// (diagonal >= 2, couplings <= 0.1), which provably keeps theta~ at purely
// imaginary arguments positive for n_h <= 2.
RtbmParams oracle_params(Rng& rng, Index nv, Index nh, Phase phase) {
  RtbmParams p;
  p.t = testsup::random_spd(rng, nv, 0.7);
  p.w = Matrix::Zero(nv, nh);
  for (Index i = 0; i < nv; ++i)
    for (Index j = 0; j < nh; ++j) p.w(i, j) = rng.uniform(-0.5, 0.5);
  if (phase == Phase::I) {
    p.q = testsup::random_spd(rng, nh, 0.6);
    p.q += (p.w.transpose() * p.t.llt().solve(p.w)).eval();
    p.q = ((p.q + p.q.transpose()) / 2.0).eval();
  } else {
    p.q = Matrix::Zero(nh, nh);
    for (Index i = 0; i < nh; ++i) p.q(i, i) = rng.uniform(2.0, 3.0);
    for (Index i = 0; i < nh; ++i)
      for (Index j = i + 1; j < nh; ++j)
        p.q(i, j) = p.q(j, i) = rng.uniform(-0.1, 0.1);
  }
  p.b_v = testsup::random_vector(rng, nv, -0.5, 0.5);
  p.b_h = testsup::random_vector(rng, nh, -0.5, 0.5);
  p.phase = phase;
  return p;
}

// Brute-force lattice sum of f over h in [-radius, radius]^{n_h}.
Complex lattice_sum(Index nh, int radius,
                    const std::function<Complex(const Eigen::VectorXi&)>& f) {
  Eigen::VectorXi h = Eigen::VectorXi::Constant(nh, -radius);
  Complex acc{0.0, 0.0};
  while (true) {
    acc += f(h);
    Index k = 0;
    while (k < nh && h(k) == radius) {
      h(k) = -radius;
      ++k;
    }
    if (k == nh) break;
    ++h(k);
  }
  return acc;
}

double gaussian_log_pdf(const Vector& v, const Vector& mean, const Matrix& cov) {
  const Eigen::LLT<Matrix> llt(cov);
  const Vector d = v - mean;
  const double maha = d.dot(llt.solve(d));
  const double log_det =
      2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * maha - 0.5 * log_det -
         0.5 * static_cast<double>(v.size()) * kLogTwoPi;
}

}  // namespace

TEST_CASE("init_random produces valid parameters by construction") {
  const RtbmParams p1 = init_random(1, 1, 1.0, 7);
  CHECK(p1.t(0, 0) > 0.0);
  CHECK(p1.q(0, 0) > 0.0);
  CHECK(p1.q(0, 0) - p1.w(0, 0) * p1.w(0, 0) / p1.t(0, 0) > 0.0);
  CHECK(is_valid(p1));

  const RtbmParams p2 = init_random(2, 3, 1.0, 123);
  CHECK(min_eigenvalue(partition_coupling(p2)) > 0.0);
  CHECK(is_valid(p2));

  const RtbmParams a = init_random(2, 3, 1.0, 99);
  const RtbmParams b = init_random(2, 3, 1.0, 99);
  CHECK(a.t == b.t);
  CHECK(a.q == b.q);
  CHECK(a.w == b.w);
}

TEST_CASE("validation rejects broken parameter sets") {
  RtbmParams p = init_random(2, 2, 1.0, 5);
  CHECK(is_valid(p));
  RtbmParams bad = p;
  bad.q(0, 1) += 0.5;  // asymmetric
  CHECK(!is_valid(bad));
  bad = p;
  bad.t = -Matrix::Identity(2, 2);
  CHECK(!is_valid(bad));
  bad = p;
  bad.w *= 100.0;  // destroys the Schur condition in phase I
  CHECK(!is_valid(bad));
  bad.phase = Phase::II;  // but phase II has no Schur constraint
  CHECK(is_valid(bad));
  bad = p;
  bad.b_v(0) = std::nan("");
  CHECK(!is_valid(bad));
}

TEST_CASE("energy matches the block quadratic form") {
  CHECK(energy(init_random(1, 1, 1.0, 3), Vector::Zero(1),
               Eigen::VectorXi::Zero(1)) == Complex{0.0, 0.0});

  RtbmParams p;
  p.t = 2.0 * Matrix::Identity(1, 1);
  p.q = 2.0 * Matrix::Identity(1, 1);
  p.w = Matrix::Identity(1, 1);
  p.b_v = Vector::Zero(1);
  p.b_h = Vector::Zero(1);
  CHECK(energy(p, vec1(1.0), ivec1(1)).real() == doctest::Approx(3.0).epsilon(1e-14));

  Rng rng(21);
  for (int rep = 0; rep < 5; ++rep) {
    const RtbmParams r = random_params(rng, 2, 2, Phase::I);
    const Index n = 4;
    Matrix a(n, n);
    a.topLeftCorner(2, 2) = r.q;
    a.topRightCorner(2, 2) = r.w.transpose();
    a.bottomLeftCorner(2, 2) = r.w;
    a.bottomRightCorner(2, 2) = r.t;
    const Vector v = testsup::random_vector(rng, 2, -2.0, 2.0);
    Eigen::VectorXi h(2);
    h << static_cast<int>(rng.below(7)) - 3, static_cast<int>(rng.below(7)) - 3;
    Vector x(n), bias(n);
    x << h.cast<double>(), v;
    bias << r.b_h, r.b_v;
    const double assembled = 0.5 * x.dot(a * x) + bias.dot(x);
    CHECK(std::abs(energy(r, v, h).real() - assembled) < 1e-12);
  }

  // Phase II routes the coupled terms into the imaginary part.
  RtbmParams p2 = p;
  p2.phase = Phase::II;
  p2.b_h = vec1(0.3);
  const Complex e2 = energy(p2, vec1(1.5), ivec1(2));
  CHECK(e2.real() == doctest::Approx(0.5 * 2.0 * 1.5 * 1.5 + 0.5 * 2.0 * 4.0));
  CHECK(e2.imag() == doctest::Approx(1.5 * 2.0 + 0.3 * 2.0));
}

TEST_CASE("free energy against the brute-force hidden sum") {
  Rng rng(22);
  for (Phase phase : {Phase::I, Phase::II}) {
    for (int rep = 0; rep < 5; ++rep) {
      const RtbmParams p = random_params(rng, 1, 1, phase);
      const Vector v = vec1(rng.uniform(-2.0, 2.0));
      const Complex direct = lattice_sum(1, 30, [&](const Eigen::VectorXi& h) {
        return std::exp(-energy(p, v, h));
      });
      CHECK(std::abs(direct.imag()) <= 1e-12 * std::abs(direct.real()));
      const double via_theta = std::exp(-free_energy(p, v));
      CHECK(testsup::rel_err(via_theta, direct.real()) < 1e-10);
    }
  }
}

TEST_CASE("free energy with decoupled sectors and diagonal Q") {
  Rng rng(23);
  RtbmParams p = random_params(rng, 2, 2, Phase::I);
  p.w.setZero();
  p.b_h.setZero();
  const Vector v = testsup::random_vector(rng, 2, -1.0, 1.0);
  const double expect = 0.5 * v.dot(p.t * v) + p.b_v.dot(v) -
                        theta::log_theta_tilde(ComplexVector::Zero(2), p.q).real();
  CHECK(std::abs(free_energy(p, v) - expect) < 1e-12);

  // Diagonal Q factorizes into per-component one-dimensional factors.
  RtbmParams d = diag_t_params(rng, 2, 2, Phase::I);
  d.q(0, 1) = d.q(1, 0) = 0.0;
  const Vector v2 = testsup::random_vector(rng, 2, -1.0, 1.0);
  const Vector z = d.w.transpose() * v2 + d.b_h;
  double log_theta = 0.0;
  for (int i = 0; i < 2; ++i) {
    ComplexVector zi(1);
    zi(0) = Complex(z(i), 0.0);
    log_theta +=
        theta::log_theta_tilde(zi, d.q.block(i, i, 1, 1)).real();
  }
  const double expect2 = 0.5 * v2.dot(d.t * v2) + d.b_v.dot(v2) - log_theta;
  CHECK(std::abs(free_energy(d, v2) - expect2) < 1e-10);
}

TEST_CASE("log Z closed form") {
  RtbmParams p;
  p.t = Matrix::Identity(1, 1);
  p.q = 2.0 * 3.14159265358979323846 * Matrix::Identity(1, 1);
  p.w = Matrix::Zero(1, 1);
  p.b_v = Vector::Zero(1);
  p.b_h = Vector::Zero(1);
  CHECK(std::abs(log_z(p) - (0.5 * kLogTwoPi + std::log(1.086434811213308))) < 1e-12);

  // Generic instance against quadrature of the lattice-summed integrand.
  Rng rng(24);
  for (Phase phase : {Phase::I, Phase::II}) {
    const RtbmParams g = oracle_params(rng, 1, 1, phase);
    const double z_quad = integrate(
        [&](double v) {
          return lattice_sum(1, 30, [&](const Eigen::VectorXi& h) {
                   return std::exp(-energy(g, vec1(v), h));
                 }).real();
        },
        -30.0, 30.0, 1e-10);
    CHECK(testsup::rel_err(std::exp(log_z(g)), z_quad) < 1e-6);
  }

  // With B_v = 0, log Z is even in W.
  RtbmParams s = random_params(rng, 2, 2, Phase::I);
  s.b_v.setZero();
  RtbmParams flipped = s;
  flipped.w = -s.w;
  CHECK(std::abs(log_z(s) - log_z(flipped)) < 1e-12);
}

TEST_CASE("density reduces to a Gaussian when the sectors decouple") {
  Rng rng(25);
  RtbmParams p = random_params(rng, 2, 2, Phase::I);
  p.w.setZero();
  p.b_h.setZero();
  const Matrix cov = p.t.llt().solve(Matrix::Identity(2, 2));
  const Vector mean = -p.t.llt().solve(p.b_v);
  for (int rep = 0; rep < 10; ++rep) {
    const Vector v = testsup::random_vector(rng, 2, -3.0, 3.0);
    CHECK(std::abs(density(p, v).log_p - gaussian_log_pdf(v, mean, cov)) < 1e-12);
  }
}

TEST_CASE("density normalizes to one under quadrature") {
  Rng rng(26);
  for (Phase phase : {Phase::I, Phase::II}) {
    for (int rep = 0; rep < 20; ++rep) {
      const Index nh = 1 + static_cast<Index>(rng.below(2));
      const RtbmParams p = oracle_params(rng, 1, nh, phase);
      const RtbmEvaluator ev(p);
      const double mass = integrate(
          [&](double v) { return ev.density(vec1(v)).p; }, -30.0, 30.0, 1e-9);
      CHECK(std::abs(mass - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("density is nonnegative at random points in both phases") {
  Rng rng(27);
  for (Phase phase : {Phase::I, Phase::II}) {
    const RtbmParams p = random_params(rng, 2, 2, phase);
    const RtbmEvaluator ev(p);
    for (int rep = 0; rep < 1000; ++rep) {
      const Vector v = testsup::random_vector(rng, 2, -6.0, 6.0);
      CHECK(ev.density(v).p >= 0.0);
    }
  }
}

TEST_CASE("density equals the lattice-over-quadrature oracle") {
  Rng rng(28);
  const RtbmParams p = random_params(rng, 1, 1, Phase::I);
  const auto unnormalized = [&](double v) {
    return lattice_sum(1, 30, [&](const Eigen::VectorXi& h) {
             return std::exp(-energy(p, vec1(v), h));
           }).real();
  };
  const double z_quad = integrate(unnormalized, -30.0, 30.0, 1e-10);
  for (double v : {-1.7, -0.3, 0.0, 0.9, 2.4}) {
    const double oracle = unnormalized(v) / z_quad;
    CHECK(testsup::rel_err(density(p, vec1(v)).p, oracle) < 1e-6);
  }
}

TEST_CASE("conditional density normalizes and factorizes") {
  Rng rng(29);
  for (Phase phase : {Phase::I, Phase::II}) {
    for (Index nh : {Index{1}, Index{2}}) {
      const RtbmParams p = random_params(rng, 2, nh, phase);
      const Vector v = testsup::random_vector(rng, 2, -1.5, 1.5);
      const Complex total = lattice_sum(nh, 30, [&](const Eigen::VectorXi& h) {
        return conditional_density(p, h, v);
      });
      CHECK(std::abs(total - Complex{1.0, 0.0}) < 1e-10);
    }
  }

  // Diagonal Q: joint conditional equals the product of marginals.
  RtbmParams d = diag_t_params(rng, 2, 2, Phase::I);
  d.q(0, 1) = d.q(1, 0) = 0.0;
  const Vector v = testsup::random_vector(rng, 2, -1.0, 1.0);
  RtbmParams d0 = d, d1 = d;
  d0.q = d.q.block(0, 0, 1, 1);
  d0.w = d.w.col(0);
  d0.b_h = d.b_h.head(1);
  d1.q = d.q.block(1, 1, 1, 1);
  d1.w = d.w.col(1);
  d1.b_h = d.b_h.tail(1);
  Eigen::VectorXi h(2);
  h << 2, -1;
  const Complex joint = conditional_density(d, h, v);
  const Complex prod = conditional_density(d0, ivec1(2), v) *
                       conditional_density(d1, ivec1(-1), v);
  CHECK(std::abs(joint - prod) <= 1e-10 * std::abs(prod));

  // h = 0 reduces to 1/theta~.
  const Vector z = d.w.transpose() * v + d.b_h;
  const double inv_theta =
      std::exp(-theta::log_theta_tilde(z.cast<Complex>(), d.q).real());
  CHECK(testsup::rel_err(conditional_density(d, Eigen::VectorXi::Zero(2), v).real(),
                         inv_theta) < 1e-12);
}

TEST_CASE("conditional density and expectation ignore T and B_v") {
  Rng rng(30);
  const RtbmParams p = random_params(rng, 2, 2, Phase::I);
  RtbmParams perturbed = p;
  perturbed.t += Matrix::Random(2, 2);  // not even symmetric; must not matter
  perturbed.b_v = testsup::random_vector(rng, 2, -5.0, 5.0);
  const Vector v = testsup::random_vector(rng, 2, -1.0, 1.0);
  Eigen::VectorXi h(2);
  h << 1, -2;
  CHECK(std::abs(conditional_density(p, h, v) - conditional_density(perturbed, h, v)) < 1e-12);
  CHECK((expectation(p, v) - expectation(perturbed, v)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("expectation matches the brute-force conditional mean") {
  Rng rng(31);
  // Zero argument: even theta, odd derivative.
  RtbmParams p0 = random_params(rng, 1, 1, Phase::I);
  p0.w.setZero();
  p0.b_h.setZero();
  CHECK(std::abs(expectation(p0, vec1(0.7))(0)) < 1e-13);

  for (Phase phase : {Phase::I, Phase::II}) {
    for (int rep = 0; rep < 5; ++rep) {
      const RtbmParams p = random_params(rng, 1, 1, phase);
      const Vector v = vec1(rng.uniform(-2.0, 2.0));
      const Complex mean_h = lattice_sum(1, 30, [&](const Eigen::VectorXi& hh) {
        return static_cast<double>(hh(0)) * conditional_density(p, hh, v);
      });
      const double e = expectation(p, v)(0);
      if (phase == Phase::I) {
        CHECK(testsup::rel_err(e, mean_h.real()) < 1e-8);
      } else {
        // Imaginary conditional mean, rotated onto the real axis.
        CHECK(std::abs(mean_h.real()) <= 1e-10 * std::abs(mean_h));
        CHECK(testsup::rel_err(e, (Complex{0.0, 1.0} * mean_h).real()) < 1e-8);
      }
    }
  }
}

TEST_CASE("expectation shifts by -n under z -> z + Qn") {
  RtbmParams p;
  p.t = 1.2 * Matrix::Identity(1, 1);
  p.q = 0.9 * Matrix::Identity(1, 1);
  p.w = Matrix::Identity(1, 1);
  p.b_v = Vector::Zero(1);
  p.b_h = vec1(0.2);
  const double v = 0.6;
  for (int n : {-2, 1, 3}) {
    const double shifted = expectation(p, vec1(v + p.q(0, 0) * n))(0);
    const double base = expectation(p, vec1(v))(0);
    CHECK(testsup::rel_err(shifted, base - n) < 1e-8);
  }
}

TEST_CASE("expectation equals the B_h sensitivity of the free energy") {
  Rng rng(32);
  for (Phase phase : {Phase::I, Phase::II}) {
    const RtbmParams p = random_params(rng, 2, 2, phase);
    const Vector v = testsup::random_vector(rng, 2, -1.0, 1.0);
    const Vector e = expectation(p, v);
    for (Index i = 0; i < 2; ++i) {
      const double h = 1e-6;
      RtbmParams pp = p, pm = p;
      pp.b_h(i) += h;
      pm.b_h(i) -= h;
      const double fd = (free_energy(pp, v) - free_energy(pm, v)) / (2.0 * h);
      CHECK(testsup::rel_err(e(i), fd) < 1e-6);
    }
  }
}

TEST_CASE("phase II intermediates are real up to roundoff") {
  Rng rng(33);
  const RtbmParams p = random_params(rng, 2, 2, Phase::II);
  const Vector v = testsup::random_vector(rng, 2, -1.5, 1.5);
  const Vector y = p.w.transpose() * v + p.b_h;
  // Route the same evaluation through the general complex path.
  ComplexVector z(2);
  for (Index i = 0; i < 2; ++i) z(i) = Complex(0.0, y(i));
  const theta::ThetaResult r =
      theta::theta_tilde(z, p.q, theta::DerivativeSpec::gradient(2));
  CHECK(std::abs(r.value.imag()) <= 1e-10 * std::abs(r.value));
  for (int i = 0; i < 2; ++i) {
    const Complex ratio = r.ratio(theta::DerivIndex::d1(i));
    CHECK(std::abs(ratio.real()) <= 1e-10 * std::max(1.0, std::abs(ratio)));
  }
  // And the assembled density through the evaluator is finite and real.
  const DensityValue d = density(p, v);
  CHECK(std::isfinite(d.log_p));
  CHECK(d.p >= 0.0);
}

TEST_CASE("analytic density gradients match finite differences") {
  Rng rng(34);
  const double step = 1e-5;
  for (Phase phase : {Phase::I, Phase::II}) {
    for (int rep = 0; rep < 3; ++rep) {
      const Index nv = 1 + static_cast<Index>(rng.below(2));
      const Index nh = 1 + static_cast<Index>(rng.below(2));
      const RtbmParams p = diag_t_params(rng, nv, nh, phase);
      const Vector v = testsup::random_vector(rng, nv, -1.5, 1.5);
      const DensityGradients g = density_gradients(p, v);
      const double scale = std::max(g.p, 1e-12);
      const auto check = [&](double analytic, double fd) {
        const double denom = std::max({std::abs(analytic), 0.01 * scale, 1e-14});
        CHECK(std::abs(analytic - fd) / denom < 1e-4);
      };

      for (Index i = 0; i < nh; ++i) {
        RtbmParams pp = p, pm = p;
        pp.b_h(i) += step;
        pm.b_h(i) -= step;
        check(g.d_b_h(i), (density(pp, v).p - density(pm, v).p) / (2.0 * step));
      }
      for (Index i = 0; i < nv; ++i) {
        RtbmParams pp = p, pm = p;
        pp.b_v(i) += step;
        pm.b_v(i) -= step;
        check(g.d_b_v(i), (density(pp, v).p - density(pm, v).p) / (2.0 * step));
      }
      for (Index i = 0; i < nv; ++i)
        for (Index j = 0; j < nh; ++j) {
          RtbmParams pp = p, pm = p;
          pp.w(i, j) += step;
          pm.w(i, j) -= step;
          check(g.d_w(i, j), (density(pp, v).p - density(pm, v).p) / (2.0 * step));
        }
      for (Index i = 0; i < nh; ++i)
        for (Index j = i; j < nh; ++j) {
          RtbmParams pp = p, pm = p;
          pp.q(i, j) += step;
          pm.q(i, j) -= step;
          if (i != j) {
            pp.q(j, i) += step;
            pm.q(j, i) -= step;
          }
          check(g.d_q(i, j), (density(pp, v).p - density(pm, v).p) / (2.0 * step));
          CHECK(g.d_q(i, j) == g.d_q(j, i));
        }
      for (Index i = 0; i < nv; ++i) {
        RtbmParams pp = p, pm = p;
        pp.t(i, i) += step;
        pm.t(i, i) -= step;
        check(g.d_t_diag(i), (density(pp, v).p - density(pm, v).p) / (2.0 * step));
      }
    }
  }
}

TEST_CASE("decoupled B_v gradient is the Gaussian score") {
  Rng rng(35);
  RtbmParams p = diag_t_params(rng, 2, 2, Phase::I);
  p.w.setZero();
  p.b_h.setZero();
  const Vector v = testsup::random_vector(rng, 2, -1.0, 1.0);
  const DensityGradients g = density_gradients(p, v);
  const Vector expect = -g.p * (v + p.t.llt().solve(p.b_v)).eval();
  CHECK((g.d_b_v - expect).cwiseAbs().maxCoeff() <= 1e-10 * g.p);
}

TEST_CASE("gradients demand a diagonal T") {
  Rng rng(36);
  RtbmParams p = diag_t_params(rng, 2, 2, Phase::I);
  p.t(0, 1) = p.t(1, 0) = 1e-3;  // small enough to keep validation happy
  try {
    density_gradients(p, Vector::Zero(2));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonDiagonalT);
  }
}

TEST_CASE("closed-form moments match quadrature") {
  Rng rng(37);
  // Decoupled limit.
  RtbmParams p0 = random_params(rng, 2, 2, Phase::I);
  p0.w.setZero();
  const Moments m0 = moments(p0);
  const Vector mean0 = -p0.t.llt().solve(p0.b_v);
  const Matrix cov0 = p0.t.llt().solve(Matrix::Identity(2, 2));
  CHECK((m0.mean - mean0).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((m0.second_moment - (mean0 * mean0.transpose() + cov0)).cwiseAbs().maxCoeff() < 1e-12);

  for (Phase phase : {Phase::I, Phase::II}) {
    const RtbmParams p = oracle_params(rng, 1, 2, phase);
    const RtbmEvaluator ev(p);
    const Moments m = moments(p);
    const double mean_quad = integrate(
        [&](double v) { return v * ev.density(vec1(v)).p; }, -30.0, 30.0, 1e-9);
    const double second_quad = integrate(
        [&](double v) { return v * v * ev.density(vec1(v)).p; }, -30.0, 30.0, 1e-9);
    CHECK(testsup::rel_err(m.mean(0), mean_quad) < 1e-6);
    CHECK(testsup::rel_err(m.second_moment(0, 0), second_quad) < 1e-6);
  }

  // N_v = 2: symmetry, PSD covariance, and a quadrature cross-check.
  const RtbmParams p2 = oracle_params(rng, 2, 1, Phase::I);
  const RtbmEvaluator ev2(p2);
  const Moments m2 = moments(p2);
  CHECK((m2.second_moment - m2.second_moment.transpose()).cwiseAbs().maxCoeff() == 0.0);
  const Matrix cov = m2.second_moment - m2.mean * m2.mean.transpose();
  CHECK(min_eigenvalue(cov) > 0.0);
  const double mean0_quad = integrate_2d(
      [&](double a, double b) {
        Vector v(2);
        v << a, b;
        return a * ev2.density(v).p;
      },
      -20.0, 20.0, -20.0, 20.0, 1e-7);
  CHECK(testsup::rel_err(m2.mean(0), mean0_quad) < 1e-5);
}

TEST_CASE("continuous Boltzmann machine closed form") {
  Rng rng(38);
  // W = 0: identical to the discrete-hidden density.
  RtbmParams p0 = random_params(rng, 2, 2, Phase::I);
  p0.w.setZero();
  p0.b_h.setZero();
  for (int rep = 0; rep < 5; ++rep) {
    const Vector v = testsup::random_vector(rng, 2, -2.0, 2.0);
    CHECK(std::abs(continuous_bm_density(p0, v).log_p - density(p0, v).log_p) < 1e-12);
  }

  // Scalar Schur complement: T=2, Q=2, W=1 gives variance 2/3.
  RtbmParams s;
  s.t = 2.0 * Matrix::Identity(1, 1);
  s.q = 2.0 * Matrix::Identity(1, 1);
  s.w = Matrix::Identity(1, 1);
  s.b_v = Vector::Zero(1);
  s.b_h = Vector::Zero(1);
  for (double v : {-1.0, 0.0, 0.5, 2.0}) {
    const double expect =
        gaussian_log_pdf(vec1(v), Vector::Zero(1), (2.0 / 3.0) * Matrix::Identity(1, 1));
    CHECK(std::abs(continuous_bm_density(s, vec1(v)).log_p - expect) < 1e-12);
  }

  // Normalization by quadrature.
  const RtbmParams g = random_params(rng, 1, 2, Phase::I);
  const double mass = integrate(
      [&](double v) { return continuous_bm_density(g, vec1(v)).p; }, -30.0, 30.0, 1e-9);
  CHECK(std::abs(mass - 1.0) < 1e-6);

  // The Schur condition of the continuous model is checked on its own.
  RtbmParams bad = g;
  bad.w *= 40.0;
  bad.phase = Phase::II;  // phase II never violates it
  CHECK(std::isfinite(continuous_bm_density(bad, vec1(0.3)).log_p));
  bad.phase = Phase::I;
  try {
    continuous_bm_density(bad, vec1(0.3));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonPositiveDefiniteSchur);
  }
}

TEST_CASE("evaluator agrees with the free functions and batches correctly") {
  Rng rng(39);
  const RtbmParams p = diag_t_params(rng, 2, 2, Phase::I);
  const RtbmEvaluator ev(p);
  Matrix vs(2, 5);
  for (Index c = 0; c < 5; ++c) vs.col(c) = testsup::random_vector(rng, 2, -2.0, 2.0);

  double nll = 0.0;
  for (Index c = 0; c < 5; ++c) {
    CHECK(std::abs(ev.log_density(vs.col(c)) - density(p, vs.col(c)).log_p) < 1e-12);
    nll -= density(p, vs.col(c)).log_p;
  }
  CHECK(std::abs(ev.mean_nll(vs) - nll / 5.0) < 1e-12);

  const DensityGradients mean_g = ev.mean_log_density_gradients(vs);
  Matrix acc_w = Matrix::Zero(2, 2);
  Vector acc_bh = Vector::Zero(2);
  for (Index c = 0; c < 5; ++c) {
    const DensityGradients g = log_density_gradients(p, vs.col(c));
    acc_w += g.d_w;
    acc_bh += g.d_b_h;
  }
  CHECK((mean_g.d_w - acc_w / 5.0).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((mean_g.d_b_h - acc_bh / 5.0).cwiseAbs().maxCoeff() < 1e-12);
}
