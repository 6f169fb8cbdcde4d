#pragma once

#include <complex>

#include <Eigen/Dense>

namespace rtbm {

using Scalar = double;
using Complex = std::complex<double>;
using Index = Eigen::Index;

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using ComplexVector = Eigen::VectorXcd;
using ComplexMatrix = Eigen::MatrixXcd;

// Elementwise symmetry check; tol is an absolute bound on |m - m^T|.
bool is_symmetric(const Eigen::Ref<const Matrix>& m, double tol = 1e-12);

// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue(const Eigen::Ref<const Matrix>& m);

// Symmetric positive definite with all eigenvalues above min_eig.
bool is_positive_definite(const Eigen::Ref<const Matrix>& m,
                          double min_eig = 1e-12);

}  // namespace rtbm
