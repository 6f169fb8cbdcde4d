#include "rtbm/types.hpp"

#include <Eigen/Eigenvalues>

#include "rtbm/error.hpp"

namespace rtbm {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::UnsupportedDim: return "UnsupportedDim";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::FileNotFound: return "FileNotFound";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::EmptyData: return "EmptyData";
    case ErrorCode::NonFiniteSample: return "NonFiniteSample";
    case ErrorCode::MixedVisibleDims: return "MixedVisibleDims";
    case ErrorCode::DegenerateData: return "DegenerateData";
    case ErrorCode::NonSymmetricOmega: return "NonSymmetricOmega";
    case ErrorCode::NonPositiveDefiniteOmega: return "NonPositiveDefiniteOmega";
    case ErrorCode::NonPositiveDefiniteSchur: return "NonPositiveDefiniteSchur";
    case ErrorCode::NonDiagonalT: return "NonDiagonalT";
    case ErrorCode::DegenerateA: return "DegenerateA";
    case ErrorCode::TruncationOverflow: return "TruncationOverflow";
    case ErrorCode::ThetaZeroEncountered: return "ThetaZeroEncountered";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::NoFeasibleCandidate: return "NoFeasibleCandidate";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::LineSearchFailed: return "LineSearchFailed";
  }
  return "UnknownError";
}

bool is_symmetric(const Eigen::Ref<const Matrix>& m, double tol) {
  if (m.rows() != m.cols()) return false;
  if (m.rows() == 0) return true;
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol;
}

double min_eigenvalue(const Eigen::Ref<const Matrix>& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

bool is_positive_definite(const Eigen::Ref<const Matrix>& m, double min_eig) {
  if (m.rows() != m.cols() || m.rows() == 0) return false;
  return min_eigenvalue(m) > min_eig;
}

}  // namespace rtbm
