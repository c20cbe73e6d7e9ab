#pragma once

#include "siv/common.hpp"

namespace siv::linalg {

/// Flips each column so its largest-magnitude entry is positive. On ties the
/// lowest row index decides.
void normalize_column_signs(Matrix& m);

/// Orthonormal basis of the column space of `a`, singular values below
/// tol * sigma_max dropped.
struct ColumnBasis {
    Matrix basis;          // n x rank
    Vector singular_values;  // all of them, descending
    Index rank = 0;
};
ColumnBasis column_basis(const Matrix& a, double tol = kPinvTolerance);

/// Minimum-norm least-squares solution of a * x = b with the pseudo-inverse
/// cutoff above.
Vector lstsq(const Matrix& a, const Vector& b, double tol = kPinvTolerance);

/// Eigen-decomposition of a symmetric matrix, eigenvalues descending and
/// eigenvectors sign-normalized.
struct SymmetricEigen {
    Vector values;
    Matrix vectors;
};
SymmetricEigen symmetric_eigen_desc(const Matrix& s);

/// Solves the normal equations G x = c for a symmetric PSD Gram matrix.
/// Uses Cholesky when well conditioned and falls back to an eigen
/// pseudo-inverse (cutoff kGramEigenTolerance relative to the top eigenvalue).
Vector solve_gram(const Matrix& gram, const Vector& rhs);

/// Largest absolute entry, 0 for empty matrices.
double max_abs(const Matrix& m);

}  // namespace siv::linalg
