#include "siv/linalg.hpp"

#include <Eigen/SVD>

#include <cmath>

namespace siv::linalg {

void normalize_column_signs(Matrix& m) {
    for (Index j = 0; j < m.cols(); ++j) {
        Index best = 0;
        double best_abs = -1.0;
        for (Index i = 0; i < m.rows(); ++i) {
            const double a = std::abs(m(i, j));
            if (a > best_abs) {
                best_abs = a;
                best = i;
            }
        }
        if (best_abs > 0.0 && m(best, j) < 0.0) {
            m.col(j) = -m.col(j);
        }
    }
}

ColumnBasis column_basis(const Matrix& a, double tol) {
    ColumnBasis out;
    if (a.cols() == 0 || a.rows() == 0) {
        out.basis = Matrix(a.rows(), 0);
        out.singular_values = Vector(0);
        return out;
    }
    Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU);
    out.singular_values = svd.singularValues();
    const double cutoff = tol * out.singular_values(0);
    Index rank = 0;
    while (rank < out.singular_values.size() && out.singular_values(rank) > cutoff) {
        ++rank;
    }
    out.rank = rank;
    out.basis = svd.matrixU().leftCols(rank);
    return out;
}

Vector lstsq(const Matrix& a, const Vector& b, double tol) {
    if (a.cols() == 0) {
        return Vector(0);
    }
    Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    const double cutoff = s.size() > 0 ? tol * s(0) : 0.0;
    Vector utb = svd.matrixU().transpose() * b;
    for (Index i = 0; i < s.size(); ++i) {
        utb(i) = s(i) > cutoff ? utb(i) / s(i) : 0.0;
    }
    return svd.matrixV() * utb;
}

SymmetricEigen symmetric_eigen_desc(const Matrix& s) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(s);
    if (es.info() != Eigen::Success) {
        throw DegenerateInput("symmetric eigen-decomposition failed");
    }
    SymmetricEigen out;
    out.values = es.eigenvalues().reverse();
    out.vectors = es.eigenvectors().rowwise().reverse();
    normalize_column_signs(out.vectors);
    return out;
}

Vector solve_gram(const Matrix& gram, const Vector& rhs) {
    const Index k = gram.rows();
    if (k == 0) {
        return Vector(0);
    }
    if (k == 1) {
        const double g = gram(0, 0);
        Vector out(1);
        out(0) = g > 0.0 ? rhs(0) / g : 0.0;
        return out;
    }
    Eigen::LLT<Matrix> llt(gram);
    if (llt.info() == Eigen::Success && llt.rcond() > 1e-12) {
        return llt.solve(rhs);
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
    const Vector& ev = es.eigenvalues();
    const double cutoff = kGramEigenTolerance * std::max(ev.maxCoeff(), 0.0);
    Vector proj = es.eigenvectors().transpose() * rhs;
    for (Index i = 0; i < k; ++i) {
        proj(i) = ev(i) > cutoff ? proj(i) / ev(i) : 0.0;
    }
    return es.eigenvectors() * proj;
}

double max_abs(const Matrix& m) {
    return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

}  // namespace siv::linalg
