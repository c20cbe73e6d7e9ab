#pragma once

#include "siv/common.hpp"
#include "siv/dataset.hpp"

namespace siv {

enum class LoadingMethod { PCA, MLE };

const char* to_string(LoadingMethod m);

/// Spectrum of X^T X / (n - 1) for centered X. Holds min(n, p) eigenvalues in
/// descending order and the leading eigenvectors in exposure space (p x m).
struct Spectrum {
    Vector values;
    Matrix vectors;
};

/// Eigenvalues of the sample covariance, computed through the smaller of the
/// p x p covariance and the n x n Gram matrix. `vectors_wanted` leading
/// eigenvectors are returned, unit norm and sign-normalized.
Spectrum covariance_spectrum(const Matrix& centered_x, Index vectors_wanted);

struct FactorEstimate {
    Index q_hat = 0;
    Matrix loadings;       // p x q_hat
    Vector uniquenesses;   // p, diagonal of the idiosyncratic covariance
    Vector eigenvalues;    // min(n, p), descending
    LoadingMethod method = LoadingMethod::PCA;
    std::vector<double> loglik_trace;  // MLE only: entry 0 is the starting point
    int iterations = 0;
    Diagnostics diagnostics;
};

/// Orthonormal basis of the orthogonal complement of the loading columns.
struct ComplementBasis {
    Matrix basis;  // p x (p - q_hat)
};

/// min(20, floor(min(n, p) / 3)), further capped so the eigenvalue-difference
/// window fits.
Index default_max_factors(Index n, Index p);

/// Eigenvalue-differences estimator of the number of factors.
///
/// Starting from j = q_max + 1, regress the five eigenvalues
/// lambda_j .. lambda_{j+4} on (j-1)^{2/3} .. (j+3)^{2/3}, set the threshold to
/// twice the absolute slope, and take the largest i <= q_max whose gap
/// lambda_i - lambda_{i+1} clears it. The window then restarts at q_hat + 1;
/// the loop stops at a fixed point or after 10 rounds.
Index estimate_num_factors(const Dataset& data, Index q_max);
Index estimate_num_factors_from_eigenvalues(const Vector& eigenvalues, Index q_max);

/// Principal-component loadings: column j is sqrt(lambda_j) * xi_j.
FactorEstimate estimate_loadings_pca(const Dataset& data, Index q);
FactorEstimate estimate_loadings_pca(const Matrix& centered_x, const Spectrum& spectrum, Index q);

struct EmOptions {
    double tol = 1e-8;        // relative log-likelihood change
    int max_iter = 1000;
    double floor_ratio = 1e-6;  // uniqueness floor relative to var(X_i)
};

/// Gaussian factor-analysis maximum likelihood via EM, started from PCA.
/// Requires n > p. Throws ConvergenceError when the tolerance is not met.
FactorEstimate estimate_loadings_mle(const Dataset& data, Index q, const EmOptions& opts = {});
FactorEstimate estimate_loadings_mle(const Matrix& centered_x, const Spectrum& spectrum, Index q,
                                     const EmOptions& opts = {});

/// Gaussian log-likelihood of covariance loadings * loadings^T + diag(psi)
/// for a sample covariance `s` (divisor n) from n observations.
double factor_loglik(const Matrix& s, const Matrix& loadings, const Vector& psi, Index n);

/// Complement basis from the full SVD of the loadings (left singular vectors
/// q+1..p), columns sign-normalized.
ComplementBasis null_space_basis(const FactorEstimate& estimate);
ComplementBasis null_space_basis(const Matrix& loadings);

}  // namespace siv
