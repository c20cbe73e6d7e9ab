#pragma once

#include "siv/best_subset.hpp"
#include "siv/common.hpp"
#include "siv/cross_validation.hpp"
#include "siv/dataset.hpp"
#include "siv/factor_model.hpp"

#include <cstdint>
#include <optional>

namespace siv {

/// Synthetic instruments and the first-stage projection of the exposures.
struct SivBundle {
    Matrix siv;               // n x (p - q_hat), centered X times B
    Matrix x_hat;             // n x p
    Index projector_rank = 0;
    Matrix instrument_basis;  // n x projector_rank, orthonormal basis of col(siv)
    Diagnostics diagnostics;
};

/// SIV = X B and x_hat = P X with P the projector onto col(SIV). X is centered
/// internally. A rank-deficient SIV is projected on its effective rank and
/// flagged with a RankWarning.
SivBundle build_siv(const Dataset& data, const ComplementBasis& complement);
SivBundle build_siv(const Matrix& centered_x, const ComplementBasis& complement);

enum class LoadingChoice { Auto, PCA, MLE };

const char* to_string(LoadingChoice c);

struct SivOptions {
    std::optional<Index> q;      // forces q_hat
    std::optional<Index> q_max;  // bound for the factor-count search
    std::optional<Index> k;      // forces k_hat, no cross-validation
    std::optional<Index> k_max;  // upper end of the default grid
    std::vector<Index> k_grid;   // explicit grid; overrides k_max
    Index folds = 10;
    std::uint64_t seed = 1;
    Index exhaustive_max_p = kExhaustiveMaxP;
    LoadingChoice loadings = LoadingChoice::Auto;
    ExecutionPolicy policy = ExecutionPolicy::Serial;
    EmOptions em;
};

struct FitResult {
    Vector beta;
    Support support;
    Index k_hat = 0;
    std::vector<CvRow> cv_table;
    bool identifiable = false;
    Index q_hat = 0;
    Diagnostics diagnostics;
};

/// Factor count, loadings and complement basis for centered X.
struct FactorStage {
    FactorEstimate factors;
    ComplementBasis complement;
    Diagnostics diagnostics;
};

/// Runs the factor part of the pipeline. MLE is used when n > p and PCA
/// otherwise (unless forced); an MLE that fails to converge falls back to PCA
/// with a warning.
FactorStage run_factor_stage(const Matrix& centered_x, const SivOptions& opts);

/// {0, 1, ..., min(p - q_hat, floor(n / 2), 50)}, or up to k_max when given.
std::vector<Index> default_k_grid(Index n, Index p, Index q_hat, std::optional<Index> k_max = {});

/// The synthetic two-stage regularized regression: factor stage, SIV,
/// first-stage projection, l0 second stage with k chosen by K-fold CV, refit at
/// k_hat on all rows, and the verdict identifiable = (q_hat + k_hat < p).
FitResult fit_siv(const Dataset& data, const SivOptions& opts = {});

/// Second-stage problem built from population moments: Sigma = Cov(X),
/// cov_xy = Cov(X, Y), var_y = Var(Y). With M = Sigma B (B^T Sigma B)^-1 B^T
/// the projected design has Gram M Sigma M^T and cross term M cov_xy.
GramProblem population_second_stage(const Matrix& sigma, const Vector& cov_xy, double var_y,
                                    const Matrix& complement);

/// Cov^-1(X) times the loadings: the sample inverse when n > p and the
/// factor-implied inverse (Woodbury on loadings and uniquenesses) otherwise.
Matrix precision_times_loadings(const Matrix& centered_x, const FactorEstimate& factors);

struct SubmatrixReport {
    Index trials = 0;
    double min_abs_det = 0.0;
    std::vector<double> abs_dets;
};

/// Sampled check that q x q row-submatrices of Cov^-1(X) Lambda are
/// invertible. Advisory only.
SubmatrixReport sample_submatrix_diagnostic(const Dataset& data, const FactorEstimate& factors,
                                                 Index trials, std::uint64_t seed = 1);

}  // namespace siv
