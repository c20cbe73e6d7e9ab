#pragma once

#include "siv/common.hpp"
#include "siv/cross_validation.hpp"
#include "siv/dataset.hpp"
#include "siv/factor_model.hpp"
#include "siv/link.hpp"
#include "siv/nonlinear_gmm.hpp"
#include "siv/siv_estimator.hpp"

namespace siv {

// ---- Lasso -----------------------------------------------------------------

struct LassoOptions {
    Index n_lambda = 100;
    double lambda_min_ratio = 1e-4;
    std::vector<double> lambdas;  // overrides the default grid when non-empty; must be descending
    double tol = 1e-9;            // max coefficient change per sweep, standardized scale
    int max_sweeps = 100000;
    // Path truncation: stop once the deviance ratio exceeds max_dev_ratio or
    // grows by less than min_dev_gain (relative) from one lambda to the next.
    bool truncate = true;
    double max_dev_ratio = 0.999;
    double min_dev_gain = 1e-5;
    Index folds = 10;
    std::uint64_t seed = 1;
    ExecutionPolicy policy = ExecutionPolicy::Serial;
};

/// Solutions along a descending lambda grid for
///   (1 / 2n) ||y - b0 - X b||^2 + lambda ||b||_1
/// on centered, column-standardized X (divisor n). Columns with zero
/// variance keep a zero coefficient.
struct LassoPath {
    std::vector<double> lambdas;
    Matrix betas;               // p x L on the original scale
    Vector intercepts;          // length L, original scale
    Matrix betas_standardized;  // p x L
    Vector center;              // column means of X
    Vector scale;               // column sds of X (divisor n), 0 for constant columns
    Index fitted = 0;  // lambdas solved before truncation; the returned grid stops here
    std::vector<double> cv_mean;
    std::vector<double> cv_sd;
    Index selected = 0;  // index of lambda.min
};

/// lambda_max = max_j |x_j^T y| / n on the standardized scale.
double lasso_lambda_max(const Matrix& x, const Vector& y);

/// Path without cross-validation; cyclic coordinate descent with warm starts.
LassoPath lasso_path(const Matrix& x, const Vector& y, const LassoOptions& opts = {});

struct LassoFit {
    Vector beta;  // original scale, at lambda.min
    double intercept = 0.0;
    LassoPath path;
    Diagnostics diagnostics;
};

/// Path on all rows, then K-fold CV of held-out squared error over the same
/// lambdas; beta is taken at the minimizing lambda.
LassoFit lasso_cd(const Dataset& data, const LassoOptions& opts = {});
/// Reference implementation of the fold loop, always serial.
LassoFit lasso_cd_serial(const Dataset& data, const LassoOptions& opts = {});

// ---- IV-Lasso ----------------------------------------------------------------

struct IvLassoFit {
    Vector beta;
    Support support;
    Diagnostics diagnostics;
};

/// Two-stage least squares of y on X restricted to `support`, with the
/// columns of `siv` as instruments. If the support is larger than the
/// instrument rank, the `support.size() - rank` entries with the smallest
/// |ranking| are dropped first and an UnderidentifiedWarning is recorded.
IvLassoFit iv_on_support(const Dataset& data, const Matrix& siv, Support support, const Vector& ranking);

/// Lasso selects the support, then 2SLS on it with the synthetic instruments.
IvLassoFit iv_lasso(const Dataset& data, const Matrix& siv, const LassoOptions& opts = {});
IvLassoFit iv_lasso(const Dataset& data, const Matrix& siv, const LassoFit& lasso);

// ---- U-hat -------------------------------------------------------------------

enum class UhatTransform { Identity, Cube };

const char* to_string(UhatTransform t);

/// U-hat = Xc Cov(X)^-1 Lambda_hat, using the sample covariance when n > p
/// and the factor-implied covariance otherwise.
Matrix estimate_uhat(const Matrix& centered_x, const FactorEstimate& factors);

/// [1, T(U-hat)].
Matrix uhat_design(const Matrix& uhat, UhatTransform transform);

struct UhatFit {
    Vector beta;
    Support support;
    Vector gamma;  // coefficients on T(U-hat)
    double intercept = 0.0;
    double loss = 0.0;  // ||y - f(X; beta) - b0 - T(U-hat) gamma||^2 / n
    Index k_hat = 0;
    Index q_hat = 0;
    std::vector<CvRow> cv_table;
    Diagnostics diagnostics;
};

/// min over (beta, b0, gamma) of ||y - f(X; beta) - b0 - T(U-hat) gamma||^2
/// subject to ||beta||_0 <= k. The linear nuisance part is profiled out by
/// projecting onto the orthogonal complement of [1, T(U-hat)].
UhatFit uhat_fit(const Dataset& data, const Matrix& uhat, const LinkFamily& link, UhatTransform transform, Index k,
                 const NonlinearSplicingOptions& opts = {});

/// Held-out squared prediction error for each k; U-hat is estimated once on
/// all rows, the design is refit within each training fold.
CvResult cross_validate_k_uhat(const Dataset& data, const Matrix& uhat, const LinkFamily& link,
                               UhatTransform transform, const std::vector<Index>& k_grid, const CvOptions& cv,
                               const NonlinearSplicingOptions& opts = {});
CvResult cross_validate_k_uhat_serial(const Dataset& data, const Matrix& uhat, const LinkFamily& link,
                                      UhatTransform transform, const std::vector<Index>& k_grid,
                                      const CvOptions& cv, const NonlinearSplicingOptions& opts = {});

/// Full baseline: factor stage as in fit_siv, U-hat, k by CV on the default
/// grid (or the forced k / grid in opts), refit at k_hat.
UhatFit fit_uhat(const Dataset& data, const LinkFamily& link, UhatTransform transform,
                 const NonlinearOptions& opts = {});

}  // namespace siv
