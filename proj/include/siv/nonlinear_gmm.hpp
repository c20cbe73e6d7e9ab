#pragma once

#include "siv/common.hpp"
#include "siv/cross_validation.hpp"
#include "siv/dataset.hpp"
#include "siv/link.hpp"
#include "siv/siv_estimator.hpp"

#include <optional>

namespace siv {

enum class ProjectionMode {
    Onto,        // coordinates Q^T r on an orthonormal basis Q
    Complement,  // r - Q Q^T r
};

/// Linear map applied to residuals before taking the squared norm.
struct Projection {
    Matrix basis;  // n x r, orthonormal columns
    ProjectionMode mode = ProjectionMode::Onto;

    Vector apply(const Vector& r) const;
    Matrix apply(const Matrix& a) const;
};

/// min over beta supported on a given set of ||P (y - f(X; beta))||^2.
struct ProjectedNls {
    const Matrix& x;
    const Vector& y;
    const LinkFamily& link;
    const Projection& projection;
};

struct GaussNewtonOptions {
    int max_iter = 200;
    double grad_tol = 1e-10;  // relative to ||P J|| ||P y||
    int max_halvings = 30;
};

struct NonlinearFit {
    Support support;
    Vector beta;  // length p
    double loss = 0.0;
    int iterations = 0;
    bool converged = true;
    std::vector<double> loss_trace;  // objective after each accepted step, starting at beta = 0
    Diagnostics diagnostics;
};

/// Damped Gauss-Newton on one support, started at beta = 0. Each step solves
/// the linearized least-squares problem and is halved until the objective
/// decreases.
NonlinearFit solve_on_support(const ProjectedNls& problem, const Support& support,
                              const GaussNewtonOptions& opts = {});

struct NonlinearSplicingOptions {
    Index c_max = 2;
    int max_passes = 50;
    double min_improvement = 1e-12;  // relative to ||P y||^2
    bool swap_scan = true;           // as in SplicingOptions
    GaussNewtonOptions gn;
};

/// l0-constrained projected nonlinear least squares. Sacrifices are computed
/// from the Jacobian at the current iterate; candidate supports are refit by
/// solve_on_support.
NonlinearFit nonlinear_splicing(const ProjectedNls& problem, Index k, const NonlinearSplicingOptions& opts = {});

/// Weighted moment problem for the empirical GMM loss.
struct GmmProblem {
    Matrix siv;
    Matrix weight;
    LinkFamily link;
    Index k = 0;
};

/// G_n(beta) = m^T W m with m = SIV^T (y - f(X; beta)) / n.
double gmm_loss(const Vector& beta, const GmmProblem& problem, const Matrix& x, const Vector& y);

/// Gradient of G_n: -2 (SIV^T J / n)^T W m with J the link Jacobian.
Vector gmm_gradient(const Vector& beta, const GmmProblem& problem, const Matrix& x, const Vector& y);

/// 1e-8 * trace(Cov(SIV)) / number of instruments.
double default_ridge(const Matrix& siv);

/// (Cov(SIV) + ridge I)^-1 with Cov computed from centered columns and
/// divisor n. The default ridge is used when none is given.
Matrix weight_matrix(const Matrix& siv, std::optional<double> ridge = std::nullopt);

struct NonlinearOptions {
    SivOptions siv;
    NonlinearSplicingOptions splicing;
};

/// Held-out moment loss for each k: the second stage is fit on the training
/// rows and G_n is evaluated on the validation rows with the training-fold
/// weight matrix.
CvResult cross_validate_k_nonlinear(const Matrix& x, const Vector& y, const Matrix& siv, const LinkFamily& link,
                                    const std::vector<Index>& k_grid, const CvOptions& cv,
                                    const NonlinearSplicingOptions& opts = {});
CvResult cross_validate_k_nonlinear_serial(const Matrix& x, const Vector& y, const Matrix& siv,
                                           const LinkFamily& link, const std::vector<Index>& k_grid,
                                           const CvOptions& cv, const NonlinearSplicingOptions& opts = {});

/// Synthetic nonlinear two-stage estimator: factor stage and SIV as in
/// fit_siv, then min ||P_SIV (Y - f(X; beta))||^2 subject to ||beta||_0 <= k.
/// The link is evaluated on X as given; the instruments use centered X.
FitResult fit_nonlinear_siv(const Dataset& data, const LinkFamily& link, const NonlinearOptions& opts = {});

}  // namespace siv
