#pragma once

#include "siv/common.hpp"

namespace siv {

/// Sufficient statistics of a least-squares problem ||y - A b||^2:
/// gram = A^T A, cross = A^T y, yy = y^T y. Population problems are expressed
/// the same way with second moments in place of sums.
struct GramProblem {
    Matrix gram;
    Vector cross;
    double yy = 0.0;
    Index n = 0;

    Index p() const noexcept { return gram.rows(); }

    static GramProblem from_data(const Matrix& a, const Vector& y);

    /// Statistics with the given rows removed (used for cross-validation
    /// training folds).
    GramProblem without_rows(const Matrix& a_rows, const Vector& y_rows) const;
};

struct SubsetFit {
    Support support;  // sorted ascending
    Vector beta;      // length p, zero off the support
    double loss = 0.0;
    int passes = 0;
    Diagnostics diagnostics;
};

/// Least-squares fit restricted to `support` (sorted). Returns the residual
/// sum of squares and writes the coefficients on the support.
double support_loss(const GramProblem& problem, const Support& support, Vector* coef = nullptr);

/// Residual sum of squares of an arbitrary coefficient vector.
double coefficient_loss(const GramProblem& problem, const Vector& beta);

/// Largest p accepted by the exhaustive search.
inline constexpr Index kExhaustiveMaxP = 25;

/// Global minimizer of ||y - A b||^2 over supports of size <= k, by
/// enumeration. Ties between sizes go to the sparser support; ties within a
/// size go to the lexicographically first support.
SubsetFit best_subset_exhaustive(const GramProblem& problem, Index k,
                                 ExecutionPolicy policy = ExecutionPolicy::Serial);
SubsetFit best_subset_exhaustive(const Matrix& x_hat, const Vector& y, Index k);

/// Solutions for every bound 0..k_max from a single enumeration. Entry j is
/// the best fit with at most j nonzeros, so losses are nonincreasing in j.
std::vector<SubsetFit> best_subset_path(const GramProblem& problem, Index k_max,
                                        ExecutionPolicy policy = ExecutionPolicy::Serial);

struct SplicingOptions {
    Index c_max = 2;            // capped at k
    int max_passes = 50;
    double min_improvement = 1e-12;  // relative to y^T y
    bool swap_scan = true;  // scan every single exchange before stopping
};

struct Sacrifices {
    Vector backward;  // loss increase from dropping an active column (0 for inactive)
    Vector forward;   // loss decrease from adding an inactive column (0 for active)
};

/// Exact one-column sacrifices at the least-squares fit on `active`, given the
/// full Gram matrix G = A^T A and d = A^T r for the current residual r.
/// backward_j = beta_j^2 / [(G_AA)^-1]_jj, forward_j = d_j^2 / (G_jj - G_jA G_AA^-1 G_Aj).
/// Columns whose partialled-out norm is below `floor` get a zero score.
Sacrifices exact_sacrifices(const Matrix& gram, const Vector& d, const Vector& beta, const Support& active,
                            double floor);

struct SwapMove {
    Index out = -1;
    Index in = -1;
    double decrease = 0.0;  // predicted loss decrease, <= 0 when no swap helps
};

/// Best one-for-one exchange at the least-squares fit on `active`, evaluated
/// exactly for every (active, inactive) pair from rank-one updates of
/// (G_AA)^-1, in O(k p) after the factorization.
SwapMove best_single_swap(const Matrix& gram, const Vector& d, const Vector& beta, const Support& active,
                          double floor);

/// Splicing local search for the l0-constrained least-squares problem.
///
/// The active set starts at the k columns most correlated with y. Each pass
/// scores active columns by the loss increase from dropping them and inactive
/// columns by the loss decrease from adding them, both at the current fit, then
/// tries exchanging the C worst active for the C best inactive (C = 1..c_max)
/// and keeps the largest strict improvement. When none of those improve and
/// swap_scan is set, every single exchange is tried before stopping, so the
/// result is a local optimum under one-for-one swaps.
SubsetFit best_subset_splicing(const GramProblem& problem, Index k, const SplicingOptions& opts = {});
SubsetFit best_subset_splicing(const Matrix& x_hat, const Vector& y, Index k,
                               const SplicingOptions& opts = {});

/// Dispatches to the exhaustive search for p <= exhaustive_max_p and to
/// splicing otherwise.
SubsetFit best_subset(const GramProblem& problem, Index k, Index exhaustive_max_p = kExhaustiveMaxP);

}  // namespace siv
