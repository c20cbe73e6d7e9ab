#include "siv/cross_validation.hpp"

#include "siv/best_subset.hpp"
#include "siv/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace siv {

std::vector<std::vector<Index>> make_folds(Index n, Index folds, std::uint64_t seed) {
    if (folds < 2 || n < 2 * folds) {
        std::ostringstream msg;
        msg << "cross-validation needs folds >= 2 and n >= 2*folds, got n=" << n << " folds=" << folds;
        throw DimensionError(msg.str());
    }
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    std::mt19937_64 rng(seed);
    for (Index i = n - 1; i > 0; --i) {
        std::uniform_int_distribution<Index> pick(0, i);
        std::swap(perm[i], perm[pick(rng)]);
    }
    std::vector<std::vector<Index>> out(static_cast<std::size_t>(folds));
    for (Index f = 0; f < folds; ++f) {
        const Index lo = f * n / folds;
        const Index hi = (f + 1) * n / folds;
        out[f].assign(perm.begin() + lo, perm.begin() + hi);
        std::sort(out[f].begin(), out[f].end());
    }
    return out;
}

std::vector<Index> training_rows(Index n, const std::vector<Index>& fold) {
    std::vector<Index> out;
    out.reserve(static_cast<std::size_t>(n) - fold.size());
    std::size_t next = 0;
    for (Index i = 0; i < n; ++i) {
        if (next < fold.size() && fold[next] == i) {
            ++next;
        } else {
            out.push_back(i);
        }
    }
    return out;
}

CvResult summarize_cv(const std::vector<Index>& k_grid, const std::vector<std::vector<double>>& losses) {
    if (k_grid.empty()) {
        throw InputError("cross-validation grid is empty");
    }
    CvResult out;
    out.table.reserve(k_grid.size());
    double best_mean = std::numeric_limits<double>::infinity();
    Index best_k = k_grid.front();
    for (std::size_t g = 0; g < k_grid.size(); ++g) {
        const auto& row = losses[g];
        const double m = static_cast<double>(row.size());
        const double mean = std::accumulate(row.begin(), row.end(), 0.0) / m;
        double ss = 0.0;
        for (double v : row) {
            ss += (v - mean) * (v - mean);
        }
        const double sd = row.size() > 1 ? std::sqrt(ss / (m - 1.0)) : 0.0;
        out.table.push_back({k_grid[g], mean, sd});
        if (mean < best_mean || (mean == best_mean && k_grid[g] < best_k)) {
            best_mean = mean;
            best_k = k_grid[g];
        }
    }
    out.k_hat = best_k;
    return out;
}

namespace {

struct FoldData {
    GramProblem train;
    Matrix x_val;
    Vector y_val;
};

FoldData prepare_fold(const GramProblem& full, const Matrix& x_hat, const Vector& y,
                      const std::vector<Index>& fold) {
    FoldData fd;
    fd.x_val = take_rows(x_hat, fold);
    fd.y_val = take_rows(y, fold);
    fd.train = full.without_rows(fd.x_val, fd.y_val);
    return fd;
}

double heldout_mse(const FoldData& fd, const Vector& beta) {
    return (fd.y_val - fd.x_val * beta).squaredNorm() / static_cast<double>(fd.y_val.size());
}

Index grid_max(const std::vector<Index>& k_grid) {
    return *std::max_element(k_grid.begin(), k_grid.end());
}

void check_grid(const std::vector<Index>& k_grid, Index p) {
    if (k_grid.empty()) {
        throw InputError("cross-validation grid is empty");
    }
    for (Index k : k_grid) {
        if (k < 0 || k > p) {
            std::ostringstream msg;
            msg << "grid value k=" << k << " outside [0, " << p << "]";
            throw DimensionError(msg.str());
        }
    }
}

}  // namespace

CvResult cross_validate_k_serial(const Matrix& x_hat, const Vector& y, const std::vector<Index>& k_grid,
                                 const CvOptions& opts) {
    check_grid(k_grid, x_hat.cols());
    const auto folds = make_folds(x_hat.rows(), opts.folds, opts.seed);
    const GramProblem full = GramProblem::from_data(x_hat, y);
    const bool exhaustive = x_hat.cols() <= std::min(opts.exhaustive_max_p, kExhaustiveMaxP);

    std::vector<std::vector<double>> losses(k_grid.size(), std::vector<double>(folds.size()));
    for (std::size_t f = 0; f < folds.size(); ++f) {
        const FoldData fd = prepare_fold(full, x_hat, y, folds[f]);
        if (exhaustive) {
            const auto path = best_subset_path(fd.train, grid_max(k_grid));
            for (std::size_t g = 0; g < k_grid.size(); ++g) {
                losses[g][f] = heldout_mse(fd, path[k_grid[g]].beta);
            }
        } else {
            for (std::size_t g = 0; g < k_grid.size(); ++g) {
                const SubsetFit fit = best_subset_splicing(fd.train, k_grid[g]);
                losses[g][f] = heldout_mse(fd, fit.beta);
            }
        }
    }
    return summarize_cv(k_grid, losses);
}

CvResult cross_validate_k(const Matrix& x_hat, const Vector& y, const std::vector<Index>& k_grid,
                          const CvOptions& opts) {
    bool parallel = opts.policy == ExecutionPolicy::Parallel;
#ifdef _OPENMP
    parallel = parallel && !omp_in_parallel() && omp_get_max_threads() > 1;
#else
    parallel = false;
#endif
    if (!parallel) {
        return cross_validate_k_serial(x_hat, y, k_grid, opts);
    }

    check_grid(k_grid, x_hat.cols());
    const auto folds = make_folds(x_hat.rows(), opts.folds, opts.seed);
    const GramProblem full = GramProblem::from_data(x_hat, y);
    const bool exhaustive = x_hat.cols() <= std::min(opts.exhaustive_max_p, kExhaustiveMaxP);
    const auto n_folds = static_cast<Index>(folds.size());
    const auto n_grid = static_cast<Index>(k_grid.size());

    std::vector<FoldData> prepared(folds.size());
#pragma omp parallel for schedule(static)
    for (Index f = 0; f < n_folds; ++f) {
        prepared[f] = prepare_fold(full, x_hat, y, folds[f]);
    }

    std::vector<std::vector<double>> losses(k_grid.size(), std::vector<double>(folds.size()));
    if (exhaustive) {
        const Index k_top = grid_max(k_grid);
#pragma omp parallel for schedule(dynamic)
        for (Index f = 0; f < n_folds; ++f) {
            const auto path = best_subset_path(prepared[f].train, k_top);
            for (Index g = 0; g < n_grid; ++g) {
                losses[g][f] = heldout_mse(prepared[f], path[k_grid[g]].beta);
            }
        }
    } else {
        // One task per (grid entry, fold); each writes its own slot.
        const Index tasks = n_folds * n_grid;
#pragma omp parallel for schedule(dynamic)
        for (Index t = 0; t < tasks; ++t) {
            const Index g = t / n_folds;
            const Index f = t % n_folds;
            const SubsetFit fit = best_subset_splicing(prepared[f].train, k_grid[g]);
            losses[g][f] = heldout_mse(prepared[f], fit.beta);
        }
    }
    return summarize_cv(k_grid, losses);
}

}  // namespace siv
