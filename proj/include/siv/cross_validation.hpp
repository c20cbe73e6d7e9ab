#pragma once

#include "siv/common.hpp"

#include <cstdint>

namespace siv {

/// Row indices per fold from a seeded permutation; fold sizes differ by at
/// most one and each fold's indices are sorted.
std::vector<std::vector<Index>> make_folds(Index n, Index folds, std::uint64_t seed);

/// Complement of one fold in 0..n-1, sorted.
std::vector<Index> training_rows(Index n, const std::vector<Index>& fold);

struct CvRow {
    Index k = 0;
    double mean_loss = 0.0;
    double sd_loss = 0.0;
};

struct CvResult {
    Index k_hat = 0;
    std::vector<CvRow> table;
};

/// Reduces a (grid entry x fold) matrix of held-out losses. k_hat minimizes
/// the mean loss; exact ties go to the smaller k.
CvResult summarize_cv(const std::vector<Index>& k_grid, const std::vector<std::vector<double>>& losses);

struct CvOptions {
    Index folds = 10;
    std::uint64_t seed = 1;
    Index exhaustive_max_p = 25;
    ExecutionPolicy policy = ExecutionPolicy::Serial;
};

/// K-fold cross-validation of the l0 bound for the second-stage regression
/// of y on x_hat. The held-out loss is the mean squared prediction error on
/// the validation rows.
CvResult cross_validate_k(const Matrix& x_hat, const Vector& y, const std::vector<Index>& k_grid,
                          const CvOptions& opts = {});

/// Plain nested-loop version of cross_validate_k kept as the reference the
/// parallel kernel is checked against.
CvResult cross_validate_k_serial(const Matrix& x_hat, const Vector& y, const std::vector<Index>& k_grid,
                                 const CvOptions& opts = {});

}  // namespace siv
