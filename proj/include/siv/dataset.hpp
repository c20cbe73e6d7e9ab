#pragma once

#include "siv/common.hpp"

#include <optional>

namespace siv {

/// Observed exposures X (n x p) and outcome Y (n), plus centering state.
class Dataset {
public:
    Dataset(Matrix x, Vector y, std::optional<Vector> true_beta = std::nullopt);

    const Matrix& x() const noexcept { return x_; }
    const Vector& y() const noexcept { return y_; }
    Index n() const noexcept { return x_.rows(); }
    Index p() const noexcept { return x_.cols(); }

    bool centered() const noexcept { return centered_; }
    const Vector& x_means() const noexcept { return x_means_; }
    double y_mean() const noexcept { return y_mean_; }

    const std::optional<Vector>& true_beta() const noexcept { return true_beta_; }

    /// Copy with every column of X and Y shifted to mean zero. The removed
    /// means are kept for reporting.
    Dataset centered_copy() const;

    /// Subset of rows; centering flags are carried over unchanged.
    Dataset rows(const std::vector<Index>& idx) const;

private:
    Matrix x_;
    Vector y_;
    bool centered_ = false;
    Vector x_means_;
    double y_mean_ = 0.0;
    std::optional<Vector> true_beta_;
};

/// Mean-zero copy of every column.
Matrix center_columns(const Matrix& x);

/// Selects rows by index.
Matrix take_rows(const Matrix& x, const std::vector<Index>& idx);
Vector take_rows(const Vector& v, const std::vector<Index>& idx);

}  // namespace siv
