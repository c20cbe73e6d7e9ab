#include "siv/dataset.hpp"

#include <cmath>
#include <sstream>

namespace siv {

void Diagnostics::merge(const Diagnostics& other, const std::string& prefix) {
    for (const auto& [key, value] : other.values) {
        values[prefix + key] = value;
    }
    for (const auto& w : other.warnings) {
        warnings.push_back(prefix.empty() ? w : prefix + w);
    }
    for (const auto& [key, value] : other.notes) {
        notes[prefix + key] = value;
    }
}

namespace {

constexpr double kCenteredTolerance = 1e-10;

void validate(const Matrix& x, const Vector& y) {
    if (x.rows() < 2 || x.cols() < 2) {
        std::ostringstream msg;
        msg << "dataset needs n >= 2 and p >= 2, got n=" << x.rows() << " p=" << x.cols();
        throw DimensionError(msg.str());
    }
    if (y.size() != x.rows()) {
        std::ostringstream msg;
        msg << "X has " << x.rows() << " rows but Y has " << y.size() << " entries";
        throw DimensionError(msg.str());
    }
    if (!x.allFinite()) {
        throw InputError("X contains NaN or Inf entries");
    }
    if (!y.allFinite()) {
        throw InputError("Y contains NaN or Inf entries");
    }
}

}  // namespace

Dataset::Dataset(Matrix x, Vector y, std::optional<Vector> true_beta)
    : x_(std::move(x)), y_(std::move(y)), true_beta_(std::move(true_beta)) {
    validate(x_, y_);
    if (true_beta_ && true_beta_->size() != x_.cols()) {
        throw DimensionError("true_beta length does not match the number of exposures");
    }
    x_means_ = Vector::Zero(x_.cols());
    const Vector col_means = x_.colwise().mean();
    const double scale = std::max(1.0, x_.cwiseAbs().maxCoeff());
    centered_ = col_means.cwiseAbs().maxCoeff() <= kCenteredTolerance * scale &&
                std::abs(y_.mean()) <= kCenteredTolerance * std::max(1.0, y_.cwiseAbs().maxCoeff());
}

Dataset Dataset::centered_copy() const {
    Dataset out = *this;
    const Vector means = x_.colwise().mean();
    out.x_.rowwise() -= means.transpose();
    out.y_mean_ = y_.mean();
    out.y_.array() -= out.y_mean_;
    out.x_means_ = x_means_ + means;
    out.y_mean_ += y_mean_;
    out.centered_ = true;
    return out;
}

Dataset Dataset::rows(const std::vector<Index>& idx) const {
    Dataset out = *this;
    out.x_ = take_rows(x_, idx);
    out.y_ = take_rows(y_, idx);
    return out;
}

Matrix center_columns(const Matrix& x) {
    Matrix out = x;
    out.rowwise() -= x.colwise().mean();
    return out;
}

Matrix take_rows(const Matrix& x, const std::vector<Index>& idx) {
    Matrix out(static_cast<Index>(idx.size()), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out.row(static_cast<Index>(i)) = x.row(idx[i]);
    }
    return out;
}

Vector take_rows(const Vector& v, const std::vector<Index>& idx) {
    Vector out(static_cast<Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out(static_cast<Index>(i)) = v(idx[i]);
    }
    return out;
}

}  // namespace siv
