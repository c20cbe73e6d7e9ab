#include "siv/siv_estimator.hpp"

#include "siv/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace siv {

const char* to_string(LoadingChoice c) {
    switch (c) {
        case LoadingChoice::PCA:
            return "pca";
        case LoadingChoice::MLE:
            return "mle";
        default:
            return "auto";
    }
}

SivBundle build_siv(const Matrix& xc, const ComplementBasis& complement) {
    const Index p = xc.cols();
    if (complement.basis.rows() != p) {
        std::ostringstream msg;
        msg << "complement basis has " << complement.basis.rows() << " rows for p=" << p;
        throw DimensionError(msg.str());
    }
    SivBundle out;
    out.siv = xc * complement.basis;
    const Index width = out.siv.cols();
    if (width == p) {
        // B spans everything, so the projection of X onto col(XB) is X itself.
        const auto cb = linalg::column_basis(out.siv);
        out.projector_rank = cb.rank;
        out.instrument_basis = cb.basis;
        out.x_hat = xc;
    } else {
        auto cb = linalg::column_basis(out.siv);
        out.projector_rank = cb.rank;
        out.instrument_basis = std::move(cb.basis);
        out.x_hat = out.instrument_basis * (out.instrument_basis.transpose() * xc);
    }
    out.diagnostics.values["projector_rank"] = static_cast<double>(out.projector_rank);
    if (out.projector_rank < width) {
        std::ostringstream msg;
        msg << "RankWarning: synthetic instruments have rank " << out.projector_rank << " < " << width
            << "; projecting on the effective rank";
        out.diagnostics.warn(msg.str());
    }
    return out;
}

SivBundle build_siv(const Dataset& data, const ComplementBasis& complement) {
    return build_siv(data.centered() ? data.x() : center_columns(data.x()), complement);
}

std::vector<Index> default_k_grid(Index n, Index p, Index q_hat, std::optional<Index> k_max) {
    Index top = k_max ? *k_max : std::min<Index>({p - q_hat, n / 2, 50});
    top = std::clamp<Index>(top, 0, p);
    std::vector<Index> grid(static_cast<std::size_t>(top + 1));
    std::iota(grid.begin(), grid.end(), Index{0});
    return grid;
}

FactorStage run_factor_stage(const Matrix& xc, const SivOptions& opts) {
    const Index n = xc.rows();
    const Index p = xc.cols();
    FactorStage out;

    Index q_hat = 0;
    Spectrum spectrum;
    if (opts.q) {
        q_hat = *opts.q;
        if (q_hat < 0 || q_hat >= p) {
            std::ostringstream msg;
            msg << "forced q=" << q_hat << " must lie in [0, " << p - 1 << "]";
            throw RankError(msg.str());
        }
        spectrum = covariance_spectrum(xc, q_hat);
    } else {
        const Index q_max = opts.q_max ? *opts.q_max : default_max_factors(n, p);
        out.diagnostics.values["q_max"] = static_cast<double>(q_max);
        spectrum = covariance_spectrum(xc, q_max);
        q_hat = estimate_num_factors_from_eigenvalues(spectrum.values, q_max);
    }

    if (q_hat == 0) {
        out.factors.q_hat = 0;
        out.factors.loadings = Matrix(p, 0);
        out.factors.eigenvalues = spectrum.values;
        out.factors.uniquenesses =
            xc.colwise().squaredNorm().transpose() / static_cast<double>(n - 1);
        out.factors.method = LoadingMethod::PCA;
        out.complement = null_space_basis(out.factors.loadings);
        out.diagnostics.notes["loading_method"] = "none";
        return out;
    }

    bool use_mle = opts.loadings == LoadingChoice::MLE ||
                   (opts.loadings == LoadingChoice::Auto && n > p);
    if (use_mle && n <= p) {
        throw DimensionError("maximum-likelihood loadings need n > p");
    }
    if (use_mle) {
        try {
            out.factors = estimate_loadings_mle(xc, spectrum, q_hat, opts.em);
        } catch (const ConvergenceError& e) {
            out.diagnostics.warn(std::string("ConvergenceWarning: ") + e.what() +
                                 "; using PCA loadings");
            use_mle = false;
        }
    }
    if (!use_mle) {
        out.factors = estimate_loadings_pca(xc, spectrum, q_hat);
    }
    out.diagnostics.notes["loading_method"] = to_string(out.factors.method);
    out.diagnostics.merge(out.factors.diagnostics, "factor.");
    out.complement = null_space_basis(out.factors);
    return out;
}

FitResult fit_siv(const Dataset& data, const SivOptions& opts) {
    const Dataset dc = data.centered() ? data : data.centered_copy();
    const Matrix& xc = dc.x();
    const Vector& yc = dc.y();
    const Index n = dc.n();
    const Index p = dc.p();

    FitResult out;
    FactorStage stage = run_factor_stage(xc, opts);
    out.q_hat = stage.factors.q_hat;
    out.diagnostics.merge(stage.diagnostics);

    SivBundle bundle = build_siv(xc, stage.complement);
    out.diagnostics.merge(bundle.diagnostics);

    std::vector<Index> grid;
    if (opts.k) {
        grid = {*opts.k};
    } else if (!opts.k_grid.empty()) {
        grid = opts.k_grid;
    } else {
        grid = default_k_grid(n, p, out.q_hat, opts.k_max);
    }
    for (Index k : grid) {
        if (k < 0 || k > p) {
            std::ostringstream msg;
            msg << "k=" << k << " outside [0, " << p << "]";
            throw DimensionError(msg.str());
        }
    }

    if (grid.size() == 1) {
        out.k_hat = grid.front();
    } else {
        CvOptions cv;
        cv.folds = opts.folds;
        cv.seed = opts.seed;
        cv.exhaustive_max_p = opts.exhaustive_max_p;
        cv.policy = opts.policy;
        const CvResult res = cross_validate_k(bundle.x_hat, yc, grid, cv);
        out.k_hat = res.k_hat;
        out.cv_table = res.table;
    }

    const GramProblem full = GramProblem::from_data(bundle.x_hat, yc);
    SubsetFit fit = best_subset(full, out.k_hat, opts.exhaustive_max_p);
    out.diagnostics.merge(fit.diagnostics);
    out.beta = std::move(fit.beta);
    out.support = std::move(fit.support);
    out.identifiable = out.q_hat + out.k_hat < p;
    out.diagnostics.values["second_stage_loss"] = fit.loss / static_cast<double>(n);
    out.diagnostics.notes["solver"] =
        p <= std::min(opts.exhaustive_max_p, kExhaustiveMaxP) ? "exhaustive" : "splicing";
    return out;
}

GramProblem population_second_stage(const Matrix& sigma, const Vector& cov_xy, double var_y,
                                    const Matrix& complement) {
    const Matrix sb = sigma * complement;              // p x r
    const Matrix inner = complement.transpose() * sb;  // r x r
    Eigen::LLT<Matrix> llt(inner);
    if (llt.info() != Eigen::Success) {
        throw RankError("B^T Sigma B is not positive definite");
    }
    const Matrix m = sb * llt.solve(complement.transpose());  // p x p
    GramProblem out;
    out.gram = m * sigma * m.transpose();
    out.gram = 0.5 * (out.gram + out.gram.transpose()).eval();
    out.cross = m * cov_xy;
    out.yy = var_y;
    out.n = 1;
    return out;
}

Matrix precision_times_loadings(const Matrix& xc, const FactorEstimate& factors) {
    const Index n = xc.rows();
    const Index p = xc.cols();
    const Matrix& lambda = factors.loadings;
    if (n > p) {
        Matrix cov = Matrix::Zero(p, p);
        cov.selfadjointView<Eigen::Lower>().rankUpdate(xc.transpose(), 1.0 / static_cast<double>(n - 1));
        cov.triangularView<Eigen::StrictlyUpper>() = cov.transpose();
        Eigen::LLT<Matrix> llt(cov);
        if (llt.info() == Eigen::Success) {
            return llt.solve(lambda);
        }
        Matrix out(p, lambda.cols());
        for (Index j = 0; j < lambda.cols(); ++j) {
            out.col(j) = linalg::solve_gram(cov, lambda.col(j));
        }
        return out;
    }
    // (L L^T + D)^-1 L = D^-1 L (I + L^T D^-1 L)^-1
    const Vector d_inv = factors.uniquenesses.cwiseInverse();
    const Matrix a = d_inv.asDiagonal() * lambda;
    const Matrix core = Matrix::Identity(lambda.cols(), lambda.cols()) + lambda.transpose() * a;
    return core.llt().solve(a.transpose()).transpose();
}

SubmatrixReport sample_submatrix_diagnostic(const Dataset& data, const FactorEstimate& factors,
                                                 Index trials, std::uint64_t seed) {
    SubmatrixReport report;
    const Index q = factors.loadings.cols();
    if (trials <= 0 || q == 0) {
        report.min_abs_det = std::numeric_limits<double>::quiet_NaN();
        return report;
    }
    const Matrix xc = data.centered() ? data.x() : center_columns(data.x());
    const Matrix prod = precision_times_loadings(xc, factors);
    const Index p = prod.rows();

    std::mt19937_64 rng(seed);
    std::vector<Index> pool(static_cast<std::size_t>(p));
    report.trials = trials;
    report.min_abs_det = std::numeric_limits<double>::infinity();
    report.abs_dets.reserve(static_cast<std::size_t>(trials));
    Matrix sub(q, q);
    for (Index t = 0; t < trials; ++t) {
        std::iota(pool.begin(), pool.end(), Index{0});
        for (Index i = 0; i < q; ++i) {
            std::uniform_int_distribution<Index> pick(i, p - 1);
            std::swap(pool[i], pool[pick(rng)]);
            sub.row(i) = prod.row(pool[i]);
        }
        const double det = std::abs(sub.determinant());
        report.abs_dets.push_back(det);
        report.min_abs_det = std::min(report.min_abs_det, det);
    }
    return report;
}

}  // namespace siv
