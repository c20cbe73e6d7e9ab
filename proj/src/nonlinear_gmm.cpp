#include "siv/nonlinear_gmm.hpp"

#include "siv/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace siv {

Vector Projection::apply(const Vector& r) const {
    if (mode == ProjectionMode::Onto) {
        return basis.transpose() * r;
    }
    return r - basis * (basis.transpose() * r);
}

Matrix Projection::apply(const Matrix& a) const {
    if (mode == ProjectionMode::Onto) {
        return basis.transpose() * a;
    }
    return a - basis * (basis.transpose() * a);
}

namespace {

// Columns of the Jacobian restricted to `support`.
Matrix support_jacobian(const LinkFamily& link, const Matrix& x, const Vector& beta, const Support& support) {
    const Index n = x.rows();
    const Index k = static_cast<Index>(support.size());
    Matrix out(n, k);
    switch (link.kind) {
        case LinkKind::Linear:
            for (Index t = 0; t < k; ++t) out.col(t) = x.col(support[t]);
            return out;
        case LinkKind::CubicPower:
            for (Index t = 0; t < k; ++t) out.col(t) = x.col(support[t]).array().cube();
            return out;
        case LinkKind::Exponential: {
            const Vector scale = (x * beta).array().min(kExpClamp).max(-kExpClamp).exp();
            for (Index t = 0; t < k; ++t) out.col(t) = scale.cwiseProduct(x.col(support[t]));
            return out;
        }
        default: {
            const Matrix full = link_jacobian(link, x, beta);
            for (Index t = 0; t < k; ++t) out.col(t) = full.col(support[t]);
            return out;
        }
    }
}

struct Evaluation {
    Vector residual;  // projected
    double loss = 0.0;
    Index clamped = 0;
};

Evaluation evaluate(const ProjectedNls& prob, const Vector& beta) {
    Evaluation e;
    const Vector f = link_values(prob.link, prob.x, beta, &e.clamped);
    e.residual = prob.projection.apply(Vector(prob.y - f));
    e.loss = e.residual.squaredNorm();
    return e;
}

void check_support_bound(Index k, Index p) {
    if (k < 0 || k > p) {
        std::ostringstream msg;
        msg << "sparsity bound k=" << k << " outside [0, " << p << "]";
        throw DimensionError(msg.str());
    }
}

}  // namespace

NonlinearFit solve_on_support(const ProjectedNls& prob, const Support& support, const GaussNewtonOptions& opts) {
    const Index p = prob.x.cols();
    NonlinearFit fit;
    fit.support = support;
    fit.beta = Vector::Zero(p);
    Evaluation cur = evaluate(prob, fit.beta);
    Index clamped_max = cur.clamped;
    fit.loss_trace.push_back(cur.loss);
    if (support.empty()) {
        fit.loss = cur.loss;
        return fit;
    }
    const double scale_y = std::max(prob.projection.apply(prob.y).norm(), 1e-300);
    const bool linear = link_is_linear_in_beta(prob.link);
    Matrix a;
    fit.converged = false;
    int iter = 0;
    while (iter < opts.max_iter) {
        if (!linear || iter == 0) {
            a = prob.projection.apply(support_jacobian(prob.link, prob.x, fit.beta, support));
        }
        const Vector grad = a.transpose() * cur.residual;
        if (grad.norm() <= opts.grad_tol * std::max(a.norm() * scale_y, 1e-300)) {
            fit.converged = true;
            break;
        }
        ++iter;
        const Matrix gram = a.transpose() * a;
        const Vector step = linalg::solve_gram(gram, grad);
        double t = 1.0;
        bool accepted = false;
        Vector trial = fit.beta;
        for (int h = 0; h <= opts.max_halvings; ++h) {
            for (std::size_t s = 0; s < support.size(); ++s) {
                trial(support[s]) = fit.beta(support[s]) + t * step(static_cast<Index>(s));
            }
            Evaluation next = evaluate(prob, trial);
            if (next.loss < cur.loss) {
                const double drop = cur.loss - next.loss;
                fit.beta = trial;
                cur = std::move(next);
                fit.loss_trace.push_back(cur.loss);
                clamped_max = std::max(clamped_max, cur.clamped);
                accepted = true;
                if (drop <= 1e-15 * cur.loss) {
                    fit.converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            // No descent along the Gauss-Newton direction at machine precision.
            fit.converged = true;
        }
        if (fit.converged) {
            break;
        }
    }
    fit.iterations = iter;
    fit.loss = cur.loss;
    if (!fit.converged) {
        fit.diagnostics.warn("ConvergenceWarning: Gauss-Newton reached max_iter; returning best seen");
    }
    if (clamped_max > 0) {
        fit.diagnostics.values["exp_clamped_rows"] = static_cast<double>(clamped_max);
    }
    return fit;
}

NonlinearFit nonlinear_splicing(const ProjectedNls& prob, Index k, const NonlinearSplicingOptions& opts) {
    const Index p = prob.x.cols();
    check_support_bound(k, p);
    if (k == 0) {
        return solve_on_support(prob, {}, opts.gn);
    }
    if (k == p) {
        Support all(static_cast<std::size_t>(p));
        std::iota(all.begin(), all.end(), Index{0});
        return solve_on_support(prob, all, opts.gn);
    }
    Support everyone(static_cast<std::size_t>(p));
    std::iota(everyone.begin(), everyone.end(), Index{0});

    Matrix gram;
    auto column_scores = [&](const Vector& beta, const Vector& residual, Vector& diag, Vector& d) {
        const Matrix a = prob.projection.apply(support_jacobian(prob.link, prob.x, beta, everyone));
        gram = a.transpose() * a;
        diag = gram.diagonal();
        d = a.transpose() * residual;
    };
    const double diag_floor_ratio = 1e-14;

    Vector diag, d;
    {
        const Evaluation start = evaluate(prob, Vector::Zero(p));
        column_scores(Vector::Zero(p), start.residual, diag, d);
    }
    const double diag_floor = diag_floor_ratio * std::max(diag.maxCoeff(), 1e-300);
    Vector score = Vector::Zero(p);
    for (Index j = 0; j < p; ++j) {
        if (diag(j) > diag_floor) score(j) = std::abs(d(j)) / std::sqrt(diag(j));
    }
    Support ranked = everyone;
    std::stable_sort(ranked.begin(), ranked.end(), [&](Index a, Index b) { return score(a) > score(b); });
    Support active(ranked.begin(), ranked.begin() + k);
    std::sort(active.begin(), active.end());

    NonlinearFit fit = solve_on_support(prob, active, opts.gn);
    const double threshold = opts.min_improvement * std::max(prob.projection.apply(prob.y).squaredNorm(), 1e-300);
    const Index c_max = std::min({opts.c_max, k, p - k});
    Diagnostics inner;
    inner.merge(fit.diagnostics);

    bool converged = false;
    int pass = 0;
    while (pass < opts.max_passes) {
        ++pass;
        const Evaluation cur = evaluate(prob, fit.beta);
        column_scores(fit.beta, cur.residual, diag, d);
        const Sacrifices sac = exact_sacrifices(gram, d, fit.beta, fit.support, diag_floor);
        const Vector& backward = sac.backward;
        const Vector& forward = sac.forward;
        std::vector<char> in_active(static_cast<std::size_t>(p), 0);
        for (Index j : fit.support) in_active[j] = 1;
        Support inactive;
        for (Index j = 0; j < p; ++j) {
            if (!in_active[j]) inactive.push_back(j);
        }
        Support drop_order = fit.support;
        std::stable_sort(drop_order.begin(), drop_order.end(),
                         [&](Index a, Index b) { return backward(a) < backward(b); });
        Support add_order = inactive;
        std::stable_sort(add_order.begin(), add_order.end(),
                         [&](Index a, Index b) { return forward(a) > forward(b); });

        NonlinearFit best;
        best.loss = fit.loss;
        bool found = false;
        for (Index c = 1; c <= c_max; ++c) {
            std::vector<char> dropped(static_cast<std::size_t>(p), 0);
            for (Index t = 0; t < c; ++t) dropped[drop_order[t]] = 1;
            Support candidate;
            for (Index j : fit.support) {
                if (!dropped[j]) candidate.push_back(j);
            }
            for (Index t = 0; t < c; ++t) candidate.push_back(add_order[t]);
            std::sort(candidate.begin(), candidate.end());
            NonlinearFit trial = solve_on_support(prob, candidate, opts.gn);
            if (trial.loss < best.loss) {
                best = std::move(trial);
                found = true;
            }
        }
        if ((!found || fit.loss - best.loss < threshold) && opts.swap_scan) {
            for (Index out : fit.support) {
                for (Index in : inactive) {
                    Support candidate;
                    for (Index j : fit.support) {
                        if (j != out) candidate.push_back(j);
                    }
                    candidate.push_back(in);
                    std::sort(candidate.begin(), candidate.end());
                    NonlinearFit trial = solve_on_support(prob, candidate, opts.gn);
                    if (trial.loss < best.loss) {
                        best = std::move(trial);
                        found = true;
                    }
                }
            }
        }
        if (!found || fit.loss - best.loss < threshold) {
            converged = true;
            break;
        }
        fit = std::move(best);
        inner.merge(fit.diagnostics);
    }
    fit.diagnostics = inner;
    if (!converged) {
        fit.diagnostics.warn("ConvergenceWarning: nonlinear splicing hit the pass limit; returning best seen");
    }
    return fit;
}

double gmm_loss(const Vector& beta, const GmmProblem& problem, const Matrix& x, const Vector& y) {
    const Index n = x.rows();
    if (problem.siv.rows() != n || y.size() != n) {
        throw DimensionError("gmm_loss: row counts of SIV, X and Y differ");
    }
    if (problem.weight.rows() != problem.siv.cols() || problem.weight.cols() != problem.siv.cols()) {
        throw DimensionError("gmm_loss: weight matrix does not match the number of instruments");
    }
    const Vector r = y - link_values(problem.link, x, beta);
    const Vector m = problem.siv.transpose() * r / static_cast<double>(n);
    return std::max(m.dot(problem.weight * m), 0.0);
}

Vector gmm_gradient(const Vector& beta, const GmmProblem& problem, const Matrix& x, const Vector& y) {
    const Index n = x.rows();
    const Vector r = y - link_values(problem.link, x, beta);
    const Vector m = problem.siv.transpose() * r / static_cast<double>(n);
    const Matrix dm = -(problem.siv.transpose() * link_jacobian(problem.link, x, beta)) / static_cast<double>(n);
    return 2.0 * dm.transpose() * (problem.weight * m);
}

namespace {

Matrix instrument_covariance(const Matrix& siv) {
    const Matrix c = center_columns(siv);
    Matrix cov = Matrix::Zero(siv.cols(), siv.cols());
    cov.selfadjointView<Eigen::Lower>().rankUpdate(c.transpose(), 1.0 / static_cast<double>(siv.rows()));
    cov.triangularView<Eigen::StrictlyUpper>() = cov.transpose();
    return cov;
}

}  // namespace

double default_ridge(const Matrix& siv) {
    if (siv.cols() == 0) return 0.0;
    return 1e-8 * instrument_covariance(siv).trace() / static_cast<double>(siv.cols());
}

Matrix weight_matrix(const Matrix& siv, std::optional<double> ridge) {
    if (siv.rows() < 2) {
        throw DimensionError("weight matrix needs at least two rows");
    }
    const Index r = siv.cols();
    Matrix cov = instrument_covariance(siv);
    const double lam = ridge ? *ridge : 1e-8 * cov.trace() / static_cast<double>(std::max<Index>(r, 1));
    cov.diagonal().array() += lam;
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success) {
        throw RankError("instrument covariance is singular; use a positive ridge");
    }
    Matrix w = llt.solve(Matrix::Identity(r, r));
    return 0.5 * (w + w.transpose());
}

namespace {

struct NonlinearFold {
    Matrix x_train;
    Vector y_train;
    Projection projection;
    Matrix weight;
    Matrix x_val;
    Vector y_val;
    Matrix siv_val;  // centered within the fold
};

NonlinearFold prepare_nonlinear_fold(const Matrix& x, const Vector& y, const Matrix& siv, Index n,
                                     const std::vector<Index>& fold) {
    NonlinearFold fd;
    const std::vector<Index> train = training_rows(n, fold);
    fd.x_train = take_rows(x, train);
    fd.y_train = take_rows(y, train);
    const Matrix siv_train = center_columns(take_rows(siv, train));
    fd.projection.basis = linalg::column_basis(siv_train).basis;
    fd.projection.mode = ProjectionMode::Onto;
    fd.weight = weight_matrix(siv_train);
    fd.x_val = take_rows(x, fold);
    fd.y_val = take_rows(y, fold);
    fd.siv_val = center_columns(take_rows(siv, fold));
    return fd;
}

double heldout_moment_loss(const NonlinearFold& fd, const LinkFamily& link, const Vector& beta) {
    Vector r = fd.y_val - link_values(link, fd.x_val, beta);
    r.array() -= r.mean();
    const Vector m = fd.siv_val.transpose() * r / static_cast<double>(r.size());
    return std::max(m.dot(fd.weight * m), 0.0);
}

double fold_task(const NonlinearFold& fd, const LinkFamily& link, Index k, const NonlinearSplicingOptions& opts) {
    const ProjectedNls prob{fd.x_train, fd.y_train, link, fd.projection};
    const NonlinearFit fit = nonlinear_splicing(prob, k, opts);
    return heldout_moment_loss(fd, link, fit.beta);
}

void check_nonlinear_inputs(const Matrix& x, const Vector& y, const Matrix& siv, const std::vector<Index>& grid) {
    if (x.rows() != y.size() || siv.rows() != y.size()) {
        throw DimensionError("X, Y and SIV have different row counts");
    }
    if (grid.empty()) {
        throw InputError("cross-validation grid is empty");
    }
    for (Index k : grid) check_support_bound(k, x.cols());
}

}  // namespace

CvResult cross_validate_k_nonlinear_serial(const Matrix& x, const Vector& y, const Matrix& siv,
                                           const LinkFamily& link, const std::vector<Index>& k_grid,
                                           const CvOptions& cv, const NonlinearSplicingOptions& opts) {
    check_nonlinear_inputs(x, y, siv, k_grid);
    const auto folds = make_folds(x.rows(), cv.folds, cv.seed);
    std::vector<std::vector<double>> losses(k_grid.size(), std::vector<double>(folds.size()));
    for (std::size_t f = 0; f < folds.size(); ++f) {
        const NonlinearFold fd = prepare_nonlinear_fold(x, y, siv, x.rows(), folds[f]);
        for (std::size_t g = 0; g < k_grid.size(); ++g) {
            losses[g][f] = fold_task(fd, link, k_grid[g], opts);
        }
    }
    return summarize_cv(k_grid, losses);
}

CvResult cross_validate_k_nonlinear(const Matrix& x, const Vector& y, const Matrix& siv, const LinkFamily& link,
                                    const std::vector<Index>& k_grid, const CvOptions& cv,
                                    const NonlinearSplicingOptions& opts) {
    bool parallel = cv.policy == ExecutionPolicy::Parallel;
#ifdef _OPENMP
    parallel = parallel && !omp_in_parallel() && omp_get_max_threads() > 1;
#else
    parallel = false;
#endif
    if (!parallel || link.kind == LinkKind::Custom) {
        // Custom callbacks are not assumed to be thread-safe.
        return cross_validate_k_nonlinear_serial(x, y, siv, link, k_grid, cv, opts);
    }
    check_nonlinear_inputs(x, y, siv, k_grid);
    const auto folds = make_folds(x.rows(), cv.folds, cv.seed);
    const auto n_folds = static_cast<Index>(folds.size());
    const auto n_grid = static_cast<Index>(k_grid.size());
    std::vector<NonlinearFold> prepared(folds.size());
#pragma omp parallel for schedule(static)
    for (Index f = 0; f < n_folds; ++f) {
        prepared[f] = prepare_nonlinear_fold(x, y, siv, x.rows(), folds[f]);
    }
    std::vector<std::vector<double>> losses(k_grid.size(), std::vector<double>(folds.size()));
    const Index tasks = n_folds * n_grid;
#pragma omp parallel for schedule(dynamic)
    for (Index t = 0; t < tasks; ++t) {
        const Index g = t / n_folds;
        const Index f = t % n_folds;
        losses[g][f] = fold_task(prepared[f], link, k_grid[g], opts);
    }
    return summarize_cv(k_grid, losses);
}

FitResult fit_nonlinear_siv(const Dataset& data, const LinkFamily& link, const NonlinearOptions& opts) {
    const SivOptions& so = opts.siv;
    const Matrix& x = data.x();
    const Vector& y = data.y();
    const Index n = data.n();
    const Index p = data.p();
    const Matrix xc = data.centered() ? x : center_columns(x);

    FitResult out;
    FactorStage stage = run_factor_stage(xc, so);
    out.q_hat = stage.factors.q_hat;
    out.diagnostics.merge(stage.diagnostics);

    const Matrix siv = xc * stage.complement.basis;
    auto cb = linalg::column_basis(siv);
    out.diagnostics.values["projector_rank"] = static_cast<double>(cb.rank);
    if (cb.rank < siv.cols()) {
        std::ostringstream msg;
        msg << "RankWarning: synthetic instruments have rank " << cb.rank << " < " << siv.cols()
            << "; projecting on the effective rank";
        out.diagnostics.warn(msg.str());
    }
    Projection projection{std::move(cb.basis), ProjectionMode::Onto};

    std::vector<Index> grid;
    if (so.k) {
        grid = {*so.k};
    } else if (!so.k_grid.empty()) {
        grid = so.k_grid;
    } else {
        grid = default_k_grid(n, p, out.q_hat, so.k_max);
    }
    for (Index k : grid) check_support_bound(k, p);

    if (grid.size() == 1) {
        out.k_hat = grid.front();
    } else {
        CvOptions cv;
        cv.folds = so.folds;
        cv.seed = so.seed;
        cv.policy = so.policy;
        const CvResult res = cross_validate_k_nonlinear(x, y, siv, link, grid, cv, opts.splicing);
        out.k_hat = res.k_hat;
        out.cv_table = res.table;
    }

    const ProjectedNls prob{x, y, link, projection};
    NonlinearFit fit = nonlinear_splicing(prob, out.k_hat, opts.splicing);
    out.diagnostics.merge(fit.diagnostics);
    out.beta = std::move(fit.beta);
    out.support = std::move(fit.support);
    out.identifiable = out.q_hat + out.k_hat < p;

    GmmProblem gmm{siv, weight_matrix(siv), link, out.k_hat};
    out.diagnostics.values["gmm_loss"] = gmm_loss(out.beta, gmm, x, y);
    out.diagnostics.values["projected_loss"] = fit.loss / static_cast<double>(n);
    out.diagnostics.notes["link"] = to_string(link.kind);
    out.diagnostics.notes["cv_loss"] = "held-out moment loss G_n with the training-fold weight matrix";
    out.diagnostics.notes["assumptions"] =
        "identification and rank conditions on the link are assumed, not checked";
    return out;
}

}  // namespace siv
