#include "siv/baselines.hpp"

#include "siv/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace siv {

namespace {

bool run_parallel(ExecutionPolicy policy) {
#ifdef _OPENMP
    return policy == ExecutionPolicy::Parallel && !omp_in_parallel() && omp_get_max_threads() > 1;
#else
    (void)policy;
    return false;
#endif
}

struct Standardized {
    Matrix xs;
    Vector yc;
    Vector center;
    Vector scale;
    double y_mean = 0.0;
};

Standardized standardize(const Matrix& x, const Vector& y) {
    const Index n = x.rows();
    Standardized s;
    s.center = x.colwise().mean().transpose();
    s.xs = x.rowwise() - s.center.transpose();
    s.scale = (s.xs.colwise().squaredNorm() / static_cast<double>(n)).array().sqrt().transpose();
    const double top = s.scale.size() ? s.scale.maxCoeff() : 0.0;
    for (Index j = 0; j < s.xs.cols(); ++j) {
        if (s.scale(j) > 1e-12 * std::max(top, 1e-300)) {
            s.xs.col(j) /= s.scale(j);
        } else {
            s.scale(j) = 0.0;
            s.xs.col(j).setZero();
        }
    }
    s.y_mean = y.mean();
    s.yc = y.array() - s.y_mean;
    return s;
}

double soft_threshold(double z, double lambda) {
    if (z > lambda) return z - lambda;
    if (z < -lambda) return z + lambda;
    return 0.0;
}

// Coordinate descent state. With n >= p the gradient g = X^T r / n is kept
// through the Gram matrix (O(p) per update); otherwise the residual is kept
// (O(n) per update).
class CdState {
public:
    CdState(const Matrix& xs, const Vector& yc) : xs_(xs), inv_n_(1.0 / static_cast<double>(xs.rows())) {
        const Index p = xs.cols();
        beta_ = Vector::Zero(p);
        covariance_ = xs.rows() >= p;
        if (covariance_) {
            gram_ = Matrix::Zero(p, p);
            gram_.selfadjointView<Eigen::Lower>().rankUpdate(xs.transpose(), inv_n_);
            gram_.triangularView<Eigen::StrictlyUpper>() = gram_.transpose();
            grad0_ = xs.transpose() * yc * inv_n_;
            grad_ = grad0_;
            diag_ = gram_.diagonal();
        } else {
            grad0_ = xs.transpose() * yc * inv_n_;
            yc_ = yc;
            resid_ = yc;
            gram_cols_.resize(static_cast<std::size_t>(p));
            diag_ = xs.colwise().squaredNorm().transpose() * inv_n_;
        }
    }

    const Vector& beta() const { return beta_; }

    // One pass over `cols`; returns the largest coefficient change.
    double sweep(double lambda, const std::vector<Index>& cols) {
        double max_change = 0.0;
        for (Index j : cols) {
            const double old = beta_(j);
            const double g = covariance_ ? grad_(j) : xs_.col(j).dot(resid_) * inv_n_;
            const double updated = soft_threshold(g + diag_(j) * old, lambda) / diag_(j);
            if (updated != old) {
                const double delta = updated - old;
                if (covariance_) {
                    grad_.noalias() -= delta * gram_.col(j);
                } else {
                    resid_.noalias() -= delta * xs_.col(j);
                }
                beta_(j) = updated;
                max_change = std::max(max_change, std::abs(delta));
            }
        }
        return max_change;
    }

    // Moves toward the minimizer of the smooth problem on `active` with the
    // current signs, stopping where a coefficient first reaches zero; that
    // coefficient is dropped and the move repeated. Cyclic CD crawls when the
    // active columns are nearly collinear, this lands on the limit directly.
    void active_step(double lambda, std::vector<Index> active, int max_drops) {
        std::erase_if(active, [&](Index j) { return beta_(j) == 0.0; });
        Matrix full;
        Vector full_rhs;
        const auto k0 = static_cast<Index>(active.size());
        if (k0 == 0) return;
        full.resize(k0, k0);
        full_rhs.resize(k0);
        for (Index b = 0; b < k0; ++b) {
            const Index j = active[b];
            if (covariance_) {
                for (Index a = 0; a < k0; ++a) full(a, b) = gram_(active[a], j);
            } else {
                const Vector& col = cached_gram_col(j);
                for (Index a = 0; a < k0; ++a) full(a, b) = col(active[a]);
            }
            full_rhs(b) = grad0_(j);
        }
        Vector cur(k0);
        for (Index a = 0; a < k0; ++a) {
            cur(a) = beta_(active[a]);
            full_rhs(a) -= lambda * (cur(a) > 0.0 ? 1.0 : -1.0);
        }
        // Dropped coordinates are pinned at zero through a bordered solve on
        // the one factorization: x = z - W mu with W = G^-1 E_D, W_DD mu = z_D.
        const Eigen::LLT<Matrix> llt(full);
        if (llt.info() != Eigen::Success) return;
        const Vector z = llt.solve(full_rhs);
        std::vector<Index> dropped;
        Matrix w(k0, 0);
        bool moved = false;
        for (int drop = 0; drop <= max_drops; ++drop) {
            Vector target = z;
            if (!dropped.empty()) {
                const auto m = static_cast<Index>(dropped.size());
                Matrix wdd(m, m);
                Vector zd(m);
                for (Index r = 0; r < m; ++r) {
                    zd(r) = z(dropped[r]);
                    for (Index c = 0; c < m; ++c) wdd(r, c) = w(dropped[r], c);
                }
                target.noalias() -= w * wdd.partialPivLu().solve(zd);
                for (Index d : dropped) target(d) = 0.0;
            }
            if (!target.allFinite()) break;
            double t = 1.0;
            Index hit = -1;
            for (Index a = 0; a < k0; ++a) {
                if (cur(a) != 0.0 && target(a) * cur(a) <= 0.0) {
                    const double ta = cur(a) / (cur(a) - target(a));
                    if (ta < t) {
                        t = ta;
                        hit = a;
                    }
                }
            }
            cur += t * (target - cur);
            moved = true;
            if (hit < 0 || static_cast<Index>(dropped.size()) + 1 >= k0) break;
            cur(hit) = 0.0;
            dropped.push_back(hit);
            w.conservativeResize(Eigen::NoChange, w.cols() + 1);
            w.col(w.cols() - 1) = llt.solve(Vector::Unit(k0, hit));
        }
        for (Index a = 0; a < k0; ++a) beta_(active[a]) = cur(a);
        if (!moved) return;
        if (covariance_) {
            grad_ = grad0_;
            for (Index j : active) {
                if (beta_(j) != 0.0) grad_.noalias() -= beta_(j) * gram_.col(j);
            }
        } else {
            resid_ = yc_;
            for (Index j : active) {
                if (beta_(j) != 0.0) resid_.noalias() -= beta_(j) * xs_.col(j);
            }
        }
    }

private:
    const Vector& cached_gram_col(Index j) {
        Vector& col = gram_cols_[static_cast<std::size_t>(j)];
        if (col.size() == 0) col = xs_.transpose() * xs_.col(j) * inv_n_;
        return col;
    }

    const Matrix& xs_;
    double inv_n_;
    bool covariance_ = false;
    Vector beta_;
    Matrix gram_;
    Vector grad_;
    Vector grad0_;
    Vector yc_;
    Vector resid_;
    Vector diag_;
    std::vector<Vector> gram_cols_;  // residual mode: Gram columns of ever-active variables
};

std::vector<double> default_lambdas(double lambda_max, const LassoOptions& opts) {
    std::vector<double> out;
    if (!(lambda_max > 0.0)) {
        out.push_back(0.0);
        return out;
    }
    const Index m = std::max<Index>(opts.n_lambda, 1);
    const double lo = std::log(lambda_max * opts.lambda_min_ratio);
    const double hi = std::log(lambda_max);
    for (Index i = 0; i < m; ++i) {
        const double t = m == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(m - 1);
        out.push_back(std::exp(hi + t * (lo - hi)));
    }
    return out;
}

constexpr int kActiveStepEvery = 5;
constexpr int kActiveStepDrops = 100;

LassoPath fit_path(const Standardized& s, const std::vector<double>& lambdas, const LassoOptions& opts,
                   Diagnostics* diag) {
    const Index p = s.xs.cols();
    LassoPath path;
    path.lambdas = lambdas;
    path.center = s.center;
    path.scale = s.scale;
    const auto L = static_cast<Index>(lambdas.size());
    path.betas = Matrix::Zero(p, L);
    path.betas_standardized = Matrix::Zero(p, L);
    path.intercepts = Vector::Constant(L, s.y_mean);

    std::vector<Index> usable;
    for (Index j = 0; j < p; ++j) {
        if (s.scale(j) > 0.0) usable.push_back(j);
    }
    CdState state(s.xs, s.yc);
    bool hit_limit = false;
    const double null_dev = s.yc.squaredNorm();
    double prev_ratio = 0.0;
    path.fitted = L;
    for (Index l = 0; l < L; ++l) {
        if (l >= path.fitted) {
            // past the truncation point the last solution is carried forward
            path.betas_standardized.col(l) = path.betas_standardized.col(l - 1);
            path.betas.col(l) = path.betas.col(l - 1);
            path.intercepts(l) = path.intercepts(l - 1);
            continue;
        }
        const double lambda = lambdas[static_cast<std::size_t>(l)];
        int sweeps = 0;
        while (sweeps < opts.max_sweeps) {
            ++sweeps;
            const double full = state.sweep(lambda, usable);
            if (full < opts.tol) break;
            std::vector<Index> active;
            for (Index j : usable) {
                if (state.beta()(j) != 0.0) active.push_back(j);
            }
            int inner = 0;
            while (sweeps < opts.max_sweeps) {
                ++sweeps;
                if (state.sweep(lambda, active) < opts.tol) break;
                if (++inner % kActiveStepEvery == 0) state.active_step(lambda, active, kActiveStepDrops);
            }
        }
        if (sweeps >= opts.max_sweeps) hit_limit = true;
        const Vector& beta = state.beta();
        path.betas_standardized.col(l) = beta;
        for (Index j : usable) path.betas(j, l) = beta(j) / s.scale(j);
        path.intercepts(l) = s.y_mean - s.center.dot(path.betas.col(l));
        if (opts.truncate && null_dev > 0.0 && l > 0) {
            const double ratio = 1.0 - (s.yc - s.xs * beta).squaredNorm() / null_dev;
            if (ratio > opts.max_dev_ratio || ratio - prev_ratio < opts.min_dev_gain * ratio) path.fitted = l + 1;
            prev_ratio = ratio;
        } else if (null_dev > 0.0) {
            prev_ratio = 1.0 - (s.yc - s.xs * beta).squaredNorm() / null_dev;
        }
    }
    if (hit_limit && diag) {
        diag->warn("ConvergenceWarning: lasso coordinate descent hit the sweep limit");
    }
    return path;
}

// Drops the lambdas past the truncation point so every column is a solution.
void trim_path(LassoPath& path) {
    const Index m = path.fitted;
    path.lambdas.resize(static_cast<std::size_t>(m));
    path.betas.conservativeResize(Eigen::NoChange, m);
    path.betas_standardized.conservativeResize(Eigen::NoChange, m);
    path.intercepts.conservativeResize(m);
}

std::vector<double> fold_errors(const Matrix& x, const Vector& y, const std::vector<Index>& fold,
                                const std::vector<double>& lambdas, const LassoOptions& opts) {
    const std::vector<Index> train = training_rows(x.rows(), fold);
    const Standardized s = standardize(take_rows(x, train), take_rows(y, train));
    const LassoPath path = fit_path(s, lambdas, opts, nullptr);
    const Matrix xv = take_rows(x, fold);
    const Vector yv = take_rows(y, fold);
    std::vector<double> err(lambdas.size());
    for (std::size_t l = 0; l < lambdas.size(); ++l) {
        const auto li = static_cast<Index>(l);
        const Vector r = (yv - xv * path.betas.col(li)).array() - path.intercepts(li);
        err[l] = r.squaredNorm() / static_cast<double>(r.size());
    }
    return err;
}

LassoFit lasso_impl(const Dataset& data, const LassoOptions& opts, bool parallel) {
    const Matrix& x = data.x();
    const Vector& y = data.y();
    if (x.rows() != y.size()) throw DimensionError("lasso: X and Y row counts differ");
    LassoFit out;
    const Standardized s = standardize(x, y);
    std::vector<double> lambdas = opts.lambdas;
    if (lambdas.empty()) {
        lambdas = default_lambdas(lasso_lambda_max(x, y), opts);
    } else if (!std::is_sorted(lambdas.rbegin(), lambdas.rend())) {
        throw InputError("lasso: lambda grid must be descending");
    }
    out.path = fit_path(s, lambdas, opts, &out.diagnostics);
    trim_path(out.path);
    lambdas = out.path.lambdas;

    const auto folds = make_folds(x.rows(), opts.folds, opts.seed);
    std::vector<std::vector<double>> errs(folds.size());
    const auto n_folds = static_cast<Index>(folds.size());
    if (parallel) {
#pragma omp parallel for schedule(dynamic)
        for (Index f = 0; f < n_folds; ++f) {
            errs[f] = fold_errors(x, y, folds[f], lambdas, opts);
        }
    } else {
        for (Index f = 0; f < n_folds; ++f) {
            errs[f] = fold_errors(x, y, folds[f], lambdas, opts);
        }
    }
    const std::size_t L = lambdas.size();
    out.path.cv_mean.assign(L, 0.0);
    out.path.cv_sd.assign(L, 0.0);
    for (std::size_t l = 0; l < L; ++l) {
        double sum = 0.0;
        for (const auto& e : errs) sum += e[l];
        const double mean = sum / static_cast<double>(errs.size());
        double ss = 0.0;
        for (const auto& e : errs) ss += (e[l] - mean) * (e[l] - mean);
        out.path.cv_mean[l] = mean;
        out.path.cv_sd[l] = errs.size() > 1 ? std::sqrt(ss / static_cast<double>(errs.size() - 1)) : 0.0;
    }
    std::size_t best = 0;
    for (std::size_t l = 1; l < L; ++l) {
        if (out.path.cv_mean[l] < out.path.cv_mean[best]) best = l;
    }
    out.path.selected = static_cast<Index>(best);
    out.beta = out.path.betas.col(out.path.selected);
    out.intercept = out.path.intercepts(out.path.selected);
    out.diagnostics.values["lambda"] = lambdas[best];
    out.diagnostics.notes["lambda_rule"] = "lambda.min";
    return out;
}

}  // namespace

double lasso_lambda_max(const Matrix& x, const Vector& y) {
    const Standardized s = standardize(x, y);
    if (s.xs.cols() == 0) return 0.0;
    return (s.xs.transpose() * s.yc).cwiseAbs().maxCoeff() / static_cast<double>(x.rows());
}

LassoPath lasso_path(const Matrix& x, const Vector& y, const LassoOptions& opts) {
    if (x.rows() != y.size()) throw DimensionError("lasso: X and Y row counts differ");
    const Standardized s = standardize(x, y);
    std::vector<double> lambdas = opts.lambdas;
    if (lambdas.empty()) lambdas = default_lambdas(lasso_lambda_max(x, y), opts);
    LassoPath path = fit_path(s, lambdas, opts, nullptr);
    trim_path(path);
    return path;
}

LassoFit lasso_cd(const Dataset& data, const LassoOptions& opts) {
    return lasso_impl(data, opts, run_parallel(opts.policy));
}

LassoFit lasso_cd_serial(const Dataset& data, const LassoOptions& opts) {
    return lasso_impl(data, opts, false);
}

IvLassoFit iv_on_support(const Dataset& data, const Matrix& siv, Support support, const Vector& ranking) {
    const Index p = data.p();
    if (siv.rows() != data.n()) throw DimensionError("iv_lasso: SIV and X row counts differ");
    IvLassoFit out;
    out.beta = Vector::Zero(p);
    std::sort(support.begin(), support.end());
    if (support.empty()) {
        out.diagnostics.values["instrument_rank"] = 0.0;
        return out;
    }
    const Matrix xc = data.centered() ? data.x() : center_columns(data.x());
    const Vector yc = data.y().array() - data.y().mean();
    const linalg::ColumnBasis inst = linalg::column_basis(center_columns(siv));
    out.diagnostics.values["instrument_rank"] = static_cast<double>(inst.rank);
    if (static_cast<Index>(support.size()) > inst.rank) {
        std::ostringstream msg;
        msg << "UnderidentifiedWarning: " << support.size() << " selected exposures but only " << inst.rank
            << " instruments; keeping the " << inst.rank << " largest";
        out.diagnostics.warn(msg.str());
        std::stable_sort(support.begin(), support.end(),
                         [&](Index a, Index b) { return std::abs(ranking(a)) > std::abs(ranking(b)); });
        support.resize(static_cast<std::size_t>(inst.rank));
        std::sort(support.begin(), support.end());
    }
    if (support.empty()) return out;
    const auto k = static_cast<Index>(support.size());
    Matrix xa(xc.rows(), k);
    for (Index t = 0; t < k; ++t) xa.col(t) = xc.col(support[t]);
    const Matrix x_hat = inst.basis * (inst.basis.transpose() * xa);
    const Vector b = linalg::lstsq(x_hat, yc);
    for (Index t = 0; t < k; ++t) out.beta(support[t]) = b(t);
    out.support = std::move(support);
    return out;
}

IvLassoFit iv_lasso(const Dataset& data, const Matrix& siv, const LassoFit& lasso) {
    Support sel;
    for (Index j = 0; j < lasso.beta.size(); ++j) {
        if (lasso.beta(j) != 0.0) sel.push_back(j);
    }
    IvLassoFit out = iv_on_support(data, siv, sel, lasso.beta);
    out.diagnostics.values["lasso_support_size"] = static_cast<double>(sel.size());
    return out;
}

IvLassoFit iv_lasso(const Dataset& data, const Matrix& siv, const LassoOptions& opts) {
    return iv_lasso(data, siv, lasso_cd(data, opts));
}

const char* to_string(UhatTransform t) {
    return t == UhatTransform::Identity ? "identity" : "cube";
}

Matrix estimate_uhat(const Matrix& xc, const FactorEstimate& factors) {
    if (factors.loadings.cols() == 0) return Matrix(xc.rows(), 0);
    return xc * precision_times_loadings(xc, factors);
}

Matrix uhat_design(const Matrix& uhat, UhatTransform transform) {
    Matrix d(uhat.rows(), uhat.cols() + 1);
    d.col(0).setOnes();
    if (transform == UhatTransform::Identity) {
        d.rightCols(uhat.cols()) = uhat;
    } else {
        d.rightCols(uhat.cols()) = uhat.array().cube();
    }
    return d;
}

namespace {

void check_k(Index k, Index p) {
    if (k < 0 || k > p) {
        throw InputError("support bound k must lie in [0, p]");
    }
}

UhatFit fit_with_design(const Matrix& x, const Vector& y, const Matrix& design, const LinkFamily& link, Index k,
                        const NonlinearSplicingOptions& opts) {
    check_k(k, x.cols());
    UhatFit out;
    linalg::ColumnBasis cb = linalg::column_basis(design);
    const Projection proj{std::move(cb.basis), ProjectionMode::Complement};
    const ProjectedNls prob{x, y, link, proj};
    NonlinearFit fit = nonlinear_splicing(prob, k, opts);
    const Vector r = y - link_values(link, x, fit.beta);
    const Vector coef = linalg::lstsq(design, r);
    out.intercept = coef(0);
    out.gamma = coef.tail(design.cols() - 1);
    out.loss = (r - design * coef).squaredNorm() / static_cast<double>(x.rows());
    out.beta = std::move(fit.beta);
    out.support = std::move(fit.support);
    out.k_hat = k;
    out.diagnostics = std::move(fit.diagnostics);
    return out;
}

double uhat_fold_loss(const Matrix& x, const Vector& y, const Matrix& design, const LinkFamily& link, Index k,
                      const std::vector<Index>& fold, const NonlinearSplicingOptions& opts) {
    const std::vector<Index> train = training_rows(x.rows(), fold);
    const UhatFit fit = fit_with_design(take_rows(x, train), take_rows(y, train), take_rows(design, train), link,
                                        k, opts);
    const Matrix xv = take_rows(x, fold);
    const Matrix dv = take_rows(design, fold);
    Vector coef(design.cols());
    coef(0) = fit.intercept;
    coef.tail(design.cols() - 1) = fit.gamma;
    const Vector r = take_rows(y, fold) - link_values(link, xv, fit.beta) - dv * coef;
    return r.squaredNorm() / static_cast<double>(r.size());
}

void check_uhat_inputs(const Dataset& data, const Matrix& uhat, const std::vector<Index>& grid) {
    if (uhat.rows() != data.n()) throw DimensionError("U-hat and X row counts differ");
    if (grid.empty()) throw InputError("cross-validation grid is empty");
    for (Index k : grid) check_k(k, data.p());
}

}  // namespace

UhatFit uhat_fit(const Dataset& data, const Matrix& uhat, const LinkFamily& link, UhatTransform transform, Index k,
                 const NonlinearSplicingOptions& opts) {
    if (uhat.rows() != data.n()) throw DimensionError("U-hat and X row counts differ");
    UhatFit out = fit_with_design(data.x(), data.y(), uhat_design(uhat, transform), link, k, opts);
    out.q_hat = uhat.cols();
    return out;
}

CvResult cross_validate_k_uhat_serial(const Dataset& data, const Matrix& uhat, const LinkFamily& link,
                                      UhatTransform transform, const std::vector<Index>& k_grid,
                                      const CvOptions& cv, const NonlinearSplicingOptions& opts) {
    check_uhat_inputs(data, uhat, k_grid);
    const Matrix design = uhat_design(uhat, transform);
    const auto folds = make_folds(data.n(), cv.folds, cv.seed);
    std::vector<std::vector<double>> losses(k_grid.size(), std::vector<double>(folds.size()));
    for (std::size_t f = 0; f < folds.size(); ++f) {
        for (std::size_t g = 0; g < k_grid.size(); ++g) {
            losses[g][f] = uhat_fold_loss(data.x(), data.y(), design, link, k_grid[g], folds[f], opts);
        }
    }
    return summarize_cv(k_grid, losses);
}

CvResult cross_validate_k_uhat(const Dataset& data, const Matrix& uhat, const LinkFamily& link,
                               UhatTransform transform, const std::vector<Index>& k_grid, const CvOptions& cv,
                               const NonlinearSplicingOptions& opts) {
    if (!run_parallel(cv.policy) || link.kind == LinkKind::Custom) {
        return cross_validate_k_uhat_serial(data, uhat, link, transform, k_grid, cv, opts);
    }
    check_uhat_inputs(data, uhat, k_grid);
    const Matrix design = uhat_design(uhat, transform);
    const auto folds = make_folds(data.n(), cv.folds, cv.seed);
    const auto n_folds = static_cast<Index>(folds.size());
    const auto tasks = n_folds * static_cast<Index>(k_grid.size());
    std::vector<std::vector<double>> losses(k_grid.size(), std::vector<double>(folds.size()));
#pragma omp parallel for schedule(dynamic)
    for (Index t = 0; t < tasks; ++t) {
        const Index g = t / n_folds;
        const Index f = t % n_folds;
        losses[g][f] = uhat_fold_loss(data.x(), data.y(), design, link, k_grid[g], folds[f], opts);
    }
    return summarize_cv(k_grid, losses);
}

UhatFit fit_uhat(const Dataset& data, const LinkFamily& link, UhatTransform transform, const NonlinearOptions& opts) {
    const SivOptions& so = opts.siv;
    const Matrix xc = data.centered() ? data.x() : center_columns(data.x());
    const FactorStage stage = run_factor_stage(xc, so);
    const Matrix uhat = estimate_uhat(xc, stage.factors);

    std::vector<Index> grid;
    if (so.k) {
        grid = {*so.k};
    } else if (!so.k_grid.empty()) {
        grid = so.k_grid;
    } else {
        grid = default_k_grid(data.n(), data.p(), stage.factors.q_hat, so.k_max);
    }
    Index k_hat = grid.front();
    std::vector<CvRow> table;
    if (grid.size() > 1) {
        CvOptions cv;
        cv.folds = so.folds;
        cv.seed = so.seed;
        cv.policy = so.policy;
        const CvResult res = cross_validate_k_uhat(data, uhat, link, transform, grid, cv, opts.splicing);
        k_hat = res.k_hat;
        table = res.table;
    }
    UhatFit out = uhat_fit(data, uhat, link, transform, k_hat, opts.splicing);
    out.cv_table = std::move(table);
    out.q_hat = stage.factors.q_hat;
    Diagnostics d = stage.diagnostics;
    d.merge(out.diagnostics);
    d.notes["transform"] = to_string(transform);
    d.notes["link"] = to_string(link.kind);
    out.diagnostics = std::move(d);
    return out;
}

}  // namespace siv
