#include "siv/best_subset.hpp"

#include "siv/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace siv {

GramProblem GramProblem::from_data(const Matrix& a, const Vector& y) {
    if (a.rows() != y.size()) {
        throw DimensionError("design and response have different row counts");
    }
    GramProblem out;
    out.gram = Matrix::Zero(a.cols(), a.cols());
    out.gram.selfadjointView<Eigen::Lower>().rankUpdate(a.transpose());
    out.gram.triangularView<Eigen::StrictlyUpper>() = out.gram.transpose();
    out.cross = a.transpose() * y;
    out.yy = y.squaredNorm();
    out.n = a.rows();
    return out;
}

GramProblem GramProblem::without_rows(const Matrix& a_rows, const Vector& y_rows) const {
    GramProblem out = *this;
    out.gram.selfadjointView<Eigen::Lower>().rankUpdate(a_rows.transpose(), -1.0);
    out.gram.triangularView<Eigen::StrictlyUpper>() = out.gram.transpose();
    out.cross -= a_rows.transpose() * y_rows;
    out.yy -= y_rows.squaredNorm();
    out.n -= a_rows.rows();
    return out;
}

double support_loss(const GramProblem& problem, const Support& support, Vector* coef) {
    const Index k = static_cast<Index>(support.size());
    if (k == 0) {
        if (coef) {
            coef->resize(0);
        }
        return problem.yy;
    }
    Matrix g(k, k);
    Vector c(k);
    for (Index a = 0; a < k; ++a) {
        c(a) = problem.cross(support[a]);
        for (Index b = 0; b <= a; ++b) {
            g(a, b) = problem.gram(support[a], support[b]);
            g(b, a) = g(a, b);
        }
    }
    Vector beta = linalg::solve_gram(g, c);
    // Exact residual sum of squares for any beta: yy - 2 b^T c + b^T G b.
    const double loss = problem.yy - 2.0 * beta.dot(c) + beta.dot(g * beta);
    if (coef) {
        *coef = std::move(beta);
    }
    return loss;
}

double coefficient_loss(const GramProblem& problem, const Vector& beta) {
    return problem.yy - 2.0 * beta.dot(problem.cross) + beta.dot(problem.gram * beta);
}

namespace {

SubsetFit make_fit(const GramProblem& problem, Support support) {
    SubsetFit fit;
    Vector coef;
    fit.loss = support_loss(problem, support, &coef);
    fit.beta = Vector::Zero(problem.p());
    for (std::size_t a = 0; a < support.size(); ++a) {
        fit.beta(support[a]) = coef(static_cast<Index>(a));
    }
    fit.support = std::move(support);
    return fit;
}

double tie_tolerance(const GramProblem& problem) {
    return 1e-12 * std::max(std::abs(problem.yy), 1e-300);
}

void check_bound(const GramProblem& problem, Index k) {
    if (k < 0 || k > problem.p()) {
        std::ostringstream msg;
        msg << "sparsity bound k=" << k << " outside [0, " << problem.p() << "]";
        throw DimensionError(msg.str());
    }
}

struct SizeBest {
    double loss = std::numeric_limits<double>::infinity();
    Support support;
};

// Depth-first walk over supports in lexicographic order. The Cholesky factor
// of the current Gram block grows by one row per level, so a node costs
// O(depth^2). Columns already in the span of their ancestors get a zero row
// and leave the loss unchanged, matching the pseudo-inverse fit.
class SubsetWalker {
public:
    SubsetWalker(const GramProblem& problem, Index k_max)
        : problem_(problem),
          k_max_(k_max),
          chol_(Matrix::Zero(k_max, k_max)),
          w_(Vector::Zero(k_max)),
          idx_(static_cast<std::size_t>(k_max)),
          best_(static_cast<std::size_t>(k_max + 1)) {}

    void walk_from(Index lead) {
        if (k_max_ > 0) {
            visit(0, lead, problem_.yy);
        }
    }

    const std::vector<SizeBest>& best() const { return best_; }

private:
    void visit(Index depth, Index j, double parent_loss) {
        const Matrix& g = problem_.gram;
        double rest = g(j, j);
        double proj = 0.0;
        for (Index t = 0; t < depth; ++t) {
            double l = 0.0;
            const double dt = chol_(t, t);
            if (dt > 0.0) {
                l = g(idx_[t], j);
                for (Index u = 0; u < t; ++u) {
                    l -= chol_(t, u) * chol_(depth, u);
                }
                l /= dt;
            }
            chol_(depth, t) = l;
            rest -= l * l;
            proj += l * w_(t);
        }
        double loss = parent_loss;
        if (g(j, j) > 0.0 && rest > kPivotTolerance * g(j, j)) {
            const double d = std::sqrt(rest);
            chol_(depth, depth) = d;
            w_(depth) = (problem_.cross(j) - proj) / d;
            loss -= w_(depth) * w_(depth);
        } else {
            chol_(depth, depth) = 0.0;
            w_(depth) = 0.0;
        }
        idx_[depth] = j;
        auto& slot = best_[depth + 1];
        if (loss < slot.loss) {
            slot.loss = loss;
            slot.support.assign(idx_.begin(), idx_.begin() + depth + 1);
        }
        if (depth + 1 < k_max_) {
            for (Index next = j + 1; next < problem_.p(); ++next) {
                visit(depth + 1, next, loss);
            }
        }
    }

    static constexpr double kPivotTolerance = 1e-12;

    const GramProblem& problem_;
    Index k_max_;
    Matrix chol_;
    Vector w_;
    Support idx_;
    std::vector<SizeBest> best_;
};

// Best support of each exact size 1..k_max.
std::vector<SizeBest> enumerate_serial(const GramProblem& problem, Index k_max) {
    SubsetWalker walker(problem, k_max);
    for (Index lead = 0; lead < problem.p(); ++lead) {
        walker.walk_from(lead);
    }
    return walker.best();
}

// Same result as enumerate_serial: one walk per leading index, merged in
// leading-index order, which reproduces the lexicographic tie rule. Every node
// is computed from its own root path, so values agree bit for bit.
std::vector<SizeBest> enumerate_parallel(const GramProblem& problem, Index k_max) {
    const Index p = problem.p();
    std::vector<std::vector<SizeBest>> per_lead(static_cast<std::size_t>(p));
#pragma omp parallel for schedule(dynamic)
    for (Index lead = 0; lead < p; ++lead) {
        SubsetWalker walker(problem, k_max);
        walker.walk_from(lead);
        per_lead[lead] = walker.best();
    }
    std::vector<SizeBest> merged(static_cast<std::size_t>(k_max + 1));
    for (Index lead = 0; lead < p; ++lead) {
        for (Index s = 1; s <= k_max; ++s) {
            if (per_lead[lead][s].loss < merged[s].loss) {
                merged[s] = per_lead[lead][s];
            }
        }
    }
    return merged;
}

}  // namespace

std::vector<SubsetFit> best_subset_path(const GramProblem& problem, Index k_max,
                                        ExecutionPolicy policy) {
    if (problem.p() > kExhaustiveMaxP) {
        std::ostringstream msg;
        msg << "exhaustive best-subset search limited to p <= " << kExhaustiveMaxP << ", got p="
            << problem.p();
        throw SizeError(msg.str());
    }
    check_bound(problem, k_max);
    bool parallel = policy == ExecutionPolicy::Parallel;
#ifdef _OPENMP
    parallel = parallel && !omp_in_parallel();
#else
    parallel = false;
#endif
    const auto exact = parallel ? enumerate_parallel(problem, k_max) : enumerate_serial(problem, k_max);

    const double tol = tie_tolerance(problem);
    std::vector<SubsetFit> path;
    path.reserve(static_cast<std::size_t>(k_max + 1));
    path.push_back(make_fit(problem, {}));
    for (Index s = 1; s <= k_max; ++s) {
        if (exact[s].loss < path.back().loss - tol) {
            path.push_back(make_fit(problem, exact[s].support));
        } else {
            SubsetFit carried = path.back();
            path.push_back(std::move(carried));
        }
    }
    return path;
}

SubsetFit best_subset_exhaustive(const GramProblem& problem, Index k, ExecutionPolicy policy) {
    auto path = best_subset_path(problem, k, policy);
    return std::move(path.back());
}

SubsetFit best_subset_exhaustive(const Matrix& x_hat, const Vector& y, Index k) {
    return best_subset_exhaustive(GramProblem::from_data(x_hat, y), k);
}

namespace {

// Indices ordered by score descending, ties by index ascending.
std::vector<Index> order_desc(const Vector& score, const Support& candidates) {
    std::vector<Index> out = candidates;
    std::stable_sort(out.begin(), out.end(),
                     [&](Index a, Index b) { return score(a) > score(b); });
    return out;
}

}  // namespace

namespace {

// (G_AA)^+ and P = (G_AA)^+ G_A. over all columns.
struct ActiveSolve {
    Matrix m;
    Matrix proj;
};

ActiveSolve active_solve(const Matrix& gram, const Support& active) {
    const Index p = gram.rows();
    const Index k = static_cast<Index>(active.size());
    Matrix gaa(k, k), gax(k, p);
    for (Index a = 0; a < k; ++a) {
        for (Index b = 0; b < k; ++b) gaa(a, b) = gram(active[a], active[b]);
        gax.row(a) = gram.row(active[a]);
    }
    // Pseudo-inverse through the eigendecomposition tolerates a rank-deficient active set.
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gaa);
    const Vector ev = eig.eigenvalues();
    const double cut = kGramEigenTolerance * std::max(ev.maxCoeff(), 1e-300);
    Vector inv_ev = Vector::Zero(k);
    for (Index i = 0; i < k; ++i) {
        if (ev(i) > cut) inv_ev(i) = 1.0 / ev(i);
    }
    const Matrix& v = eig.eigenvectors();
    ActiveSolve s;
    s.m = v * inv_ev.asDiagonal() * v.transpose();
    s.proj = s.m * gax;
    return s;
}

double partial_norm(const Matrix& gram, const Support& active, const Matrix& proj, Index j) {
    double acc = gram(j, j);
    for (std::size_t a = 0; a < active.size(); ++a) acc -= gram(active[a], j) * proj(static_cast<Index>(a), j);
    return acc;
}

}  // namespace

Sacrifices exact_sacrifices(const Matrix& gram, const Vector& d, const Vector& beta, const Support& active,
                            double floor) {
    const Index p = gram.rows();
    const Index k = static_cast<Index>(active.size());
    Sacrifices s{Vector::Zero(p), Vector::Zero(p)};
    std::vector<char> in_active(static_cast<std::size_t>(p), 0);
    for (Index j : active) in_active[j] = 1;
    if (k == 0) {
        for (Index j = 0; j < p; ++j) {
            if (gram(j, j) > floor) s.forward(j) = d(j) * d(j) / gram(j, j);
        }
        return s;
    }
    const ActiveSolve as = active_solve(gram, active);
    for (Index a = 0; a < k; ++a) {
        const double h = as.m(a, a);
        const Index j = active[a];
        s.backward(j) = h > 0.0 ? beta(j) * beta(j) / h : 0.0;
    }
    for (Index j = 0; j < p; ++j) {
        if (in_active[j]) continue;
        const double rest = partial_norm(gram, active, as.proj, j);
        if (rest > floor) s.forward(j) = d(j) * d(j) / rest;
    }
    return s;
}

SwapMove best_single_swap(const Matrix& gram, const Vector& d, const Vector& beta, const Support& active,
                          double floor) {
    const Index p = gram.rows();
    const Index k = static_cast<Index>(active.size());
    SwapMove best;
    best.decrease = -std::numeric_limits<double>::infinity();
    if (k == 0 || k == p) return best;
    std::vector<char> in_active(static_cast<std::size_t>(p), 0);
    for (Index j : active) in_active[j] = 1;
    const ActiveSolve as = active_solve(gram, active);
    Vector rest = Vector::Zero(p);
    for (Index i = 0; i < p; ++i) {
        if (!in_active[i]) rest(i) = partial_norm(gram, active, as.proj, i);
    }
    for (Index a = 0; a < k; ++a) {
        const double h = as.m(a, a);
        if (!(h > 0.0)) continue;
        const Index j = active[a];
        const double back = beta(j) * beta(j) / h;
        for (Index i = 0; i < p; ++i) {
            if (in_active[i]) continue;
            // column i against the residual and the span of A without j
            const double pij = as.proj(a, i);
            const double rest_i = rest(i) + pij * pij / h;
            if (!(rest_i > floor)) continue;
            const double di = d(i) + beta(j) * pij / h;
            const double net = di * di / rest_i - back;
            if (net > best.decrease) {
                best.decrease = net;
                best.out = j;
                best.in = i;
            }
        }
    }
    return best;
}

SubsetFit best_subset_splicing(const GramProblem& problem, Index k, const SplicingOptions& opts) {
    check_bound(problem, k);
    const Index p = problem.p();
    if (k == 0) {
        return make_fit(problem, {});
    }
    if (k == p) {
        Support all(static_cast<std::size_t>(p));
        std::iota(all.begin(), all.end(), Index{0});
        return make_fit(problem, all);
    }

    const Vector diag = problem.gram.diagonal();
    const double diag_floor = 1e-14 * std::max(diag.maxCoeff(), 1e-300);
    Vector corr = Vector::Zero(p);
    for (Index j = 0; j < p; ++j) {
        if (diag(j) > diag_floor) {
            corr(j) = std::abs(problem.cross(j)) / std::sqrt(diag(j));
        }
    }
    Support everyone(static_cast<std::size_t>(p));
    std::iota(everyone.begin(), everyone.end(), Index{0});
    const auto ranked = order_desc(corr, everyone);
    Support active(ranked.begin(), ranked.begin() + k);
    std::sort(active.begin(), active.end());

    SubsetFit fit = make_fit(problem, active);
    const double threshold = opts.min_improvement * std::max(std::abs(problem.yy), 1e-300);
    const Index c_max = std::min({opts.c_max, k, p - k});

    bool converged = false;
    int pass = 0;
    while (pass < opts.max_passes) {
        ++pass;
        const Vector d = problem.cross - problem.gram * fit.beta;
        const Sacrifices sac = exact_sacrifices(problem.gram, d, fit.beta, fit.support, diag_floor);
        Vector backward = sac.backward;
        std::vector<char> in_active(static_cast<std::size_t>(p), 0);
        for (Index j : fit.support) in_active[j] = 1;
        Support inactive;
        inactive.reserve(static_cast<std::size_t>(p - k));
        for (Index j = 0; j < p; ++j) {
            if (!in_active[j]) inactive.push_back(j);
        }
        const Vector& forward = sac.forward;
        // Smallest backward sacrifice first: negate to reuse the descending sort.
        const auto drop_order = order_desc(-backward, fit.support);
        const auto add_order = order_desc(forward, inactive);

        double best_loss = fit.loss;
        Support best_support;
        for (Index c = 1; c <= c_max; ++c) {
            Support candidate;
            candidate.reserve(static_cast<std::size_t>(k));
            std::vector<char> dropped(static_cast<std::size_t>(p), 0);
            for (Index t = 0; t < c; ++t) {
                dropped[drop_order[t]] = 1;
            }
            for (Index j : fit.support) {
                if (!dropped[j]) {
                    candidate.push_back(j);
                }
            }
            for (Index t = 0; t < c; ++t) {
                candidate.push_back(add_order[t]);
            }
            std::sort(candidate.begin(), candidate.end());
            const double loss = support_loss(problem, candidate);
            if (loss < best_loss) {
                best_loss = loss;
                best_support = std::move(candidate);
            }
        }
        if ((best_support.empty() || fit.loss - best_loss < threshold) && opts.swap_scan) {
            const SwapMove mv = best_single_swap(problem.gram, d, fit.beta, fit.support, diag_floor);
            if (mv.out >= 0 && mv.decrease > 0.0) {
                Support candidate;
                candidate.reserve(static_cast<std::size_t>(k));
                for (Index j : fit.support) {
                    if (j != mv.out) candidate.push_back(j);
                }
                candidate.push_back(mv.in);
                std::sort(candidate.begin(), candidate.end());
                const double loss = support_loss(problem, candidate);
                if (loss < best_loss) {
                    best_loss = loss;
                    best_support = std::move(candidate);
                }
            }
        }
        if (best_support.empty() || fit.loss - best_loss < threshold) {
            converged = true;
            break;
        }
        fit = make_fit(problem, std::move(best_support));
    }
    fit.passes = pass;
    if (!converged) {
        fit.diagnostics.warn("ConvergenceWarning: splicing hit the pass limit; returning best seen");
    }
    return fit;
}

SubsetFit best_subset_splicing(const Matrix& x_hat, const Vector& y, Index k,
                               const SplicingOptions& opts) {
    return best_subset_splicing(GramProblem::from_data(x_hat, y), k, opts);
}

SubsetFit best_subset(const GramProblem& problem, Index k, Index exhaustive_max_p) {
    if (problem.p() <= std::min(exhaustive_max_p, kExhaustiveMaxP)) {
        return best_subset_exhaustive(problem, k);
    }
    return best_subset_splicing(problem, k);
}

}  // namespace siv
