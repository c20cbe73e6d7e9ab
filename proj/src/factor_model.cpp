#include "siv/factor_model.hpp"

#include "siv/linalg.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace siv {

const char* to_string(LoadingMethod m) {
    return m == LoadingMethod::MLE ? "MLE" : "PCA";
}

namespace {

constexpr int kEdMaxRounds = 10;
constexpr Index kEdWindow = 5;

Matrix centered_x_of(const Dataset& data) {
    return data.centered() ? data.x() : center_columns(data.x());
}

}  // namespace

Spectrum covariance_spectrum(const Matrix& xc, Index vectors_wanted) {
    const Index n = xc.rows();
    const Index p = xc.cols();
    const double denom = static_cast<double>(n - 1);
    Spectrum out;
    if (p <= n) {
        Matrix s = Matrix::Zero(p, p);
        s.selfadjointView<Eigen::Lower>().rankUpdate(xc.transpose(), 1.0 / denom);
        s.triangularView<Eigen::StrictlyUpper>() = s.transpose();
        auto eig = linalg::symmetric_eigen_desc(s);
        out.values = eig.values;
        out.vectors = eig.vectors.leftCols(std::min(vectors_wanted, p));
    } else {
        Matrix g = Matrix::Zero(n, n);
        g.selfadjointView<Eigen::Lower>().rankUpdate(xc, 1.0 / denom);
        g.triangularView<Eigen::StrictlyUpper>() = g.transpose();
        auto eig = linalg::symmetric_eigen_desc(g);
        out.values = eig.values;
        const Index m = std::min(vectors_wanted, n);
        out.vectors.resize(p, m);
        for (Index j = 0; j < m; ++j) {
            Vector v = xc.transpose() * eig.vectors.col(j);
            const double norm = v.norm();
            out.vectors.col(j) = norm > 0.0 ? Vector(v / norm) : v;
        }
        linalg::normalize_column_signs(out.vectors);
    }
    out.values = out.values.cwiseMax(0.0);
    return out;
}

Index default_max_factors(Index n, Index p) {
    const Index m = std::min(n, p);
    Index q_max = std::min<Index>(20, m / 3);
    q_max = std::min(q_max, m - (kEdWindow + 1));
    return std::max<Index>(q_max, 0);
}

Index estimate_num_factors_from_eigenvalues(const Vector& ev, Index q_max) {
    const Index m = ev.size();
    if (q_max < 0 || q_max > m - (kEdWindow + 1)) {
        std::ostringstream msg;
        msg << "q_max=" << q_max << " outside [0, " << m - (kEdWindow + 1)
            << "]; the eigenvalue window needs five eigenvalues beyond q_max";
        throw DimensionError(msg.str());
    }
    if (!(ev(0) > 0.0)) {
        throw DegenerateInput("sample covariance is identically zero");
    }
    // Gaps at round-off level must not register when the tail is exactly flat.
    const double gap_floor = 1e-10 * ev(0);

    Index window_start = q_max + 1;  // 1-based eigenvalue index
    Index q_hat = 0;
    for (int round = 0; round < kEdMaxRounds; ++round) {
        double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
        for (Index t = 0; t < kEdWindow; ++t) {
            const double x = std::pow(static_cast<double>(window_start - 1 + t), 2.0 / 3.0);
            const double y = ev(window_start - 1 + t);
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        const double w = static_cast<double>(kEdWindow);
        const double slope = (sxy - sx * sy / w) / (sxx - sx * sx / w);
        const double delta = std::max(2.0 * std::abs(slope), gap_floor);

        Index found = 0;
        for (Index i = q_max; i >= 1; --i) {
            if (ev(i - 1) - ev(i) >= delta) {
                found = i;
                break;
            }
        }
        q_hat = found;
        const Index next_start = q_hat + 1;
        if (next_start == window_start) {
            break;
        }
        window_start = next_start;
    }
    return q_hat;
}

Index estimate_num_factors(const Dataset& data, Index q_max) {
    const Matrix xc = centered_x_of(data);
    const Spectrum spectrum = covariance_spectrum(xc, 0);
    return estimate_num_factors_from_eigenvalues(spectrum.values, q_max);
}

namespace {

Vector idiosyncratic_floor(const Matrix& xc, double ratio) {
    const double denom = static_cast<double>(xc.rows() - 1);
    Vector var = xc.colwise().squaredNorm().transpose() / denom;
    return (ratio * var).cwiseMax(1e-300);
}

Vector residual_uniquenesses(const Matrix& xc, const Matrix& loadings, const Vector& floor) {
    const double denom = static_cast<double>(xc.rows() - 1);
    Vector var = xc.colwise().squaredNorm().transpose() / denom;
    Vector psi = var - loadings.rowwise().squaredNorm();
    return psi.cwiseMax(floor);
}

}  // namespace

FactorEstimate estimate_loadings_pca(const Matrix& xc, const Spectrum& spectrum, Index q) {
    const Index m = spectrum.values.size();
    if (q < 1 || q > m - 1) {
        std::ostringstream msg;
        msg << "PCA loadings need 1 <= q <= min(n,p)-1, got q=" << q;
        throw DimensionError(msg.str());
    }
    if (spectrum.vectors.cols() < q) {
        throw DimensionError("spectrum carries fewer eigenvectors than requested factors");
    }
    if (spectrum.values(q - 1) <= 1e-12 * std::max(spectrum.values(0), 1e-300)) {
        std::ostringstream msg;
        msg << "requested rank q=" << q << " exceeds the numerical rank of the covariance";
        throw DegenerateInput(msg.str());
    }
    FactorEstimate est;
    est.q_hat = q;
    est.method = LoadingMethod::PCA;
    est.eigenvalues = spectrum.values;
    est.loadings = spectrum.vectors.leftCols(q);
    for (Index j = 0; j < q; ++j) {
        est.loadings.col(j) *= std::sqrt(spectrum.values(j));
    }
    est.uniquenesses = residual_uniquenesses(xc, est.loadings, idiosyncratic_floor(xc, 1e-6));
    return est;
}

FactorEstimate estimate_loadings_pca(const Dataset& data, Index q) {
    const Matrix xc = centered_x_of(data);
    return estimate_loadings_pca(xc, covariance_spectrum(xc, q), q);
}

double factor_loglik(const Matrix& s, const Matrix& loadings, const Vector& psi, Index n) {
    const Index p = s.rows();
    const Index q = loadings.cols();
    const Vector psi_inv = psi.cwiseInverse();
    double logdet = psi.array().log().sum();
    double trace = (s.diagonal().array() * psi_inv.array()).sum();
    if (q > 0) {
        const Matrix a = psi_inv.asDiagonal() * loadings;  // p x q
        Matrix m = Matrix::Identity(q, q) + loadings.transpose() * a;
        Eigen::LLT<Matrix> llt(m);
        const Matrix l = llt.matrixL();
        logdet += 2.0 * l.diagonal().array().log().sum();
        const Matrix sa = s * a;
        trace -= (llt.solve(a.transpose() * sa)).trace();
    }
    const double two_pi = 2.0 * std::numbers::pi;
    return -0.5 * static_cast<double>(n) *
           (static_cast<double>(p) * std::log(two_pi) + logdet + trace);
}

FactorEstimate estimate_loadings_mle(const Matrix& xc, const Spectrum& spectrum, Index q,
                                     const EmOptions& opts) {
    const Index n = xc.rows();
    const Index p = xc.cols();
    if (n <= p) {
        std::ostringstream msg;
        msg << "maximum-likelihood loadings need n > p, got n=" << n << " p=" << p;
        throw DimensionError(msg.str());
    }
    if (q < 0 || q >= p) {
        throw DimensionError("maximum-likelihood loadings need 0 <= q < p");
    }

    Matrix cov = Matrix::Zero(p, p);
    cov.selfadjointView<Eigen::Lower>().rankUpdate(xc.transpose(), 1.0 / static_cast<double>(n));
    cov.triangularView<Eigen::StrictlyUpper>() = cov.transpose();
    const Vector sd = cov.diagonal().cwiseSqrt();
    if (!(sd.minCoeff() > 0.0)) {
        throw DegenerateInput("an exposure has zero variance");
    }
    // EM runs on the correlation scale so the start, and hence the optimum
    // reached, does not depend on the units of individual columns.
    const Vector sd_inv = sd.cwiseInverse();
    const Matrix s = sd_inv.asDiagonal() * cov * sd_inv.asDiagonal();
    const double log_scale = static_cast<double>(n) * sd.array().log().sum();
    const Vector floor = Vector::Constant(p, opts.floor_ratio);

    FactorEstimate est;
    est.q_hat = q;
    est.method = LoadingMethod::MLE;
    est.eigenvalues = spectrum.values;

    if (q == 0) {
        est.loadings = Matrix(p, 0);
        est.uniquenesses = cov.diagonal();
        est.loglik_trace.push_back(factor_loglik(s, est.loadings, Vector::Ones(p), n) - log_scale);
        return est;
    }

    const auto eig = linalg::symmetric_eigen_desc(s);
    Matrix lambda = eig.vectors.leftCols(q);
    for (Index j = 0; j < q; ++j) {
        lambda.col(j) *= std::sqrt(std::max(eig.values(j), 0.0));
    }
    Vector psi = (s.diagonal() - lambda.rowwise().squaredNorm()).cwiseMax(floor);
    double loglik = factor_loglik(s, lambda, psi, n);
    est.loglik_trace.push_back(loglik - log_scale);

    bool converged = false;
    bool heywood = false;
    int iter = 0;
    const Matrix eye = Matrix::Identity(q, q);
    while (iter < opts.max_iter) {
        ++iter;
        const Vector psi_inv = psi.cwiseInverse();
        const Matrix a = psi_inv.asDiagonal() * lambda;            // p x q
        const Matrix m = eye + lambda.transpose() * a;               // q x q
        const Matrix beta = m.llt().solve(a.transpose());            // q x p, = Lambda^T Sigma^{-1}
        const Matrix s_beta_t = s * beta.transpose();                // p x q
        const Matrix ezz = eye - beta * lambda + beta * s_beta_t;    // q x q
        lambda = ezz.llt().solve(s_beta_t.transpose()).transpose();  // p x q
        Vector psi_new = s.diagonal() - lambda.cwiseProduct(s_beta_t).rowwise().sum();
        for (Index i = 0; i < p; ++i) {
            if (psi_new(i) < floor(i)) {
                psi_new(i) = floor(i);
                heywood = true;
            }
        }
        psi = psi_new;
        const double next = factor_loglik(s, lambda, psi, n);
        est.loglik_trace.push_back(next - log_scale);
        const double change = std::abs(next - loglik);
        loglik = next;
        if (change <= opts.tol * std::abs(loglik - log_scale)) {
            converged = true;
            break;
        }
    }
    est.iterations = iter;
    if (!converged) {
        std::ostringstream msg;
        msg << "factor-analysis EM did not reach relative tolerance " << opts.tol << " in "
            << opts.max_iter << " iterations";
        throw ConvergenceError(msg.str());
    }
    if (heywood) {
        est.diagnostics.warn("Heywood case: uniqueness clamped at floor");
    }
    lambda = sd.asDiagonal() * lambda;
    linalg::normalize_column_signs(lambda);
    est.loadings = lambda;
    est.uniquenesses = psi.cwiseProduct(sd.cwiseAbs2());
    est.diagnostics.values["em_iterations"] = iter;
    est.diagnostics.values["loglik"] = loglik - log_scale;
    return est;
}

FactorEstimate estimate_loadings_mle(const Dataset& data, Index q, const EmOptions& opts) {
    const Matrix xc = centered_x_of(data);
    return estimate_loadings_mle(xc, covariance_spectrum(xc, q), q, opts);
}

ComplementBasis null_space_basis(const Matrix& loadings) {
    const Index p = loadings.rows();
    const Index q = loadings.cols();
    if (q >= p) {
        std::ostringstream msg;
        msg << "loadings have q=" << q << " columns for p=" << p << " exposures; no complement";
        throw RankError(msg.str());
    }
    ComplementBasis out;
    if (q == 0) {
        out.basis = Matrix::Identity(p, p);
        return out;
    }
    Eigen::JacobiSVD<Matrix> svd(loadings, Eigen::ComputeFullU);
    const Vector& sv = svd.singularValues();
    if (!(sv(q - 1) > 1e-10 * sv(0))) {
        throw RankError("loadings are not of full column rank");
    }
    out.basis = svd.matrixU().rightCols(p - q);
    linalg::normalize_column_signs(out.basis);
    return out;
}

ComplementBasis null_space_basis(const FactorEstimate& estimate) {
    return null_space_basis(estimate.loadings);
}

}  // namespace siv
