#include "siv/linalg.hpp"
#include "siv/nonlinear_gmm.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace siv;

namespace {

struct Draw {
    Matrix x;
    Vector y;
    Matrix lambda;
    Vector beta;
};

// Cubic-link outcome with cubic confounding, loadings N(0, 1).
Draw cubic_draw(Index n, Index p, Index q, double sigma_x, double sigma_y, double g_scale, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Draw d;
    d.lambda = oracle::gaussian(p, q, rng);
    const Vector gamma = oracle::gaussian(q, 1, rng);
    const Matrix u = oracle::gaussian(n, q, rng);
    d.x = u * d.lambda.transpose() + oracle::gaussian(n, p, rng, sigma_x);
    d.beta = Vector::Zero(p);
    d.beta(0) = 0.3;
    d.beta(1) = 0.3;
    d.y = d.x.array().cube().matrix() * d.beta + g_scale * (u.array().cube().matrix() * gamma);
    if (sigma_y > 0.0) d.y += oracle::gaussian(n, 1, rng, sigma_y);
    return d;
}

Vector central_difference(const std::function<double(const Vector&)>& f, const Vector& b, double h) {
    Vector g(b.size());
    for (Index j = 0; j < b.size(); ++j) {
        Vector up = b, dn = b;
        up(j) += h;
        dn(j) -= h;
        g(j) = (f(up) - f(dn)) / (2.0 * h);
    }
    return g;
}

Matrix centered_siv(const Matrix& x, const Matrix& lambda) {
    return oracle::centered(x) * oracle::complement_qr(lambda);
}

}  // namespace

TEST(Link, JacobianMatchesFiniteDifferences) {
    const LinkFamily custom = LinkFamily::custom(
        [](const Vector& x, const Vector& b) { return std::sin(x.dot(b)); },
        [](const Vector& x, const Vector& b) { return Vector(std::cos(x.dot(b)) * x); });
    for (const LinkFamily& link :
         {LinkFamily::linear(), LinkFamily::cubic_power(), LinkFamily::exponential(), custom}) {
        for (int r = 0; r < 20; ++r) {
            std::mt19937_64 rng(40 + r);
            const Vector x = oracle::gaussian(6, 1, rng, 0.7).col(0);
            const Vector b = oracle::gaussian(6, 1, rng, 0.5).col(0);
            const Vector analytic = link.jacobian(x, b);
            const Vector fd = central_difference([&](const Vector& bb) { return link.eval(x, bb); }, b, 1e-6);
            EXPECT_LE((analytic - fd).norm(), 1e-5 * std::max(1.0, analytic.norm())) << to_string(link.kind);
            // vectorized versions agree with the per-row callbacks
            const Matrix xm = x.transpose();
            EXPECT_NEAR(link_values(link, xm, b)(0), link.eval(x, b), 1e-12 * std::max(1.0, std::abs(link.eval(x, b))));
            EXPECT_LE((link_jacobian(link, xm, b).row(0).transpose() - analytic).norm(), 1e-12 * std::max(1.0, analytic.norm()));
        }
    }
}

TEST(Link, ExponentClampIsReported) {
    Matrix x(3, 1);
    x << 100.0, 1.0, -100.0;
    Vector b(1);
    b << 1.0;
    Index clamped = 0;
    const Vector f = link_values(LinkFamily::exponential(), x, b, &clamped);
    EXPECT_EQ(clamped, 2);
    EXPECT_DOUBLE_EQ(f(0), std::exp(30.0));
    EXPECT_DOUBLE_EQ(f(2), std::exp(-30.0));
    EXPECT_THROW(link_from_name("logit"), InputError);
}

TEST(GmmLoss, EqualsProjectedResidualNormWithSampleWeight) {
    for (int r = 0; r < 20; ++r) {
        const Draw d = cubic_draw(300, 8, 2, 2.0, 1.0, 1.0, 100 + r);
        const Matrix siv = centered_siv(d.x, d.lambda);
        const Index n = d.x.rows();
        GmmProblem prob{siv, Matrix((siv.transpose() * siv / static_cast<double>(n)).inverse()),
                        LinkFamily::linear(), 2};
        std::mt19937_64 rng(r);
        const Vector beta = oracle::gaussian(8, 1, rng).col(0);
        const Vector yc = d.y.array() - d.y.mean();
        const Vector resid = yc - oracle::centered(d.x) * beta;
        const double expected = oracle::qr_project(siv, resid).squaredNorm() / static_cast<double>(n);
        EXPECT_NEAR(gmm_loss(beta, prob, oracle::centered(d.x), yc), expected, 1e-10 * expected);
    }
}

TEST(GmmLoss, VanishesAtTruthWithoutNoise) {
    const Draw d = cubic_draw(200, 6, 1, 1.0, 0.0, 0.0, 7);
    const Matrix siv = centered_siv(d.x, d.lambda);
    GmmProblem prob{siv, weight_matrix(siv), LinkFamily::cubic_power(), 2};
    EXPECT_LE(gmm_loss(d.beta, prob, d.x, d.y), 1e-20);
    prob.weight = Matrix::Identity(siv.cols(), siv.cols());
    // residual orthogonal to the instruments
    std::mt19937_64 rng(8);
    Vector e = oracle::gaussian(200, 1, rng).col(0);
    e -= oracle::qr_project(siv, e);
    EXPECT_LE(gmm_loss(d.beta, prob, d.x, Vector(d.y + e)), 1e-20);
}

TEST(GmmLoss, GradientMatchesFiniteDifferences) {
    for (int inst = 0; inst < 20; ++inst) {
        const Draw d = cubic_draw(150, 5, 1, 1.0, 0.5, 1.0, 200 + inst);
        const Matrix siv = centered_siv(d.x, d.lambda);
        const Matrix xs = d.x / 3.0;  // keep the exponential link in range
        for (const LinkFamily& link : {LinkFamily::cubic_power(), LinkFamily::exponential()}) {
            const GmmProblem prob{siv, weight_matrix(siv), link, 2};
            for (int r = 0; r < 10; ++r) {
                std::mt19937_64 rng(1000 * inst + r);
                const Vector b = oracle::gaussian(5, 1, rng, 0.3).col(0);
                const Vector analytic = gmm_gradient(b, prob, xs, d.y);
                const Vector fd = central_difference(
                    [&](const Vector& bb) { return gmm_loss(bb, prob, xs, d.y); }, b, 1e-6);
                EXPECT_LE((analytic - fd).norm(), 1e-4 * std::max(analytic.norm(), 1e-8));
            }
        }
    }
}

TEST(GmmLoss, InvariantToInstrumentRotation) {
    for (int r = 0; r < 20; ++r) {
        const Draw d = cubic_draw(200, 7, 2, 2.0, 1.0, 1.0, 300 + r);
        const Matrix b = oracle::complement_qr(d.lambda);
        std::mt19937_64 rng(r);
        Eigen::HouseholderQR<Matrix> qr(oracle::gaussian(b.cols(), b.cols(), rng));
        const Matrix o = qr.householderQ() * Matrix::Identity(b.cols(), b.cols());
        const Matrix siv1 = oracle::centered(d.x) * b;
        const Matrix siv2 = siv1 * o;
        const GmmProblem p1{siv1, weight_matrix(siv1, 0.0), LinkFamily::cubic_power(), 2};
        const GmmProblem p2{siv2, weight_matrix(siv2, 0.0), LinkFamily::cubic_power(), 2};
        const Vector beta = oracle::gaussian(7, 1, rng, 0.3).col(0);
        const double l1 = gmm_loss(beta, p1, d.x, d.y);
        EXPECT_NEAR(l1, gmm_loss(beta, p2, d.x, d.y), 1e-8 * std::max(1.0, l1));
    }
}

TEST(WeightMatrix, UnitVarianceGivesIdentity) {
    std::mt19937_64 rng(9);
    const Matrix z = oracle::gaussian(200000, 4, rng);
    EXPECT_LE(linalg::max_abs(weight_matrix(z) - Matrix::Identity(4, 4)), 0.02);
}

TEST(WeightMatrix, DuplicatedColumnStaysFinite) {
    std::mt19937_64 rng(10);
    Matrix z = oracle::gaussian(500, 4, rng);
    z.col(3) = z.col(0);
    const double ridge = default_ridge(z);
    const Matrix w = weight_matrix(z);
    EXPECT_TRUE(w.allFinite());
    EXPECT_LE(linalg::max_abs(w - w.transpose()), 1e-10 * linalg::max_abs(w));
    const Matrix zc = oracle::centered(z);
    const Matrix cov = zc.transpose() * zc / 500.0;
    const double lam_max = Eigen::SelfAdjointEigenSolver<Matrix>(cov).eigenvalues().maxCoeff();
    const double w_min = Eigen::SelfAdjointEigenSolver<Matrix>(w).eigenvalues().minCoeff();
    EXPECT_GE(w_min, (1.0 - 1e-10) / (lam_max + ridge));
    EXPECT_GT(ridge, 0.0);
    EXPECT_THROW(weight_matrix(z, 0.0), RankError);
}

TEST(GaussNewton, MonotoneAndConverges) {
    for (int r = 0; r < 20; ++r) {
        const Draw d = cubic_draw(300, 6, 1, 1.0, 0.5, 1.0, 400 + r);
        const Matrix siv = centered_siv(d.x, d.lambda);
        const Projection proj{linalg::column_basis(siv).basis, ProjectionMode::Onto};
        const Matrix xs = d.x / 3.0;
        for (const LinkFamily& link : {LinkFamily::cubic_power(), LinkFamily::exponential()}) {
            const ProjectedNls prob{xs, d.y, link, proj};
            const NonlinearFit fit = solve_on_support(prob, {0, 1}, {});
            for (std::size_t i = 1; i < fit.loss_trace.size(); ++i) {
                EXPECT_LE(fit.loss_trace[i], fit.loss_trace[i - 1]);
            }
            EXPECT_TRUE(fit.converged);
        }
    }
}

TEST(NonlinearSiv, LinearLinkMatchesLinearEstimator) {
    for (int r = 0; r < 20; ++r) {
        std::mt19937_64 rng(500 + r);
        const Index n = 400, p = 10;
        const Matrix lambda = oracle::uniform(p, 2, rng, -1.0, 1.0);
        const Matrix u = oracle::gaussian(n, 2, rng);
        const Matrix x = u * lambda.transpose() + oracle::gaussian(n, p, rng);
        Vector beta = Vector::Zero(p);
        beta.head(3).setOnes();
        const Vector y = x * beta + u.col(0) + oracle::gaussian(n, 1, rng);
        NonlinearOptions opts;
        opts.siv.q = 2;
        opts.siv.k = 3;
        const FitResult a = fit_nonlinear_siv(Dataset(x, y), LinkFamily::linear(), opts);
        // both second stages by splicing
        SivOptions linear = opts.siv;
        linear.exhaustive_max_p = 0;
        const FitResult b = fit_siv(Dataset(x, y), linear);
        EXPECT_EQ(a.support, b.support);
        EXPECT_LE((a.beta - b.beta).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(NonlinearSiv, NoiselessCubicRecoversBetaExactly) {
    for (int r = 0; r < 5; ++r) {
        const Draw d = cubic_draw(1000, 10, 2, 2.0, 0.0, 0.0, 600 + r);
        NonlinearOptions opts;
        opts.siv.q = 2;
        opts.siv.k = 2;
        const FitResult fit = fit_nonlinear_siv(Dataset(d.x, d.y), LinkFamily::cubic_power(), opts);
        EXPECT_LE((fit.beta - d.beta).cwiseAbs().maxCoeff(), 1e-6);
        EXPECT_EQ(fit.support, (Support{0, 1}));
    }
}

TEST(NonlinearSiv, NoiselessExponentialRecoversBeta) {
    std::mt19937_64 rng(700);
    const Index n = 1000, p = 8;
    const Matrix lambda = oracle::gaussian(p, 1, rng);
    const Matrix u = oracle::gaussian(n, 1, rng);
    const Matrix x = u * lambda.transpose() + oracle::gaussian(n, p, rng);
    Vector beta = Vector::Zero(p);
    beta(2) = 0.3;
    beta(5) = -0.2;
    const Vector y = (x * beta).array().exp();
    NonlinearOptions opts;
    opts.siv.q = 1;
    opts.siv.k = 2;
    const FitResult fit = fit_nonlinear_siv(Dataset(x, y), LinkFamily::exponential(), opts);
    EXPECT_LE((fit.beta - beta).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(NonlinearSiv, CrossValidationParallelMatchesSerial) {
    for (int r = 0; r < 20; ++r) {
        const Draw d = cubic_draw(300, 8, 2, 2.0, 1.0, 1.0, 800 + r);
        const Matrix siv = centered_siv(d.x, d.lambda);
        CvOptions cv;
        cv.seed = r;
        cv.policy = ExecutionPolicy::Parallel;
        const std::vector<Index> grid = {0, 1, 2, 3, 4};
        const CvResult a = cross_validate_k_nonlinear(d.x, d.y, siv, LinkFamily::cubic_power(), grid, cv);
        const CvResult b = cross_validate_k_nonlinear_serial(d.x, d.y, siv, LinkFamily::cubic_power(), grid, cv);
        EXPECT_EQ(a.k_hat, b.k_hat);
        for (std::size_t i = 0; i < a.table.size(); ++i) {
            EXPECT_EQ(a.table[i].mean_loss, b.table[i].mean_loss);
        }
    }
}

TEST(NonlinearSiv, CubicSettingSelectsTrueSupport) {
    const Draw d = cubic_draw(5000, 10, 2, 2.0, 1.0, 1.0, 900);
    const FitResult fit = fit_nonlinear_siv(Dataset(d.x, d.y), LinkFamily::cubic_power());
    EXPECT_EQ(fit.q_hat, 2);
    EXPECT_LT((fit.beta - d.beta).cwiseAbs().sum(), 0.1);
    EXPECT_TRUE(fit.identifiable);
}
