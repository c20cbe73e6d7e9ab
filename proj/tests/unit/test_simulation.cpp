#include "siv/simulation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace siv;

namespace {

Matrix sample_cov(const Matrix& x) {
    const Matrix xc = x.rowwise() - x.colwise().mean();
    return xc.transpose() * xc / static_cast<double>(x.rows() - 1);
}

bool same_records(const std::vector<MetricsRecord>& a, const std::vector<MetricsRecord>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& x = a[i];
        const auto& y = b[i];
        const bool l1 = x.l1_error == y.l1_error || (std::isnan(x.l1_error) && std::isnan(y.l1_error));
        if (x.method != y.method || x.replicate != y.replicate || !l1 || x.support_size != y.support_size ||
            x.k_hat != y.k_hat || x.q_hat != y.q_hat || x.error != y.error) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST(Metrics, SpecExamples) {
    Vector truth = Vector::Zero(10);
    truth.head(5).setOnes();
    Metrics m = compute_metrics(truth, truth);
    EXPECT_EQ(m.l1_error, 0.0);
    EXPECT_EQ(m.fdr, 0.0);
    EXPECT_EQ(m.support_size, 5);

    m = compute_metrics(Vector::Zero(10), truth);
    EXPECT_EQ(m.l1_error, 5.0);
    EXPECT_EQ(m.fdr, 0.0);
    EXPECT_EQ(m.support_size, 0);

    Vector est = truth;
    est(6) = 0.2;
    m = compute_metrics(est, truth);
    EXPECT_NEAR(m.fdr, 1.0 / 6.0, 1e-15);
    EXPECT_NEAR(m.l1_error, 0.2, 1e-15);
    EXPECT_EQ(m.support_size, 6);
}

TEST(Metrics, FdrBounds) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int r = 0; r < 20; ++r) {
        Vector truth = Vector::Zero(12);
        truth.head(4).setConstant(1.0);
        Vector sub = Vector::Zero(12);
        Vector disjoint = Vector::Zero(12);
        for (Index j = 0; j < 4; ++j) {
            if (u(rng) > 0) sub(j) = u(rng);
        }
        for (Index j = 4; j < 12; ++j) {
            if (u(rng) > 0) disjoint(j) = u(rng) + 2.0;
        }
        EXPECT_EQ(compute_metrics(sub, truth).fdr, 0.0);
        if (disjoint.cwiseAbs().sum() > 0) EXPECT_EQ(compute_metrics(disjoint, truth).fdr, 1.0);
        const Metrics m = compute_metrics(sub + disjoint, truth);
        EXPECT_GE(m.fdr, 0.0);
        EXPECT_LE(m.fdr, 1.0);
        EXPECT_GE(m.l1_error, 0.0);
    }
    EXPECT_THROW(compute_metrics(Vector::Zero(3), Vector::Zero(4)), DimensionError);
}

TEST(Generator, NoiselessUnconfoundedOutcomeIsExact) {
    SimulationConfig cfg;
    cfg.n = 50;
    cfg.p = 8;
    cfg.q = 0;
    cfg.s = 3;
    cfg.sigma_y = 0.0;
    cfg.beta_active_value = 0.7;
    for (Outcome o : {Outcome::LinearG, Outcome::Cubic, Outcome::ExponentialLink, Outcome::CubicG}) {
        cfg.outcome = o;
        const Dataset d = generate_dataset(cfg, 2);
        const Vector& b = *d.true_beta();
        EXPECT_EQ(b.head(3), Vector::Constant(3, 0.7));
        EXPECT_EQ(b.tail(5), Vector::Zero(5));
        const Vector expect = link_values(link_for(o), d.x(), b);
        EXPECT_LE((d.y() - expect).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, expect.cwiseAbs().maxCoeff()));
    }
}

TEST(Generator, ExposureVarianceMatchesModel) {
    SimulationConfig cfg;
    cfg.n = 5000;
    cfg.p = 20;
    const SimulatedReplicate rep = generate_replicate(cfg, 0);
    const Matrix cov = sample_cov(rep.data.x());
    for (Index j = 0; j < cfg.p; ++j) {
        const double v = rep.lambda.row(j).squaredNorm() + cfg.sigma_x * cfg.sigma_x;
        EXPECT_NEAR(cov(j, j), v, 5.0 * v * std::sqrt(2.0 / cfg.n));
    }
}

TEST(Generator, CovarianceErrorShrinksWithN) {
    for (NoiseKind kind : {NoiseKind::Diagonal, NoiseKind::RandomPairs, NoiseKind::ArDecay}) {
        SimulationConfig cfg;
        cfg.p = 15;
        cfg.noise.kind = kind;
        cfg.noise.count = 10;
        double err[2];
        int idx = 0;
        for (Index n : {1000, 10000}) {
            cfg.n = n;
            // average over a few replicates to steady the comparison
            double acc = 0.0;
            for (Index r = 0; r < 4; ++r) {
                const SimulatedReplicate rep = generate_replicate(cfg, r);
                Matrix d;
                if (kind == NoiseKind::Diagonal) {
                    d = cfg.sigma_x * cfg.sigma_x * Matrix::Identity(cfg.p, cfg.p);
                } else if (kind == NoiseKind::RandomPairs) {
                    d = rep.noise_cov;
                } else {
                    d.resize(cfg.p, cfg.p);
                    for (Index i = 0; i < cfg.p; ++i) {
                        for (Index j = 0; j < cfg.p; ++j) d(i, j) = 4.0 * std::pow(0.3, std::abs(i - j));
                    }
                }
                const Matrix model = rep.lambda * rep.lambda.transpose() + d;
                acc += (sample_cov(rep.data.x()) - model).norm() / model.norm();
            }
            err[idx++] = acc / 4.0;
        }
        EXPECT_GT(err[0] / err[1], 2.0) << to_string(kind);
        EXPECT_LT(err[1], 0.05) << to_string(kind);
    }
}

TEST(Generator, RandomPairsCovarianceIsSymmetricPsd) {
    for (int r = 0; r < 20; ++r) {
        std::mt19937_64 rng(100 + r);
        int attempts = 0;
        const Matrix d = random_pairs_covariance(100, 2.0, 20, 1.0, rng, &attempts);
        EXPECT_EQ(d, d.transpose());
        EXPECT_GE(Eigen::SelfAdjointEigenSolver<Matrix>(d).eigenvalues().minCoeff(), 1e-8);
        EXPECT_GE(attempts, 1);
        Index off = 0;
        for (Index i = 0; i < 100; ++i) {
            EXPECT_EQ(d(i, i), 4.0);
            for (Index j = i + 1; j < 100; ++j) {
                if (d(i, j) != 0.0) {
                    EXPECT_EQ(d(i, j), 1.0);
                    ++off;
                }
            }
        }
        EXPECT_EQ(off, 20);
    }
    // a value large enough to break definiteness on every draw
    std::mt19937_64 rng(5);
    EXPECT_THROW(random_pairs_covariance(4, 0.1, 3, 10.0, rng), DegenerateInput);
}

TEST(Generator, ReplicatesAreIndependentStreams) {
    SimulationConfig cfg;
    cfg.n = 30;
    cfg.p = 6;
    const Dataset a = generate_dataset(cfg, 7);
    const Dataset b = generate_dataset(cfg, 7);
    const Dataset c = generate_dataset(cfg, 8);
    EXPECT_EQ(a.x(), b.x());
    EXPECT_EQ(a.y(), b.y());
    EXPECT_NE(a.x(), c.x());
    EXPECT_NE(replicate_seed(1, 0), replicate_seed(2, 0));
    EXPECT_NE(replicate_seed(1, 0), replicate_seed(1, 1));
}

TEST(Config, ViolationsListEveryKey) {
    SimulationConfig cfg;
    cfg.s = 200;
    cfg.q = -1;
    cfg.replicates = 0;
    cfg.sigma_x = -1.0;
    const auto v = cfg.violations();
    EXPECT_EQ(v.size(), 4u);
    try {
        cfg.validate();
        FAIL();
    } catch (const InputError& e) {
        const std::string msg = e.what();
        for (const char* key : {"s must", "q must", "replicates", "sigma_x"}) {
            EXPECT_NE(msg.find(key), std::string::npos) << key;
        }
    }
    SimulationConfig ar;
    ar.noise.kind = NoiseKind::ArDecay;
    ar.noise.rho = 1.0;
    EXPECT_EQ(ar.violations().size(), 1u);
}

TEST(Registry, KeysRoundTrip) {
    for (Method m : all_methods()) EXPECT_EQ(method_from_key(method_key(m)), m);
    try {
        method_from_key("trim");
        FAIL();
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("trim"), std::string::npos);
    }
}

TEST(MonteCarlo, DeterministicAcrossPoliciesAndInIsolation) {
    SimulationConfig cfg;
    cfg.n = 200;
    cfg.p = 12;
    cfg.q = 2;
    cfg.s = 3;
    cfg.replicates = 6;
    MonteCarloOptions opts;
    opts.methods = {Method::Siv, Method::Lasso, Method::IvLasso, Method::Uhat1};
    opts.policy = ExecutionPolicy::Parallel;
    const auto par = run_monte_carlo(cfg, opts);
    const auto ser = run_monte_carlo_serial(cfg, opts);
    ASSERT_EQ(par.size(), 24u);
    EXPECT_TRUE(same_records(par, ser));
    // ordered by (method, replicate)
    for (std::size_t i = 1; i < par.size(); ++i) {
        EXPECT_TRUE(par[i - 1].method < par[i].method ||
                    (par[i - 1].method == par[i].method && par[i - 1].replicate < par[i].replicate));
    }
    // replicate 4 alone
    const auto alone = run_replicate(cfg, 4, opts);
    for (const auto& r : alone) {
        bool found = false;
        for (const auto& q : par) {
            if (q.method == r.method && q.replicate == 4) {
                EXPECT_TRUE(same_records({q}, {r}));
                found = true;
            }
        }
        EXPECT_TRUE(found);
    }
    for (const auto& r : par) {
        EXPECT_TRUE(r.error.empty()) << r.error;
        EXPECT_EQ(r.wall_time_ms, 0);
    }
}

TEST(MonteCarlo, FailuresAreRecordedAndRunContinues) {
    SimulationConfig cfg;
    cfg.n = 40;
    cfg.p = 10;
    cfg.q = 2;
    cfg.s = 2;
    cfg.replicates = 2;
    MonteCarloOptions opts;
    opts.methods = {Method::Siv, Method::Lasso};
    opts.siv.q = 12;  // out of range, the SIV fit throws
    const auto recs = run_monte_carlo(cfg, opts);
    ASSERT_EQ(recs.size(), 4u);
    for (const auto& r : recs) {
        if (r.method == "siv") {
            EXPECT_FALSE(r.error.empty());
            EXPECT_TRUE(std::isnan(r.l1_error));
        } else {
            EXPECT_TRUE(r.error.empty());
        }
    }
    const auto rows = summarize(recs, 40, 10);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].method, "lasso");
    EXPECT_EQ(rows[1].replicates, 0);
    MonteCarloOptions none;
    EXPECT_THROW(run_monte_carlo(cfg, none), InputError);
}

TEST(Persistence, CsvRoundTripAndSummary) {
    std::vector<MetricsRecord> recs;
    for (int r = 0; r < 5; ++r) {
        MetricsRecord a;
        a.method = "siv";
        a.replicate = r;
        a.l1_error = 0.1 * (r + 1);
        a.fdr = r % 2 ? 0.25 : 0.0;
        a.support_size = 5 + r % 2;
        a.k_hat = 5;
        a.q_hat = 3;
        recs.push_back(a);
        a.method = "lasso";
        a.l1_error = 1.0 / 3.0 + r;
        recs.push_back(a);
    }
    std::stringstream ss;
    write_records_csv(ss, recs);
    const auto back = read_records_csv(ss);
    ASSERT_EQ(back.size(), recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
        EXPECT_EQ(back[i].l1_error, recs[i].l1_error);
        EXPECT_EQ(back[i].method, recs[i].method);
        EXPECT_EQ(back[i].support_size, recs[i].support_size);
    }
    const auto rows = summarize(recs, 1000, 100);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].method, "lasso");
    EXPECT_DOUBLE_EQ(rows[1].median_l1, 0.3);
    EXPECT_DOUBLE_EQ(rows[1].mean_fdr, 0.1);
    std::stringstream tsv;
    write_summary_tsv(tsv, rows);
    std::string header;
    std::getline(tsv, header);
    EXPECT_EQ(header, "method\tn\tp\tmedian_l1\tmean_fdr");

    std::stringstream bad;
    bad << kRecordsCsvHeader << "\nsiv,0,0.1,0,5,5,3,0\nsiv,1,abc,0,5,5,3,0\n";
    try {
        read_records_csv(bad);
        FAIL();
    } catch (const InputError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
    }
    std::stringstream jl;
    write_records_jsonl(jl, {recs[0]});
    EXPECT_EQ(jl.str(),
              "{\"method\":\"siv\",\"replicate\":0,\"l1_error\":0.1,\"fdr\":0.0,\"support_size\":5,\"k_hat\":5,"
              "\"q_hat\":3,\"wall_time_ms\":0}\n");
}
