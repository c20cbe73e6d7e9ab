#include "siv/simulation.hpp"

#include "siv/baselines.hpp"
#include "siv/nonlinear_gmm.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace siv {

const char* to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::Diagonal:
            return "diagonal";
        case NoiseKind::RandomPairs:
            return "random_pairs";
        default:
            return "ar_decay";
    }
}

const char* to_string(Outcome o) {
    switch (o) {
        case Outcome::LinearG:
            return "linear";
        case Outcome::Cubic:
            return "cubic";
        case Outcome::ExponentialLink:
            return "exp";
        default:
            return "cubic_g";
    }
}

const char* to_string(LoadingDist d) {
    return d == LoadingDist::Uniform ? "uniform" : "normal";
}

NoiseKind noise_kind_from_name(const std::string& s) {
    if (s == "diagonal") return NoiseKind::Diagonal;
    if (s == "random_pairs") return NoiseKind::RandomPairs;
    if (s == "ar_decay") return NoiseKind::ArDecay;
    throw InputError("unknown noise kind '" + s + "' (expected diagonal, random_pairs or ar_decay)");
}

Outcome outcome_from_name(const std::string& s) {
    if (s == "linear") return Outcome::LinearG;
    if (s == "cubic") return Outcome::Cubic;
    if (s == "exp") return Outcome::ExponentialLink;
    if (s == "cubic_g") return Outcome::CubicG;
    throw InputError("unknown outcome '" + s + "' (expected linear, cubic, exp or cubic_g)");
}

LoadingDist loading_dist_from_name(const std::string& s) {
    if (s == "uniform") return LoadingDist::Uniform;
    if (s == "normal") return LoadingDist::Normal;
    throw InputError("unknown loading_dist '" + s + "' (expected uniform or normal)");
}

LinkFamily link_for(Outcome o) {
    switch (o) {
        case Outcome::Cubic:
            return LinkFamily::cubic_power();
        case Outcome::ExponentialLink:
            return LinkFamily::exponential();
        default:
            return LinkFamily::linear();
    }
}

std::vector<std::string> SimulationConfig::violations() const {
    std::vector<std::string> v;
    if (n < 2) v.push_back("n must be >= 2");
    if (p < 1) v.push_back("p must be >= 1");
    if (q < 0) v.push_back("q must be >= 0");
    if (s < 0) v.push_back("s must be >= 0");
    if (s > p) v.push_back("s must be <= p");
    if (!(sigma_x >= 0.0) || !std::isfinite(sigma_x)) v.push_back("sigma_x must be finite and >= 0");
    if (!(sigma_y >= 0.0) || !std::isfinite(sigma_y)) v.push_back("sigma_y must be finite and >= 0");
    if (!std::isfinite(beta_active_value)) v.push_back("beta_active_value must be finite");
    if (replicates < 1) v.push_back("replicates must be >= 1");
    if (noise.kind == NoiseKind::RandomPairs) {
        const double pairs = 0.5 * static_cast<double>(p) * static_cast<double>(p - 1);
        if (noise.count < 0 || static_cast<double>(noise.count) > pairs) {
            v.push_back("noise.count must lie in [0, p(p-1)/2]");
        }
        if (!std::isfinite(noise.value)) v.push_back("noise.value must be finite");
    }
    if (noise.kind == NoiseKind::ArDecay) {
        if (!(noise.scale > 0.0)) v.push_back("noise.scale must be > 0");
        if (!(std::abs(noise.rho) < 1.0)) v.push_back("noise.rho must lie in (-1, 1)");
    }
    return v;
}

void SimulationConfig::validate() const {
    const auto v = violations();
    if (v.empty()) return;
    std::ostringstream msg;
    msg << "invalid simulation config:";
    for (const auto& s : v) msg << " " << s << ";";
    throw InputError(msg.str());
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Explicit loops fix the draw order (row by row).
Matrix draw_normal(Index rows, Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) m(i, j) = nd(rng);
    }
    return m;
}

Matrix draw_loading(Index rows, Index cols, LoadingDist dist, std::mt19937_64& rng) {
    if (dist == LoadingDist::Normal) return draw_normal(rows, cols, rng);
    std::uniform_real_distribution<double> ud(-1.0, 1.0);
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) m(i, j) = ud(rng);
    }
    return m;
}

}  // namespace

std::uint64_t replicate_seed(std::uint64_t seed, Index replicate) {
    return splitmix64(splitmix64(seed) ^ splitmix64(static_cast<std::uint64_t>(replicate) + 0x632BE59BD9B4E019ULL));
}

Matrix random_pairs_covariance(Index p, double sigma_x, Index count, double value, std::mt19937_64& rng,
                               int* attempts) {
    std::uniform_int_distribution<Index> pick(0, p - 1);
    for (int attempt = 1; attempt <= 100; ++attempt) {
        Matrix d = sigma_x * sigma_x * Matrix::Identity(p, p);
        std::set<std::pair<Index, Index>> chosen;
        while (static_cast<Index>(chosen.size()) < count) {
            Index i = pick(rng);
            Index j = pick(rng);
            if (i == j) continue;
            if (i > j) std::swap(i, j);
            chosen.emplace(i, j);
        }
        for (const auto& [i, j] : chosen) {
            d(i, j) = value;
            d(j, i) = value;
        }
        const double min_eig = Eigen::SelfAdjointEigenSolver<Matrix>(d, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
        if (min_eig >= 1e-8) {
            if (attempts) *attempts = attempt;
            return d;
        }
    }
    throw DegenerateInput("random_pairs noise covariance is not positive definite after 100 draws");
}

SimulatedReplicate generate_replicate(const SimulationConfig& cfg, Index replicate) {
    cfg.validate();
    std::mt19937_64 rng(replicate_seed(cfg.seed, replicate));
    const Index n = cfg.n, p = cfg.p, q = cfg.q;

    const Matrix lambda = draw_loading(p, q, cfg.loading_dist, rng);
    const Vector gamma = draw_loading(q, 1, cfg.loading_dist, rng).col(0);
    Matrix noise_cov;
    int attempts = 0;
    if (cfg.noise.kind == NoiseKind::RandomPairs) {
        noise_cov = random_pairs_covariance(p, cfg.sigma_x, cfg.noise.count, cfg.noise.value, rng, &attempts);
    }
    const Matrix u = draw_normal(n, q, rng);
    const Matrix z = draw_normal(n, p, rng);
    const Vector e = draw_normal(n, 1, rng).col(0);

    Matrix eps;
    switch (cfg.noise.kind) {
        case NoiseKind::Diagonal:
            eps = cfg.sigma_x * z;
            break;
        case NoiseKind::RandomPairs: {
            const Eigen::LLT<Matrix> llt(noise_cov);
            eps = z * llt.matrixL().transpose();
            break;
        }
        case NoiseKind::ArDecay: {
            // stationary AR(1) across columns has covariance scale * rho^|i-j|
            eps.resize(n, p);
            const double rho = cfg.noise.rho;
            const double innov = std::sqrt(cfg.noise.scale * (1.0 - rho * rho));
            eps.col(0) = std::sqrt(cfg.noise.scale) * z.col(0);
            for (Index j = 1; j < p; ++j) eps.col(j) = rho * eps.col(j - 1) + innov * z.col(j);
            break;
        }
    }
    Matrix x = u * lambda.transpose() + eps;

    Vector beta = Vector::Zero(p);
    beta.head(cfg.s).setConstant(cfg.beta_active_value);

    Vector y;
    const Vector g_linear = u * gamma;
    const Vector g_cubic = u.array().cube().matrix() * gamma;
    switch (cfg.outcome) {
        case Outcome::LinearG:
            y = x * beta + g_linear;
            break;
        case Outcome::Cubic:
            y = x.array().cube().matrix() * beta + g_cubic;
            break;
        case Outcome::ExponentialLink:
            y = (x * beta).array().exp().matrix() + g_cubic;
            break;
        case Outcome::CubicG:
            y = x * beta + g_cubic;
            break;
    }
    y += cfg.sigma_y * e;

    SimulatedReplicate rep{Dataset(std::move(x), std::move(y), beta), lambda, gamma, std::move(noise_cov), attempts};
    return rep;
}

Dataset generate_dataset(const SimulationConfig& cfg, Index replicate) {
    return generate_replicate(cfg, replicate).data;
}

const char* method_key(Method m) {
    switch (m) {
        case Method::Siv:
            return "siv";
        case Method::Lasso:
            return "lasso";
        case Method::IvLasso:
            return "iv_lasso";
        case Method::Uhat1:
            return "uhat1";
        case Method::Uhat2:
            return "uhat2";
        default:
            return "siv_nonlinear";
    }
}

const std::vector<Method>& all_methods() {
    static const std::vector<Method> all = {Method::Siv,   Method::Lasso, Method::IvLasso,
                                            Method::Uhat1, Method::Uhat2, Method::SivNonlinear};
    return all;
}

Method method_from_key(const std::string& key) {
    for (Method m : all_methods()) {
        if (key == method_key(m)) return m;
    }
    throw InputError("unknown method key '" + key + "'");
}

Metrics compute_metrics(const Vector& beta_hat, const Vector& beta_true) {
    if (beta_hat.size() != beta_true.size()) {
        throw DimensionError("compute_metrics: estimate and truth have different lengths");
    }
    Metrics m;
    m.l1_error = (beta_hat - beta_true).cwiseAbs().sum();
    Index false_pos = 0;
    for (Index j = 0; j < beta_hat.size(); ++j) {
        if (beta_hat(j) != 0.0) {
            ++m.support_size;
            if (beta_true(j) == 0.0) ++false_pos;
        }
    }
    m.fdr = static_cast<double>(false_pos) / static_cast<double>(std::max<Index>(m.support_size, 1));
    return m;
}

std::vector<MetricsRecord> run_replicate(const SimulationConfig& cfg, Index replicate, const MonteCarloOptions& opts) {
    const SimulatedReplicate rep = generate_replicate(cfg, replicate);
    const Dataset& data = rep.data;
    const Vector& truth = *data.true_beta();

    SivOptions so = opts.siv;
    so.seed = replicate_seed(cfg.seed ^ 0xC2B2AE3D27D4EB4FULL, replicate);
    so.policy = ExecutionPolicy::Serial;
    if (opts.oracle_k) so.k = cfg.s;
    NonlinearOptions no;
    no.siv = so;
    const LinkFamily link = link_for(cfg.outcome);

    LassoOptions lo;
    lo.folds = so.folds;
    lo.seed = so.seed;
    std::optional<LassoFit> lasso;
    auto get_lasso = [&]() -> const LassoFit& {
        if (!lasso) lasso = lasso_cd_serial(data, lo);
        return *lasso;
    };

    std::vector<MetricsRecord> out;
    for (Method m : opts.methods) {
        MetricsRecord rec;
        rec.method = method_key(m);
        rec.replicate = replicate;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            Vector beta;
            switch (m) {
                case Method::Siv: {
                    const FitResult f = fit_siv(data, so);
                    beta = f.beta;
                    rec.k_hat = f.k_hat;
                    rec.q_hat = f.q_hat;
                    break;
                }
                case Method::Lasso: {
                    beta = get_lasso().beta;
                    rec.k_hat = compute_metrics(beta, truth).support_size;
                    break;
                }
                case Method::IvLasso: {
                    const Matrix xc = center_columns(data.x());
                    const FactorStage stage = run_factor_stage(xc, so);
                    const Matrix siv = xc * stage.complement.basis;
                    const IvLassoFit f = iv_lasso(data, siv, get_lasso());
                    beta = f.beta;
                    rec.k_hat = static_cast<Index>(f.support.size());
                    rec.q_hat = stage.factors.q_hat;
                    break;
                }
                case Method::Uhat1:
                case Method::Uhat2: {
                    const auto t = m == Method::Uhat1 ? UhatTransform::Identity : UhatTransform::Cube;
                    const UhatFit f = fit_uhat(data, link, t, no);
                    beta = f.beta;
                    rec.k_hat = f.k_hat;
                    rec.q_hat = f.q_hat;
                    break;
                }
                case Method::SivNonlinear: {
                    const FitResult f = fit_nonlinear_siv(data, link, no);
                    beta = f.beta;
                    rec.k_hat = f.k_hat;
                    rec.q_hat = f.q_hat;
                    break;
                }
            }
            const Metrics met = compute_metrics(beta, truth);
            rec.l1_error = met.l1_error;
            rec.fdr = met.fdr;
            rec.support_size = met.support_size;
        } catch (const std::exception& e) {
            rec.l1_error = std::numeric_limits<double>::quiet_NaN();
            rec.fdr = std::numeric_limits<double>::quiet_NaN();
            rec.support_size = 0;
            rec.error = e.what();
        }
        if (opts.timing) {
            rec.wall_time_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                   std::chrono::steady_clock::now() - t0)
                                   .count();
        }
        out.push_back(std::move(rec));
    }
    return out;
}

namespace {

std::vector<MetricsRecord> flatten_sorted(std::vector<std::vector<MetricsRecord>>& per_rep) {
    std::vector<MetricsRecord> all;
    for (auto& v : per_rep) {
        for (auto& r : v) all.push_back(std::move(r));
    }
    std::stable_sort(all.begin(), all.end(), [](const MetricsRecord& a, const MetricsRecord& b) {
        if (a.method != b.method) return a.method < b.method;
        return a.replicate < b.replicate;
    });
    return all;
}

void check_mc(const SimulationConfig& cfg, const MonteCarloOptions& opts) {
    cfg.validate();
    if (opts.methods.empty()) throw InputError("run_monte_carlo: no methods given");
}

}  // namespace

std::vector<MetricsRecord> run_monte_carlo_serial(const SimulationConfig& cfg, const MonteCarloOptions& opts) {
    check_mc(cfg, opts);
    std::vector<std::vector<MetricsRecord>> per_rep(static_cast<std::size_t>(cfg.replicates));
    for (Index r = 0; r < cfg.replicates; ++r) per_rep[r] = run_replicate(cfg, r, opts);
    return flatten_sorted(per_rep);
}

std::vector<MetricsRecord> run_monte_carlo(const SimulationConfig& cfg, const MonteCarloOptions& opts) {
    bool parallel = opts.policy == ExecutionPolicy::Parallel;
#ifdef _OPENMP
    parallel = parallel && !omp_in_parallel() && omp_get_max_threads() > 1;
#else
    parallel = false;
#endif
    if (!parallel) return run_monte_carlo_serial(cfg, opts);
    check_mc(cfg, opts);
    std::vector<std::vector<MetricsRecord>> per_rep(static_cast<std::size_t>(cfg.replicates));
#pragma omp parallel for schedule(dynamic)
    for (Index r = 0; r < cfg.replicates; ++r) {
        per_rep[r] = run_replicate(cfg, r, opts);
    }
    return flatten_sorted(per_rep);
}

double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::vector<SummaryRow> summarize(const std::vector<MetricsRecord>& records, Index n, Index p) {
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by;
    for (const auto& r : records) {
        auto& slot = by[r.method];
        if (!r.error.empty()) continue;
        slot.first.push_back(r.l1_error);
        slot.second.push_back(r.fdr);
    }
    std::vector<SummaryRow> rows;
    for (const auto& [method, vals] : by) {
        SummaryRow row;
        row.method = method;
        row.n = n;
        row.p = p;
        row.replicates = static_cast<Index>(vals.first.size());
        row.median_l1 = median(vals.first);
        double sum = 0.0;
        for (double f : vals.second) sum += f;
        row.mean_fdr = vals.second.empty() ? std::numeric_limits<double>::quiet_NaN()
                                           : sum / static_cast<double>(vals.second.size());
        rows.push_back(std::move(row));
    }
    return rows;
}

const char* const kRecordsCsvHeader = "method,replicate,l1_error,fdr,support_size,k_hat,q_hat,wall_time_ms";
const char* const kSummaryTsvHeader = "method\tn\tp\tmedian_l1\tmean_fdr";

namespace {

// Shortest round-trip representation, independent of stream state.
std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace

void write_records_csv(std::ostream& out, const std::vector<MetricsRecord>& records) {
    out << kRecordsCsvHeader << '\n';
    for (const auto& r : records) {
        out << r.method << ',' << r.replicate << ',' << fmt(r.l1_error) << ',' << fmt(r.fdr) << ','
            << r.support_size << ',' << r.k_hat << ',' << r.q_hat << ',' << r.wall_time_ms << '\n';
    }
}

void write_records_jsonl(std::ostream& out, const std::vector<MetricsRecord>& records) {
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["method"] = r.method;
        j["replicate"] = r.replicate;
        j["l1_error"] = r.l1_error;  // NaN becomes null
        j["fdr"] = r.fdr;
        j["support_size"] = r.support_size;
        j["k_hat"] = r.k_hat;
        j["q_hat"] = r.q_hat;
        j["wall_time_ms"] = r.wall_time_ms;
        if (!r.error.empty()) j["error"] = r.error;
        out << j.dump() << '\n';
    }
}

void write_summary_tsv(std::ostream& out, const std::vector<SummaryRow>& rows) {
    out << kSummaryTsvHeader << '\n';
    for (const auto& r : rows) {
        out << r.method << '\t' << r.n << '\t' << r.p << '\t' << fmt(r.median_l1) << '\t' << fmt(r.mean_fdr) << '\n';
    }
}

namespace {

template <class T>
bool parse_number(const std::string& s, T& out) {
    const char* b = s.data();
    const char* e = b + s.size();
    const auto res = std::from_chars(b, e, out);
    return res.ec == std::errc() && res.ptr == e;
}

}  // namespace

std::vector<MetricsRecord> read_records_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw InputError("records CSV is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kRecordsCsvHeader) throw InputError("records CSV line 1: unexpected header");
    std::vector<MetricsRecord> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (!line.empty() && line.back() == ',') f.emplace_back();
        MetricsRecord r;
        bool ok = f.size() == 8 && !f[0].empty();
        if (ok) {
            r.method = f[0];
            long long rep = 0, sup = 0, kh = 0, qh = 0, wt = 0;
            ok = parse_number(f[1], rep) && parse_number(f[2], r.l1_error) && parse_number(f[3], r.fdr) &&
                 parse_number(f[4], sup) && parse_number(f[5], kh) && parse_number(f[6], qh) &&
                 parse_number(f[7], wt);
            r.replicate = rep;
            r.support_size = sup;
            r.k_hat = kh;
            r.q_hat = qh;
            r.wall_time_ms = wt;
        }
        if (!ok) {
            throw InputError("records CSV line " + std::to_string(lineno) + ": malformed record");
        }
        if (std::isnan(r.l1_error)) r.error = "failed";
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace siv
