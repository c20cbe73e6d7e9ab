#pragma once

#include "siv/common.hpp"
#include "siv/dataset.hpp"
#include "siv/link.hpp"
#include "siv/siv_estimator.hpp"

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>

namespace siv {

enum class NoiseKind { Diagonal, RandomPairs, ArDecay };

/// Covariance D of the exposure noise.
///   Diagonal:    sigma_x^2 I
///   RandomPairs: sigma_x^2 I with `count` random symmetric off-diagonal pairs set to `value`
///   ArDecay:     D_ij = scale * rho^|i - j|
struct NoiseSpec {
    NoiseKind kind = NoiseKind::Diagonal;
    Index count = 20;
    double value = 1.0;
    double scale = 4.0;
    double rho = 0.3;
};

/// LinearG:         Y = X beta + U gamma + e
/// Cubic:           Y = sum_j X_j^3 beta_j + sum_k U_k^3 gamma_k + e
/// ExponentialLink: Y = exp(X^T beta) + sum_k U_k^3 gamma_k + e
/// CubicG:          Y = X beta + sum_k U_k^3 gamma_k + e
enum class Outcome { LinearG, Cubic, ExponentialLink, CubicG };

/// Distribution of the loadings and of gamma.
enum class LoadingDist { Uniform, Normal };  // U(-1, 1) or N(0, 1)

const char* to_string(NoiseKind k);
const char* to_string(Outcome o);
const char* to_string(LoadingDist d);
NoiseKind noise_kind_from_name(const std::string& s);
Outcome outcome_from_name(const std::string& s);
LoadingDist loading_dist_from_name(const std::string& s);

/// Link matching the outcome's causal part (linear for LinearG and CubicG).
LinkFamily link_for(Outcome o);

struct SimulationConfig {
    Index n = 1000;
    Index p = 100;
    Index q = 3;
    Index s = 5;
    double beta_active_value = 1.0;
    double sigma_x = 2.0;
    double sigma_y = 5.0;
    NoiseSpec noise;
    Outcome outcome = Outcome::LinearG;
    LoadingDist loading_dist = LoadingDist::Uniform;
    std::uint64_t seed = 1;
    Index replicates = 100;

    /// Every violated constraint, one message each; empty when valid.
    std::vector<std::string> violations() const;
    /// Throws InputError listing all violations.
    void validate() const;
};

/// Independent 64-bit seed for replicate r, a pure function of (seed, r).
std::uint64_t replicate_seed(std::uint64_t seed, Index replicate);

struct SimulatedReplicate {
    Dataset data;
    Matrix lambda;       // p x q
    Vector gamma;        // q
    Matrix noise_cov;    // p x p; empty for Diagonal and ArDecay (structured)
    int pair_attempts = 0;  // RandomPairs only
};

/// One replicate drawn from its own substream; replicate r does not depend
/// on any other replicate.
SimulatedReplicate generate_replicate(const SimulationConfig& cfg, Index replicate);
Dataset generate_dataset(const SimulationConfig& cfg, Index replicate);

/// The RandomPairs covariance for a given generator state: sigma_x^2 I plus
/// `count` distinct pairs set to `value`, redrawn (at most 100 times) until
/// the smallest eigenvalue is >= 1e-8. Throws DegenerateInput otherwise.
Matrix random_pairs_covariance(Index p, double sigma_x, Index count, double value, std::mt19937_64& rng,
                               int* attempts = nullptr);

enum class Method { Siv, Lasso, IvLasso, Uhat1, Uhat2, SivNonlinear };

const char* method_key(Method m);
/// Throws InputError naming the key when unknown.
Method method_from_key(const std::string& key);
const std::vector<Method>& all_methods();

struct Metrics {
    double l1_error = 0.0;
    double fdr = 0.0;
    Index support_size = 0;
};

/// l1 = sum |b - b0|; fdr = |A_hat \ A| / max(|A_hat|, 1); supports by exact zero test.
Metrics compute_metrics(const Vector& beta_hat, const Vector& beta_true);

struct MetricsRecord {
    std::string method;
    Index replicate = 0;
    double l1_error = 0.0;
    double fdr = 0.0;
    Index support_size = 0;
    Index k_hat = 0;
    Index q_hat = 0;
    std::int64_t wall_time_ms = 0;
    std::string error;  // empty on success
};

struct MonteCarloOptions {
    std::vector<Method> methods;
    SivOptions siv;             // folds, q/k overrides and factor options; seed is replaced per replicate
    bool oracle_k = false;      // fix k at the true sparsity instead of cross-validating
    bool timing = false;        // wall_time_ms stays 0 unless set
    ExecutionPolicy policy = ExecutionPolicy::Parallel;
};

/// Fits every method on one replicate. Failures are caught and recorded in
/// the `error` field with NaN metrics.
std::vector<MetricsRecord> run_replicate(const SimulationConfig& cfg, Index replicate, const MonteCarloOptions& opts);

/// All replicates, records ordered by (method key, replicate). The result
/// does not depend on the execution policy or the thread count.
std::vector<MetricsRecord> run_monte_carlo(const SimulationConfig& cfg, const MonteCarloOptions& opts);
std::vector<MetricsRecord> run_monte_carlo_serial(const SimulationConfig& cfg, const MonteCarloOptions& opts);

struct SummaryRow {
    std::string method;
    Index n = 0;
    Index p = 0;
    double median_l1 = 0.0;
    double mean_fdr = 0.0;
    Index replicates = 0;  // successful records
};

/// One row per method, sorted by method key. Failed records are skipped.
std::vector<SummaryRow> summarize(const std::vector<MetricsRecord>& records, Index n, Index p);

double median(std::vector<double> v);

extern const char* const kRecordsCsvHeader;
extern const char* const kSummaryTsvHeader;

void write_records_csv(std::ostream& out, const std::vector<MetricsRecord>& records);
void write_records_jsonl(std::ostream& out, const std::vector<MetricsRecord>& records);
void write_summary_tsv(std::ostream& out, const std::vector<SummaryRow>& rows);

/// Parses a records CSV with the fixed header. Throws InputError on any
/// malformed line, naming the line number.
std::vector<MetricsRecord> read_records_csv(std::istream& in);

}  // namespace siv
