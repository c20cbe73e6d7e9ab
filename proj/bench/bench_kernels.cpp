// Serial reference vs OpenMP kernel for each parallel hot spot.
// Run with OMP_NUM_THREADS set to the core count.

#include "siv/baselines.hpp"
#include "siv/best_subset.hpp"
#include "siv/cross_validation.hpp"
#include "siv/simulation.hpp"

#include <benchmark/benchmark.h>

#include <numeric>
#include <random>

using namespace siv;

namespace {

struct Problem {
    Matrix x;
    Vector y;
};

Problem linear_problem(Index n, Index p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z(0.0, 1.0);
    Problem out{Matrix(n, p), Vector(n)};
    for (Index j = 0; j < p; ++j)
        for (Index i = 0; i < n; ++i) out.x(i, j) = z(rng);
    Vector beta = Vector::Zero(p);
    beta.head(5).setOnes();
    for (Index i = 0; i < n; ++i) out.y(i) = z(rng);
    out.y += out.x * beta;
    return out;
}

void BM_CrossValidateK(benchmark::State& state) {
    const bool parallel = state.range(0) == 1;
    const Problem pr = linear_problem(1000, 40, 1);
    std::vector<Index> grid(11);
    std::iota(grid.begin(), grid.end(), 0);
    CvOptions opts;
    opts.policy = ExecutionPolicy::Parallel;
    for (auto _ : state) {
        CvResult r = parallel ? cross_validate_k(pr.x, pr.y, grid, opts) : cross_validate_k_serial(pr.x, pr.y, grid, opts);
        benchmark::DoNotOptimize(r.k_hat);
    }
}
BENCHMARK(BM_CrossValidateK)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_ExhaustivePath(benchmark::State& state) {
    const auto policy = state.range(0) == 1 ? ExecutionPolicy::Parallel : ExecutionPolicy::Serial;
    const Problem pr = linear_problem(500, 20, 2);
    const GramProblem g = GramProblem::from_data(pr.x, pr.y);
    for (auto _ : state) {
        SubsetFit f = best_subset_exhaustive(g, 6, policy);
        benchmark::DoNotOptimize(f.loss);
    }
}
BENCHMARK(BM_ExhaustivePath)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_LassoCv(benchmark::State& state) {
    const bool parallel = state.range(0) == 1;
    const Problem pr = linear_problem(500, 100, 3);
    const Dataset data(pr.x, pr.y);
    LassoOptions opts;
    opts.policy = ExecutionPolicy::Parallel;
    for (auto _ : state) {
        LassoFit f = parallel ? lasso_cd(data, opts) : lasso_cd_serial(data, opts);
        benchmark::DoNotOptimize(f.intercept);
    }
}
BENCHMARK(BM_LassoCv)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_MonteCarlo(benchmark::State& state) {
    const bool parallel = state.range(0) == 1;
    SimulationConfig cfg;
    cfg.n = 300;
    cfg.p = 30;
    cfg.replicates = 4;
    MonteCarloOptions opts;
    opts.methods = {Method::Siv, Method::Lasso};
    for (auto _ : state) {
        auto recs = parallel ? run_monte_carlo(cfg, opts) : run_monte_carlo_serial(cfg, opts);
        benchmark::DoNotOptimize(recs.data());
    }
}
BENCHMARK(BM_MonteCarlo)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
