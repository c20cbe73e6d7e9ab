#pragma once

#include "siv/common.hpp"
#include "siv/simulation.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace siv::cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// Exit-code contract.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 1;
inline constexpr int kExitNumerical = 2;
inline constexpr int kExitNotIdentifiable = 3;

/// Numeric CSV with optional header row.
struct CsvTable {
    std::vector<std::string> names;  // header fields, or x1..xp when there is none
    Matrix values;
};

/// Reads a numeric CSV. With `header_required` the first line is always the
/// header; otherwise it is taken as a header only when some field is not a
/// number. Throws InputError naming the row and column of the first bad cell.
CsvTable read_numeric_csv(const fs::path& path, bool header_required);

struct EstimateArgs {
    fs::path x_csv;
    fs::path y_csv;
    fs::path out_dir = "siv_out";
    std::optional<Index> q;
    std::optional<Index> k;
    std::optional<Index> k_max;
    Index folds = 10;
    std::uint64_t seed = 1;
    std::string method = "siv";
    std::string link = "linear";
    int threads = 0;  // 0 keeps the OpenMP default
    std::optional<Index> exhaustive_max_p;
};

struct SimulateArgs {
    fs::path config;
    fs::path out_dir = "sim_out";
    std::optional<Index> replicates;
    std::optional<std::uint64_t> seed;
    int threads = 0;
    bool timing = false;
};

struct BenchArgs {
    fs::path results_dir;
    std::optional<fs::path> out_tsv;  // default <results_dir>/bench_summary.tsv
};

/// One simulation experiment: a base config, the (n, p) grid and the run options.
struct Experiment {
    SimulationConfig base;
    std::vector<Index> n_list;
    std::vector<Index> p_list;
    std::vector<Method> methods;
    bool oracle_k = false;
    Index folds = 10;
    std::optional<Index> k_max;
};

/// Parses and validates an experiment config. Every offending key is
/// collected; throws InputError listing all of them.
Experiment parse_experiment(const nlohmann::json& j);
Experiment load_experiment(const fs::path& path);
ordered_json experiment_to_json(const Experiment& e);

/// "n{N}_p{P}" stem used for per-cell outputs.
std::string cell_stem(Index n, Index p);
/// Inverse of cell_stem on a file name; nullopt when it does not match.
std::optional<std::pair<Index, Index>> parse_cell_stem(const std::string& filename);

int cmd_estimate(const EstimateArgs& args, const std::vector<std::string>& argv, std::ostream& out,
                 std::ostream& err);
int cmd_simulate(const SimulateArgs& args, const std::vector<std::string>& argv, std::ostream& out,
                 std::ostream& err);
int cmd_bench(const BenchArgs& args, const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

/// Full command-line entry point; argv excludes the program name. Dispatches
/// to the commands above and to `replay <manifest.json>`.
int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err);

ordered_json versions();

}  // namespace siv::cli
