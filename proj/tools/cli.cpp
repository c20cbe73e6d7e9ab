#include "cli.hpp"

#include "siv/baselines.hpp"
#include "siv/nonlinear_gmm.hpp"
#include "siv/siv_estimator.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#ifndef SIV_VERSION
#define SIV_VERSION "0.0.0"
#endif

namespace siv::cli {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Finite decimal number, nothing else on the field.
std::optional<double> parse_number(const std::string& field) {
    const std::string t = trim(field);
    if (t.empty()) return std::nullopt;
    const char* first = t.data();
    if (*first == '+') ++first;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

void ensure_exists(const fs::path& p, const std::string& what) {
    if (!fs::exists(p)) throw InputError(what + " not found: " + p.string());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot write " + path.string());
    f << text;
}

ordered_json diagnostics_json(const Diagnostics& d) {
    ordered_json j;
    j["values"] = ordered_json::object();
    for (const auto& [k, v] : d.values) j["values"][k] = v;
    j["warnings"] = d.warnings;
    j["notes"] = ordered_json::object();
    for (const auto& [k, v] : d.notes) j["notes"][k] = v;
    return j;
}

std::string shortest(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const InputError*>(&e) || dynamic_cast<const DimensionError*>(&e) ||
        dynamic_cast<const DegenerateInput*>(&e) || dynamic_cast<const SizeError*>(&e)) {
        return kExitInput;
    }
    return kExitNumerical;
}

void set_threads(int threads) {
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#else
    (void)threads;
#endif
}

// Result of any estimation method in a common shape.
struct MethodResult {
    Vector beta;
    Index k_hat = 0;
    Index q_hat = 0;
    std::optional<bool> identifiable;  // SIV methods only
    std::string cv_key = "k";
    std::vector<std::pair<double, CvRow>> cv;  // (grid value, row)
    Diagnostics diagnostics;
};

MethodResult from_fit(const FitResult& f) {
    MethodResult r;
    r.beta = f.beta;
    r.k_hat = f.k_hat;
    r.q_hat = f.q_hat;
    r.identifiable = f.identifiable;
    for (const auto& row : f.cv_table) r.cv.emplace_back(static_cast<double>(row.k), row);
    r.diagnostics = f.diagnostics;
    return r;
}

void lasso_cv(const LassoFit& lasso, MethodResult& r) {
    r.cv_key = "lambda";
    for (std::size_t l = 0; l < lasso.path.lambdas.size(); ++l) {
        CvRow row;
        row.mean_loss = lasso.path.cv_mean[l];
        row.sd_loss = lasso.path.cv_sd[l];
        r.cv.emplace_back(lasso.path.lambdas[l], row);
    }
}

MethodResult run_method(const Dataset& data, Method method, const LinkFamily& link, const SivOptions& so) {
    NonlinearOptions no;
    no.siv = so;
    LassoOptions lo;
    lo.folds = so.folds;
    lo.seed = so.seed;
    lo.policy = so.policy;
    switch (method) {
        case Method::Siv:
            if (link.kind == LinkKind::Linear) return from_fit(fit_siv(data, so));
            return from_fit(fit_nonlinear_siv(data, link, no));
        case Method::SivNonlinear:
            return from_fit(fit_nonlinear_siv(data, link, no));
        case Method::Lasso: {
            const LassoFit f = lasso_cd(data, lo);
            MethodResult r;
            r.beta = f.beta;
            r.k_hat = (f.beta.array() != 0.0).count();
            r.diagnostics = f.diagnostics;
            lasso_cv(f, r);
            return r;
        }
        case Method::IvLasso: {
            const LassoFit lasso = lasso_cd(data, lo);
            const Matrix xc = center_columns(data.x());
            const FactorStage stage = run_factor_stage(xc, so);
            const IvLassoFit f = iv_lasso(data, xc * stage.complement.basis, lasso);
            MethodResult r;
            r.beta = f.beta;
            r.k_hat = static_cast<Index>(f.support.size());
            r.q_hat = stage.factors.q_hat;
            r.diagnostics = stage.diagnostics;
            r.diagnostics.merge(f.diagnostics);
            lasso_cv(lasso, r);
            return r;
        }
        case Method::Uhat1:
        case Method::Uhat2: {
            const auto t = method == Method::Uhat1 ? UhatTransform::Identity : UhatTransform::Cube;
            const UhatFit f = fit_uhat(data, link, t, no);
            MethodResult r;
            r.beta = f.beta;
            r.k_hat = f.k_hat;
            r.q_hat = f.q_hat;
            for (const auto& row : f.cv_table) r.cv.emplace_back(static_cast<double>(row.k), row);
            r.diagnostics = f.diagnostics;
            return r;
        }
    }
    throw InputError("unsupported method");
}

ordered_json estimate_resolved(const EstimateArgs& a) {
    ordered_json j;
    j["x_csv"] = a.x_csv.string();
    j["y_csv"] = a.y_csv.string();
    j["out_dir"] = a.out_dir.string();
    j["q"] = a.q ? ordered_json(*a.q) : ordered_json();
    j["k"] = a.k ? ordered_json(*a.k) : ordered_json();
    j["kmax"] = a.k_max ? ordered_json(*a.k_max) : ordered_json();
    j["folds"] = a.folds;
    j["seed"] = a.seed;
    j["method"] = a.method;
    j["link"] = a.link;
    j["threads"] = a.threads;
    j["exhaustive_max_p"] = a.exhaustive_max_p ? *a.exhaustive_max_p : kExhaustiveMaxP;
    return j;
}

void write_manifest(const fs::path& dir, const std::string& command, const std::vector<std::string>& argv,
                    const std::string& config_path, const ordered_json& inputs, std::uint64_t seed,
                    const ordered_json& resolved, int exit_code) {
    ordered_json m;
    m["command"] = command;
    m["argv"] = argv;
    m["config_path"] = config_path;
    m["inputs"] = inputs;
    m["output_dir"] = dir.string();
    m["seed"] = seed;
    // flags given on the command line, as typed
    ordered_json overrides = ordered_json::object();
    for (std::size_t i = 0; i < argv.size(); ++i) {
        const std::string& t = argv[i];
        if (t.rfind("--", 0) != 0) continue;
        const auto eq = t.find('=');
        if (eq != std::string::npos) {
            overrides[t.substr(2, eq - 2)] = t.substr(eq + 1);
        } else if (i + 1 < argv.size() && argv[i + 1].rfind("--", 0) != 0) {
            overrides[t.substr(2)] = argv[i + 1];
            ++i;
        } else {
            overrides[t.substr(2)] = true;
        }
    }
    m["overrides"] = overrides;
    m["resolved"] = resolved;
    m["versions"] = versions();
    m["exit_code"] = exit_code;
    write_text(dir / "manifest.json", m.dump(2) + "\n");
}

// ---- experiment config ---------------------------------------------------------

const std::set<std::string> kExperimentKeys = {
    "name", "description", "n", "n_list", "p", "p_list", "q", "s", "beta_active_value", "sigma_x", "sigma_y",
    "noise", "outcome", "loading_dist", "seed", "replicates", "methods", "oracle_k", "folds", "k_max"};
const std::set<std::string> kNoiseKeys = {"kind", "count", "value", "scale", "rho"};

struct KeyErrors {
    std::vector<std::string> messages;
    void add(const std::string& key, const std::string& what) { messages.push_back(key + ": " + what); }
};

template <class T>
void read_int(const nlohmann::json& j, const char* key, T& dst, KeyErrors& errs, const std::string& prefix = {}) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number_integer()) {
        errs.add(prefix + key, "expected an integer");
        return;
    }
    if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned() || v.get<std::int64_t>() >= 0) {
            dst = v.get<T>();
        } else {
            errs.add(prefix + key, "expected a non-negative integer");
        }
    } else {
        dst = static_cast<T>(v.get<std::int64_t>());
    }
}

void read_real(const nlohmann::json& j, const char* key, double& dst, KeyErrors& errs,
               const std::string& prefix = {}) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number()) {
        errs.add(prefix + key, "expected a number");
        return;
    }
    dst = v.get<double>();
}

template <class F>
void read_name(const nlohmann::json& j, const char* key, KeyErrors& errs, F assign, const std::string& prefix = {}) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_string()) {
        errs.add(prefix + key, "expected a string");
        return;
    }
    try {
        assign(v.get<std::string>());
    } catch (const std::exception& e) {
        errs.add(prefix + key, e.what());
    }
}

std::vector<Index> read_size_list(const nlohmann::json& j, const char* list_key, const char* single_key,
                                  Index fallback, KeyErrors& errs) {
    if (j.contains(list_key) && j.contains(single_key)) {
        errs.add(list_key, std::string("give either ") + list_key + " or " + single_key + ", not both");
        return {fallback};
    }
    if (j.contains(list_key)) {
        const auto& v = j.at(list_key);
        if (!v.is_array() || v.empty()) {
            errs.add(list_key, "expected a non-empty array of integers");
            return {fallback};
        }
        std::vector<Index> out;
        for (const auto& e : v) {
            if (!e.is_number_integer()) {
                errs.add(list_key, "expected a non-empty array of integers");
                return {fallback};
            }
            out.push_back(e.get<Index>());
        }
        return out;
    }
    Index single = fallback;
    read_int(j, single_key, single, errs);
    return {single};
}

std::string experiment_summary_tsv(const std::vector<SummaryRow>& rows) {
    std::ostringstream s;
    write_summary_tsv(s, rows);
    return s.str();
}

int simulate_experiment(const Experiment& exp, const SimulateArgs& args, const std::vector<std::string>& argv,
                        std::ostream& out, std::ostream& err) {
    fs::create_directories(args.out_dir);
    set_threads(args.threads);
    Experiment e = exp;
    if (args.replicates) e.base.replicates = *args.replicates;
    if (args.seed) e.base.seed = *args.seed;

    ordered_json resolved;
    resolved["experiment"] = experiment_to_json(e);
    resolved["out_dir"] = args.out_dir.string();
    resolved["threads"] = args.threads;
    resolved["timing"] = args.timing;
    const ordered_json inputs = {{"config", args.config.string()}};

    MonteCarloOptions mo;
    mo.methods = e.methods;
    mo.siv.folds = e.folds;
    mo.siv.k_max = e.k_max;
    mo.oracle_k = e.oracle_k;
    mo.timing = args.timing;
    mo.policy = ExecutionPolicy::Parallel;

    int code = kExitOk;
    std::vector<SummaryRow> all_rows;
    try {
        for (Index n : e.n_list) {
            for (Index p : e.p_list) {
                SimulationConfig cfg = e.base;
                cfg.n = n;
                cfg.p = p;
                cfg.validate();
                const auto records = run_monte_carlo(cfg, mo);
                const std::string stem = cell_stem(n, p);
                std::ostringstream csv, jsonl;
                write_records_csv(csv, records);
                write_records_jsonl(jsonl, records);
                write_text(args.out_dir / (stem + ".csv"), csv.str());
                write_text(args.out_dir / (stem + ".jsonl"), jsonl.str());
                std::size_t failed = 0;
                for (const auto& r : records) failed += r.error.empty() ? 0 : 1;
                if (failed) err << "warning: " << stem << ": " << failed << " failed records\n";
                for (auto& row : summarize(records, n, p)) all_rows.push_back(row);
            }
        }
        const std::string tsv = experiment_summary_tsv(all_rows);
        write_text(args.out_dir / "summary.tsv", tsv);
        out << tsv;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        code = exit_code_for(ex);
    }
    write_manifest(args.out_dir, "simulate", argv, args.config.string(), inputs, e.base.seed, resolved, code);
    return code;
}

}  // namespace

ordered_json versions() {
    ordered_json v;
    v["siv"] = SIV_VERSION;
    v["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
    v["nlohmann_json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                         std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                         std::to_string(NLOHMANN_JSON_VERSION_PATCH);
    v["cli11"] = CLI11_VERSION;
#if defined(__clang__)
    v["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
    v["compiler"] = std::string("gcc ") + __VERSION__;
#else
    v["compiler"] = "unknown";
#endif
    return v;
}

CsvTable read_numeric_csv(const fs::path& path, bool header_required) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    const std::string file = path.filename().string();
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
        if (trim(line).empty()) continue;
        rows.push_back(split_csv_line(line));
        line_numbers.push_back(line_no);
    }
    if (rows.empty()) throw InputError(file + ": empty file");

    CsvTable t;
    std::size_t first = 0;
    bool header = header_required;
    if (!header) {
        for (const auto& f : rows[0]) header = header || !parse_number(f);
    }
    const std::size_t width = rows[0].size();
    if (header) {
        for (const auto& f : rows[0]) t.names.push_back(trim(f));
        first = 1;
    } else {
        for (std::size_t c = 0; c < width; ++c) t.names.push_back("x" + std::to_string(c + 1));
    }
    const std::size_t n = rows.size() - first;
    if (n == 0) throw InputError(file + ": no data rows");
    t.values.resize(static_cast<Index>(n), static_cast<Index>(width));
    for (std::size_t r = first; r < rows.size(); ++r) {
        const std::size_t data_row = r - first + 1;
        if (rows[r].size() != width) {
            std::ostringstream msg;
            msg << file << ": row " << data_row << " (line " << line_numbers[r] << ") has " << rows[r].size()
                << " fields, expected " << width;
            throw InputError(msg.str());
        }
        for (std::size_t c = 0; c < width; ++c) {
            const auto v = parse_number(rows[r][c]);
            if (!v) {
                const std::string raw = trim(rows[r][c]);
                std::ostringstream msg;
                msg << file << ": row " << data_row << " (line " << line_numbers[r] << "), column " << c + 1
                    << " '" << t.names[c] << "': "
                    << (raw.empty() ? std::string("missing value") : "'" + raw + "' is not a finite number");
                throw InputError(msg.str());
            }
            t.values(static_cast<Index>(r - first), static_cast<Index>(c)) = *v;
        }
    }
    return t;
}

std::string cell_stem(Index n, Index p) {
    return "n" + std::to_string(n) + "_p" + std::to_string(p);
}

std::optional<std::pair<Index, Index>> parse_cell_stem(const std::string& filename) {
    static const std::regex re(R"(n(\d+)_p(\d+)(\..*)?)");
    std::smatch m;
    if (!std::regex_match(filename, m, re)) return std::nullopt;
    return std::make_pair(static_cast<Index>(std::stoll(m[1].str())), static_cast<Index>(std::stoll(m[2].str())));
}

Experiment parse_experiment(const nlohmann::json& j) {
    if (!j.is_object()) throw InputError("config: top level must be a JSON object");
    KeyErrors errs;
    for (const auto& [key, _] : j.items()) {
        if (!kExperimentKeys.count(key)) errs.add(key, "unknown key");
    }
    Experiment e;
    SimulationConfig& c = e.base;
    for (const char* key : {"name", "description"}) {
        if (j.contains(key) && !j.at(key).is_string()) errs.add(key, "expected a string");
    }
    e.n_list = read_size_list(j, "n_list", "n", c.n, errs);
    e.p_list = read_size_list(j, "p_list", "p", c.p, errs);
    read_int(j, "q", c.q, errs);
    read_int(j, "s", c.s, errs);
    read_real(j, "beta_active_value", c.beta_active_value, errs);
    read_real(j, "sigma_x", c.sigma_x, errs);
    read_real(j, "sigma_y", c.sigma_y, errs);
    read_int(j, "seed", c.seed, errs);
    read_int(j, "replicates", c.replicates, errs);
    read_int(j, "folds", e.folds, errs);
    if (j.contains("k_max")) {
        Index km = 0;
        read_int(j, "k_max", km, errs);
        e.k_max = km;
        if (km < 0) errs.add("k_max", "must be >= 0");
    }
    if (e.folds < 2) errs.add("folds", "must be >= 2");
    read_name(j, "outcome", errs, [&](const std::string& s) { c.outcome = outcome_from_name(s); });
    read_name(j, "loading_dist", errs, [&](const std::string& s) { c.loading_dist = loading_dist_from_name(s); });
    if (j.contains("noise")) {
        const auto& nz = j.at("noise");
        if (!nz.is_object()) {
            errs.add("noise", "expected an object");
        } else {
            for (const auto& [key, _] : nz.items()) {
                if (!kNoiseKeys.count(key)) errs.add("noise." + key, "unknown key");
            }
            read_name(nz, "kind", errs, [&](const std::string& s) { c.noise.kind = noise_kind_from_name(s); },
                      "noise.");
            read_int(nz, "count", c.noise.count, errs, "noise.");
            read_real(nz, "value", c.noise.value, errs, "noise.");
            read_real(nz, "scale", c.noise.scale, errs, "noise.");
            read_real(nz, "rho", c.noise.rho, errs, "noise.");
        }
    }
    if (j.contains("oracle_k")) {
        if (j.at("oracle_k").is_boolean()) {
            e.oracle_k = j.at("oracle_k").get<bool>();
        } else {
            errs.add("oracle_k", "expected true or false");
        }
    }
    if (j.contains("methods")) {
        const auto& m = j.at("methods");
        if (!m.is_array() || m.empty()) {
            errs.add("methods", "expected a non-empty array of method keys");
        } else {
            for (const auto& k : m) {
                if (!k.is_string()) {
                    errs.add("methods", "expected a non-empty array of method keys");
                    continue;
                }
                try {
                    e.methods.push_back(method_from_key(k.get<std::string>()));
                } catch (const std::exception& ex) {
                    errs.add("methods", ex.what());
                }
            }
        }
    } else if (c.outcome == Outcome::LinearG) {
        e.methods = {Method::Siv, Method::Lasso, Method::IvLasso};
    } else {
        e.methods = {Method::SivNonlinear, Method::Uhat1, Method::Uhat2};
    }
    // range checks on every grid cell, each message once
    std::set<std::string> seen;
    for (Index n : e.n_list) {
        for (Index p : e.p_list) {
            SimulationConfig cell = c;
            cell.n = n;
            cell.p = p;
            for (const auto& v : cell.violations()) {
                if (seen.insert(v).second) errs.messages.push_back(v);
            }
        }
    }
    if (!errs.messages.empty()) {
        std::ostringstream msg;
        msg << "invalid config (" << errs.messages.size() << " problem" << (errs.messages.size() > 1 ? "s" : "")
            << "): ";
        for (std::size_t i = 0; i < errs.messages.size(); ++i) msg << (i ? "; " : "") << errs.messages[i];
        throw InputError(msg.str());
    }
    return e;
}

Experiment load_experiment(const fs::path& path) {
    ensure_exists(path, "config");
    std::ifstream in(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw InputError(path.filename().string() + ": " + e.what());
    }
    return parse_experiment(j);
}

ordered_json experiment_to_json(const Experiment& e) {
    const SimulationConfig& c = e.base;
    ordered_json j;
    j["n_list"] = e.n_list;
    j["p_list"] = e.p_list;
    j["q"] = c.q;
    j["s"] = c.s;
    j["beta_active_value"] = c.beta_active_value;
    j["sigma_x"] = c.sigma_x;
    j["sigma_y"] = c.sigma_y;
    ordered_json nz;
    nz["kind"] = to_string(c.noise.kind);
    nz["count"] = c.noise.count;
    nz["value"] = c.noise.value;
    nz["scale"] = c.noise.scale;
    nz["rho"] = c.noise.rho;
    j["noise"] = nz;
    j["outcome"] = to_string(c.outcome);
    j["loading_dist"] = to_string(c.loading_dist);
    j["seed"] = c.seed;
    j["replicates"] = c.replicates;
    std::vector<std::string> keys;
    for (Method m : e.methods) keys.emplace_back(method_key(m));
    j["methods"] = keys;
    j["oracle_k"] = e.oracle_k;
    j["folds"] = e.folds;
    if (e.k_max) j["k_max"] = *e.k_max;
    return j;
}

int cmd_estimate(const EstimateArgs& args, const std::vector<std::string>& argv, std::ostream& out,
                 std::ostream& err) {
    int code = kExitOk;
    const ordered_json inputs = {{"x", args.x_csv.string()}, {"y", args.y_csv.string()}};
    try {
        fs::create_directories(args.out_dir);
    } catch (const std::exception& e) {
        err << "error: cannot create output directory " << args.out_dir.string() << ": " << e.what() << "\n";
        return kExitInput;
    }
    try {
        ensure_exists(args.x_csv, "X file");
        ensure_exists(args.y_csv, "Y file");
        const Method method = method_from_key(args.method);
        const LinkFamily link = link_from_name(args.link);
        if (args.folds < 2) throw InputError("--folds must be >= 2");
        set_threads(args.threads);

        const CsvTable xt = read_numeric_csv(args.x_csv, true);
        const CsvTable yt = read_numeric_csv(args.y_csv, false);
        if (yt.values.cols() != 1) {
            throw InputError(args.y_csv.filename().string() + ": expected a single column, found " +
                             std::to_string(yt.values.cols()));
        }
        if (xt.values.rows() != yt.values.rows()) {
            throw DimensionError("row count mismatch: X has " + std::to_string(xt.values.rows()) +
                                 " rows, Y has " + std::to_string(yt.values.rows()));
        }
        const Dataset data(xt.values, yt.values.col(0));

        SivOptions so;
        so.q = args.q;
        so.k = args.k;
        so.k_max = args.k_max;
        so.folds = args.folds;
        so.seed = args.seed;
        so.policy = ExecutionPolicy::Parallel;
        if (args.exhaustive_max_p) so.exhaustive_max_p = *args.exhaustive_max_p;

        const MethodResult r = run_method(data, method, link, so);

        ordered_json fit;
        fit["method"] = args.method;
        fit["link"] = args.link;
        fit["n"] = data.n();
        fit["p"] = data.p();
        fit["q_hat"] = r.q_hat;
        fit["k_hat"] = r.k_hat;
        if (r.identifiable) {
            fit["identifiable"] = *r.identifiable;
            fit["verdict"] = *r.identifiable ? "Identifiable" : "NotIdentifiable";
        } else {
            fit["identifiable"] = nullptr;
            fit["verdict"] = nullptr;
        }
        ordered_json beta = ordered_json::array();
        ordered_json support = ordered_json::array();
        ordered_json support_idx = ordered_json::array();
        for (Index j = 0; j < r.beta.size(); ++j) {
            const auto& name = xt.names[static_cast<std::size_t>(j)];
            beta.push_back({{"name", name}, {"value", r.beta(j)}});
            if (r.beta(j) != 0.0) {
                support.push_back(name);
                support_idx.push_back(j);
            }
        }
        fit["beta"] = beta;
        fit["support"] = support;
        fit["support_indices"] = support_idx;
        fit["diagnostics"] = diagnostics_json(r.diagnostics);
        write_text(args.out_dir / "fit.json", fit.dump(2) + "\n");

        std::ostringstream cv;
        cv << r.cv_key << ",mean_loss,sd_loss\n";
        for (const auto& [g, row] : r.cv) {
            cv << (r.cv_key == "k" ? std::to_string(row.k) : shortest(g)) << "," << shortest(row.mean_loss)
               << "," << shortest(row.sd_loss) << "\n";
        }
        write_text(args.out_dir / "cv_table.csv", cv.str());

        out << "method " << args.method << ": q_hat=" << r.q_hat << " k_hat=" << r.k_hat << " support={";
        for (std::size_t i = 0; i < support.size(); ++i) out << (i ? "," : "") << support[i].get<std::string>();
        out << "}";
        if (r.identifiable) out << " verdict=" << (*r.identifiable ? "Identifiable" : "NotIdentifiable");
        out << "\n";
        for (const auto& w : r.diagnostics.warnings) err << "warning: " << w << "\n";
        if (r.identifiable && !*r.identifiable) code = kExitNotIdentifiable;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        code = exit_code_for(e);
    }
    write_manifest(args.out_dir, "estimate", argv, "", inputs, args.seed, estimate_resolved(args), code);
    return code;
}

int cmd_simulate(const SimulateArgs& args, const std::vector<std::string>& argv, std::ostream& out,
                 std::ostream& err) {
    Experiment e;
    try {
        e = load_experiment(args.config);
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        try {
            fs::create_directories(args.out_dir);
            ordered_json resolved;
            resolved["out_dir"] = args.out_dir.string();
            write_manifest(args.out_dir, "simulate", argv, args.config.string(),
                           {{"config", args.config.string()}}, args.seed.value_or(0), resolved, kExitInput);
        } catch (const std::exception&) {
        }
        return kExitInput;
    }
    return simulate_experiment(e, args, argv, out, err);
}

int cmd_bench(const BenchArgs& args, const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
    const fs::path out_dir = args.out_tsv ? args.out_tsv->parent_path() : args.results_dir / "bench";
    const fs::path out_file = args.out_tsv ? *args.out_tsv : out_dir / "summary.tsv";
    int code = kExitOk;
    std::vector<std::string> used;
    try {
        ensure_exists(args.results_dir, "results directory");
        if (!fs::is_directory(args.results_dir)) throw InputError(args.results_dir.string() + " is not a directory");
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(args.results_dir)) {
            if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
        }
        std::sort(files.begin(), files.end());
        std::map<std::pair<Index, Index>, std::vector<MetricsRecord>> cells;
        for (const auto& f : files) {
            const std::string name = f.filename().string();
            const auto np = parse_cell_stem(name);
            if (!np) {
                err << "warning: skipping " << name << ": file name does not encode n and p (n<N>_p<P>.csv)\n";
                continue;
            }
            std::ifstream in(f);
            try {
                auto recs = read_records_csv(in);
                auto& dst = cells[*np];
                dst.insert(dst.end(), recs.begin(), recs.end());
                used.push_back(name);
            } catch (const std::exception& e) {
                err << "warning: skipping " << name << ": " << e.what() << "\n";
            }
        }
        if (used.empty()) throw InputError("no parsable result CSVs in " + args.results_dir.string());
        std::vector<SummaryRow> rows;
        for (const auto& [np, recs] : cells) {
            for (auto& row : summarize(recs, np.first, np.second)) rows.push_back(row);
        }
        std::stable_sort(rows.begin(), rows.end(), [](const SummaryRow& a, const SummaryRow& b) {
            return std::tie(a.method, a.n, a.p) < std::tie(b.method, b.n, b.p);
        });
        const std::string tsv = experiment_summary_tsv(rows);
        if (!out_dir.empty()) fs::create_directories(out_dir);
        write_text(out_file, tsv);
        out << tsv;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        code = exit_code_for(e);
    }
    try {
        if (!out_dir.empty()) fs::create_directories(out_dir);
        ordered_json resolved;
        resolved["results_dir"] = args.results_dir.string();
        resolved["out"] = out_file.string();
        resolved["files"] = used;
        write_manifest(out_dir.empty() ? fs::path(".") : out_dir, "bench", argv, "",
                       {{"results_dir", args.results_dir.string()}}, 0, resolved, code);
    } catch (const std::exception& e) {
        err << "warning: manifest not written: " << e.what() << "\n";
    }
    return code;
}

namespace {

int run_impl(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err,
             const Experiment* replay_experiment) {
    CLI::App app{"Synthetic-instrument estimation, simulation and benchmark summaries", "siv"};
    app.require_subcommand(1);
    app.set_version_flag("--version", SIV_VERSION);

    EstimateArgs ea;
    auto* est = app.add_subcommand("estimate", "Fit on user data: X CSV with header, single-column Y CSV");
    est->add_option("x_csv,--x", ea.x_csv, "Exposure matrix CSV (header row of names)")->required();
    est->add_option("y_csv,--y", ea.y_csv, "Outcome CSV, one column")->required();
    est->add_option("--out", ea.out_dir, "Output directory")->capture_default_str();
    est->add_option("--q", ea.q, "Force the number of factors");
    est->add_option("--k", ea.k, "Force the sparsity (skips cross-validation)");
    est->add_option("--kmax", ea.k_max, "Largest k in the cross-validation grid");
    est->add_option("--folds", ea.folds, "Cross-validation folds")->capture_default_str();
    est->add_option("--seed", ea.seed, "Fold assignment seed")->capture_default_str();
    est->add_option("--method", ea.method, "siv, siv_nonlinear, lasso, iv_lasso, uhat1 or uhat2")
        ->capture_default_str();
    est->add_option("--link", ea.link, "linear, cubic or exp")->capture_default_str();
    est->add_option("--threads", ea.threads, "OpenMP threads (0 = default)")->capture_default_str();
    est->add_option("--exhaustive-max-p", ea.exhaustive_max_p, "Largest p solved by exhaustive search");

    SimulateArgs sa;
    auto* sim = app.add_subcommand("simulate", "Run a Monte Carlo experiment from a JSON config");
    sim->add_option("config", sa.config, "Experiment config (see docs/config.md)")->required();
    sim->add_option("--out", sa.out_dir, "Output directory")->capture_default_str();
    sim->add_option("--replicates", sa.replicates, "Override the replicate count");
    sim->add_option("--seed", sa.seed, "Override the base seed");
    sim->add_option("--threads", sa.threads, "OpenMP threads (0 = default)")->capture_default_str();
    sim->add_flag("--timing", sa.timing, "Record wall_time_ms (makes outputs run-dependent)");

    BenchArgs ba;
    std::optional<fs::path> bench_out;
    auto* bench = app.add_subcommand("bench", "Summarize result CSVs named n<N>_p<P>.csv");
    bench->add_option("results_dir", ba.results_dir, "Directory of MetricsRecord CSVs")->required();
    bench->add_option("--out", bench_out, "Summary TSV path (default <results_dir>/bench/summary.tsv)");

    fs::path manifest_path;
    std::optional<fs::path> replay_out;
    auto* replay = app.add_subcommand("replay", "Re-run the command recorded in a manifest.json");
    replay->add_option("manifest", manifest_path, "manifest.json from an earlier run")->required();
    replay->add_option("--out", replay_out, "Write to this directory instead of the recorded one");

    std::vector<std::string> rev(argv.rbegin(), argv.rend());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitInput;
    }

    try {
        if (est->parsed()) return cmd_estimate(ea, argv, out, err);
        if (sim->parsed()) {
            if (replay_experiment) return simulate_experiment(*replay_experiment, sa, argv, out, err);
            return cmd_simulate(sa, argv, out, err);
        }
        if (bench->parsed()) {
            ba.out_tsv = bench_out;
            return cmd_bench(ba, argv, out, err);
        }
        if (replay->parsed()) {
            ensure_exists(manifest_path, "manifest");
            std::ifstream in(manifest_path);
            nlohmann::json m;
            try {
                m = nlohmann::json::parse(in);
            } catch (const nlohmann::json::parse_error& e) {
                throw InputError(manifest_path.filename().string() + ": " + e.what());
            }
            if (!m.contains("argv") || !m["argv"].is_array() || m["argv"].empty()) {
                throw InputError("manifest has no argv");
            }
            std::vector<std::string> original = m["argv"].get<std::vector<std::string>>();
            if (original.front() == "replay") throw InputError("manifest records a replay");
            if (replay_out) {
                bool replaced = false;
                for (std::size_t i = 0; i + 1 < original.size(); ++i) {
                    if (original[i] == "--out") {
                        original[i + 1] = replay_out->string();
                        replaced = true;
                    }
                }
                if (!replaced) {
                    original.push_back("--out");
                    original.push_back(replay_out->string());
                }
            }
            if (original.front() == "simulate" && m.contains("resolved") && m["resolved"].contains("experiment")) {
                const Experiment exp = parse_experiment(m["resolved"]["experiment"]);
                return run_impl(original, out, err, &exp);
            }
            return run_impl(original, out, err, nullptr);
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return kExitInput;
}

}  // namespace

int run(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
    return run_impl(argv, out, err, nullptr);
}

}  // namespace siv::cli
