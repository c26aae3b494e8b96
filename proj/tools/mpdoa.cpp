// mpdoa: simulate snapshots, estimate DOAs, run Monte-Carlo sweeps, print CRBs.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mpdoa/mpdoa.hpp"

namespace fs = std::filesystem;
using namespace mpdoa;

namespace {

constexpr int kExitShortfall = 2;
constexpr int kExitInput = 3;

fs::path output_dir(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("MPDOA_OUT_DIR"); env && *env) return env;
    return ".";
}

// A relative --out file is placed under MPDOA_OUT_DIR when that is set.
fs::path output_file(const std::string& flag, const std::string& fallback) {
    fs::path p = flag.empty() ? fs::path(fallback) : fs::path(flag);
    if (p.is_relative()) {
        if (const char* env = std::getenv("MPDOA_OUT_DIR"); env && *env) p = fs::path(env) / p;
    }
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    return p;
}

std::vector<AngleInterval> parse_intervals(const std::vector<std::string>& specs) {
    std::vector<AngleInterval> out;
    for (const auto& s : specs) {
        const auto colon = s.find(':');
        try {
            if (colon == std::string::npos) {
                const double v = std::stod(s);
                out.push_back({v, v});
            } else {
                out.push_back({std::stod(s.substr(0, colon)), std::stod(s.substr(colon + 1))});
            }
        } catch (const std::logic_error&) {
            throw CLI::ValidationError("--intervals", "expected lo:hi in degrees, got '" + s + "'");
        }
    }
    return out;
}

std::string join_degrees(const std::vector<double>& rad) {
    std::ostringstream os;
    for (std::size_t i = 0; i < rad.size(); ++i) os << (i ? " " : "") << format_number(rad2deg(rad[i]));
    return os.str();
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

struct ScenarioOptions {
    std::vector<std::string> intervals;
    double snr_db = 10.0;
    int t = 10;
    int m = 128;
    std::uint64_t seed = 1;

    void add(CLI::App* app) {
        app->add_option("--intervals", intervals,
                        "source sectors lo:hi in degrees, or a fixed angle (default: the three reference sectors)");
        app->add_option("--snr", snr_db, "SNR in dB per source");
        app->add_option("--T", t, "snapshot count")->check(CLI::PositiveNumber);
        app->add_option("--M", m, "array elements (even)");
        app->add_option("--seed", seed, "random seed");
    }

    std::vector<AngleInterval> resolved() const {
        return intervals.empty() ? reference_intervals() : parse_intervals(intervals);
    }
};

int cmd_simulate(const ScenarioOptions& so, const std::string& out) {
    const Scenario sc = draw_scenario(so.resolved(), so.t, so.seed);
    const SnapshotSet snaps = generate_snapshots(sc, so.m, so.snr_db, so.seed);
    const fs::path path = output_file(out, "snapshots.csv");
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
    std::ostringstream comment;
    comment << "thetas_deg: " << join_degrees(sc.thetas) << "\nsnr_db: " << format_number(so.snr_db)
            << "\nseed: " << so.seed;
    write_snapshots(os, snaps.raw, comment.str());
    std::cout << "wrote " << path.string() << " (M=" << so.m << ", T=" << so.t << ", thetas_deg " << join_degrees(sc.thetas)
              << ")\n";
    return 0;
}

struct EstimateOptions {
    std::string method = "mp";
    std::string in;
    bool generate = false;
    ScenarioOptions scenario;
    int k = 0;
    int l = 7;
    std::string config;
    std::string out;
    std::string trace;
    std::string beliefs;
    double ml_step_deg = 0.01;
};

int cmd_estimate(const EstimateOptions& eo) {
    AlgoConfig algo;
    RefineConfig refine;
    if (!eo.config.empty()) {
        const json cfg = read_json_file(eo.config);
        if (cfg.contains("algo")) algo = cfg.at("algo").get<AlgoConfig>();
        if (cfg.contains("refine")) refine = cfg.at("refine").get<RefineConfig>();
        if (!cfg.contains("algo") && !cfg.contains("refine")) algo = cfg.get<AlgoConfig>();
    }

    CMatrix raw;
    std::vector<double> truth;
    if (eo.generate) {
        const Scenario sc = draw_scenario(eo.scenario.resolved(), eo.scenario.t, eo.scenario.seed);
        raw = generate_snapshots(sc, eo.scenario.m, eo.scenario.snr_db, eo.scenario.seed).raw;
        truth = sc.thetas;
    } else {
        std::ifstream in(eo.in);
        if (!in) throw std::runtime_error("cannot open '" + eo.in + "'");
        try {
            raw = read_snapshots(in);
        } catch (const ParseError& e) {
            std::cerr << eo.in << ": " << e.what() << '\n';
            return kExitInput;
        }
    }
    const int k = eo.k > 0 ? eo.k : static_cast<int>(truth.size());
    if (k < 1) throw CLI::ValidationError("--K", "source count is required with --in");
    const int m = static_cast<int>(raw.rows());
    const GridDecomposition grid(m, eo.l);

    RunResult details;
    DoaEstimate est;
    const auto start = std::chrono::steady_clock::now();
    bool diverged = false;
    try {
        if (eo.method == "mp") est = estimate_doas(raw, k, grid, algo, &details);
        else if (eo.method == "dft") est = dft_two_stage(raw, k, refine);
        else est = ml_grid(raw, k, eo.ml_step_deg);
    } catch (const MessagePassingError& e) {
        std::cerr << "diverged: " << e.what() << '\n';
        diverged = true;
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (diverged) return kExitShortfall;

    std::cout << "method " << eo.method << "\n";
    std::cout << "theta_deg " << join_degrees(est.thetas()) << "\n";
    for (const auto& s : est.sources)
        std::cout << "  w " << s.w << " alpha " << format_number(s.alpha) << " power " << format_number(s.power) << "\n";
    std::cout << "iterations " << est.iterations << (est.converged ? "" : " (not converged)") << "\n";
    std::cerr << "runtime_ms " << ms << "\n";

    ExperimentRecord rec{eo.method, m, eo.l, k, static_cast<int>(raw.cols()),
                         eo.generate ? eo.scenario.snr_db : std::numeric_limits<double>::quiet_NaN(),
                         eo.generate ? eo.scenario.seed : 0};
    rec.success = !est.shortfall;
    rec.iterations = est.iterations;
    rec.runtime_ms = ms;
    rec.mse_deg2 = rec.rmse_deg = std::numeric_limits<double>::quiet_NaN();
    if (rec.success && !truth.empty() && truth.size() == est.sources.size()) {
        rec.mse_deg2 = match_and_mse(est.thetas(), truth).mse_deg2;
        rec.rmse_deg = std::sqrt(rec.mse_deg2);
        std::cout << "mse_deg2 " << format_number(rec.mse_deg2) << "\n";
    }
    if (!eo.out.empty()) {
        std::ofstream os(output_file(eo.out, eo.out));
        os << kRecordHeader << '\n' << to_csv(rec) << '\n';
    }
    if (!eo.trace.empty() && eo.method == "mp") {
        std::ofstream os(output_file(eo.trace, eo.trace));
        write_trace(os, details.trace);
    }
    if (!eo.beliefs.empty() && eo.method == "mp") {
        std::ofstream os(output_file(eo.beliefs, eo.beliefs));
        write_beliefs(os, details.beliefs, grid);
    }
    if (est.shortfall) {
        std::cerr << "shortfall: found " << est.sources.size() << " of " << k << " sources\n";
        return kExitShortfall;
    }
    return 0;
}

struct SweepOptions {
    std::string spec;
    int jobs = 1;
    std::string out;
    int trials = 0;
    long long base_seed = -1;
    std::vector<std::string> methods;
};

int cmd_sweep(const SweepOptions& so) {
    SweepSpec spec;
    json j = so.spec.empty() ? json::object() : read_json_file(so.spec);
    if (so.trials > 0) j["trials"] = so.trials;
    if (so.base_seed >= 0) j["base_seed"] = so.base_seed;
    if (!so.methods.empty()) j["methods"] = so.methods;
    from_json(j, spec);

    const fs::path dir = output_dir(so.out);
    fs::create_directories(dir);
    std::ofstream rec(dir / "records.csv");
    if (!rec) throw std::runtime_error("cannot write to '" + dir.string() + "'");
    const std::string resolved = json(spec).dump();
    rec << "# config " << resolved << '\n' << kRecordHeader << '\n';
    std::size_t written = 0;
    run_sweep(spec, so.jobs, [&](const ExperimentRecord& r) {
        rec << to_csv(r) << '\n';
        rec.flush();
        if (++written % 100 == 0) std::cerr << written << " / " << expected_rows(spec) << " records\n";
    });
    rec.close();

    // re-read so the summary reflects exactly what was written
    std::vector<ExperimentRecord> records;
    {
        std::ifstream in(dir / "records.csv");
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#' || line.rfind("method,", 0) == 0) continue;
            std::stringstream ss(line);
            std::string f[12];
            for (auto& x : f) std::getline(ss, x, ',');
            ExperimentRecord r;
            r.method = f[0];
            r.m = std::stoi(f[1]);
            r.l = std::stoi(f[2]);
            r.k = std::stoi(f[3]);
            r.t = std::stoi(f[4]);
            r.snr_db = std::stod(f[5]);
            r.seed = std::stoull(f[6]);
            r.mse_deg2 = std::strtod(f[7].c_str(), nullptr);
            r.rmse_deg = std::strtod(f[8].c_str(), nullptr);
            r.success = f[9] == "1";
            r.iterations = std::stoi(f[10]);
            r.runtime_ms = std::stod(f[11]);
            records.push_back(r);
        }
    }
    std::ofstream sum(dir / "summary.csv");
    sum << "# config " << resolved << '\n' << kSummaryHeader << '\n';
    for (const auto& row : aggregate(records)) sum << to_csv(row) << '\n';
    std::cout << "wrote " << records.size() << " records to " << (dir / "records.csv").string() << " and summary to "
              << (dir / "summary.csv").string() << "\n";
    return 0;
}

int cmd_crb(const std::vector<double>& thetas_deg, int m, int t, double snr_db) {
    std::vector<double> th;
    for (double d : thetas_deg) th.push_back(deg2rad(d));
    const CrbResult c = crb(th, m, t, snr_db);
    std::cout << "theta_deg,crb_rad2,crb_deg2,std_deg\n";
    for (std::size_t i = 0; i < th.size(); ++i) {
        const double deg2 = rad2deg(rad2deg(c.variance[i]));
        std::cout << format_number(thetas_deg[i]) << ',' << format_number(c.variance[i]) << ',' << format_number(deg2)
                  << ',' << format_number(std::sqrt(deg2)) << '\n';
    }
    if (c.ill_conditioned) std::cerr << "warning: steering matrix is ill-conditioned\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Off-grid DOA estimation on large uniform linear arrays"};
    app.require_subcommand(1);

    auto* sim = app.add_subcommand("simulate", "generate noisy array snapshots");
    ScenarioOptions sim_opts;
    sim_opts.add(sim);
    std::string sim_out;
    sim->add_option("--out", sim_out, "snapshot file (default snapshots.csv)");

    auto* est = app.add_subcommand("estimate", "estimate DOAs from a snapshot file or a generated scenario");
    EstimateOptions est_opts;
    est->add_option("--method", est_opts.method, "mp, dft or ml")->check(CLI::IsMember({"mp", "dft", "ml"}));
    auto* in_opt = est->add_option("--in", est_opts.in, "snapshot file")->check(CLI::ExistingFile);
    auto* gen_opt = est->add_flag("--generate", est_opts.generate, "simulate the input instead of reading it");
    in_opt->excludes(gen_opt);
    est_opts.scenario.add(est);
    est->add_option("--K", est_opts.k, "number of sources (default: number of intervals)");
    est->add_option("--L", est_opts.l, "kernel taps kept per grid point");
    est->add_option("--config", est_opts.config, "JSON with 'algo' and/or 'refine' sections")->check(CLI::ExistingFile);
    est->add_option("--ml-step", est_opts.ml_step_deg, "ML grid step in degrees");
    est->add_option("--out", est_opts.out, "write an experiment record CSV");
    est->add_option("--trace", est_opts.trace, "write the per-iteration trace (mp only)");
    est->add_option("--beliefs", est_opts.beliefs, "write per-grid-point beliefs (mp only)");

    auto* sweep = app.add_subcommand("sweep", "Monte-Carlo sweep over SNR and snapshot count");
    SweepOptions sw;
    sweep->add_option("--spec", sw.spec, "sweep JSON")->check(CLI::ExistingFile);
    sweep->add_option("--jobs", sw.jobs, "worker threads")->check(CLI::PositiveNumber);
    sweep->add_option("--out", sw.out, "output directory (default $MPDOA_OUT_DIR or .)");
    sweep->add_option("--trials", sw.trials, "override trials");
    sweep->add_option("--base-seed", sw.base_seed, "override base_seed");
    sweep->add_option("--methods", sw.methods, "override methods");

    auto* crb_cmd = app.add_subcommand("crb", "deterministic Cramer-Rao bound");
    std::vector<double> crb_thetas;
    int crb_m = 128, crb_t = 10;
    double crb_snr = 10.0;
    crb_cmd->add_option("--thetas", crb_thetas, "angles in degrees")->required();
    crb_cmd->add_option("--M", crb_m, "array elements");
    crb_cmd->add_option("--T", crb_t, "snapshot count");
    crb_cmd->add_option("--snr", crb_snr, "SNR in dB");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*sim) return cmd_simulate(sim_opts, sim_out);
        if (*est) {
            if (est_opts.in.empty() && !est_opts.generate) {
                std::cerr << "estimate: one of --in or --generate is required\n";
                return kExitInput;
            }
            return cmd_estimate(est_opts);
        }
        if (*sweep) return cmd_sweep(sw);
        if (*crb_cmd) return cmd_crb(crb_thetas, crb_m, crb_t, crb_snr);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
