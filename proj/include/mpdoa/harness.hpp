#pragma once

// Monte-Carlo sweeps: JSON sweep specifications, per-trial execution and a
// small worker pool that hands records back in a deterministic order.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "array_core.hpp"
#include "baselines.hpp"
#include "message_passing.hpp"
#include "metrics.hpp"
#include "signal_sim.hpp"

namespace mpdoa {

using json = nlohmann::json;

inline void to_json(json& j, const AlgoConfig& c) {
    j = json{{"epsilon_init", c.epsilon_init}, {"eta", c.eta},
             {"lambda_init", c.lambda_init},   {"sigma_s", c.sigma_s},
             {"max_iter", c.max_iter},         {"var_floor", c.var_floor},
             {"var_cap", c.var_cap},           {"damping", c.damping},
             {"gain_floor", c.gain_floor},     {"learn_kernel", c.learn_kernel},
             {"retune_epsilon", c.retune_epsilon},
             {"gamma_uses_belief_variance", c.gamma_uses_belief_variance}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const json& j, AlgoConfig& c) {
    if (!j.is_object()) throw std::invalid_argument("algorithm config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key == "epsilon_init") c.epsilon_init = value.get<double>();
        else if (key == "eta") c.eta = value.get<double>();
        else if (key == "lambda_init") c.lambda_init = value.get<double>();
        else if (key == "sigma_s") c.sigma_s = value.get<double>();
        else if (key == "max_iter") c.max_iter = value.get<int>();
        else if (key == "var_floor") c.var_floor = value.get<double>();
        else if (key == "var_cap") c.var_cap = value.get<double>();
        else if (key == "damping") c.damping = value.get<double>();
        else if (key == "gain_floor") c.gain_floor = value.get<double>();
        else if (key == "learn_kernel") c.learn_kernel = value.get<bool>();
        else if (key == "retune_epsilon") c.retune_epsilon = value.get<bool>();
        else if (key == "gamma_uses_belief_variance") c.gamma_uses_belief_variance = value.get<bool>();
        else throw std::invalid_argument("unknown algorithm config key '" + key + "'");
    }
    c.validate();
}

inline void to_json(json& j, const RefineConfig& r) {
    j = json{{"P", r.points}, {"half_width", r.half_width}, {"suppression", r.suppression}};
}

inline void from_json(const json& j, RefineConfig& r) {
    if (!j.is_object()) throw std::invalid_argument("refine config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key == "P") r.points = value.get<int>();
        else if (key == "half_width") r.half_width = value.get<int>();
        else if (key == "suppression") r.suppression = value.get<int>();
        else throw std::invalid_argument("unknown refine key '" + key + "'");
    }
    r.validate();
}

struct SweepSpec {
    std::vector<std::string> methods{"mp", "dft", "crb"};
    std::vector<double> snr_list_db{-10, -5, 0, 5, 10, 15, 20};
    std::vector<int> t_list{3, 10, 20};
    int trials = 100;
    std::uint64_t base_seed = 1;
    int m = 128;
    int l = 7;
    int k = 3;
    std::vector<AngleInterval> intervals = reference_intervals();
    AlgoConfig algo;
    RefineConfig refine;
    double ml_step_deg = 0.01;

    void validate() const {
        if (methods.empty()) throw std::invalid_argument("sweep: method list is empty");
        for (const auto& mt : methods)
            if (mt != "mp" && mt != "dft" && mt != "ml" && mt != "crb")
                throw std::invalid_argument("sweep: unknown method '" + mt + "'");
        if (trials < 1) throw std::invalid_argument("sweep: trials must be >= 1");
        if (snr_list_db.empty() || t_list.empty()) throw std::invalid_argument("sweep: empty SNR or T list");
        for (int t : t_list)
            if (t < 1) throw std::invalid_argument("sweep: T must be >= 1");
        if (k != static_cast<int>(intervals.size()))
            throw std::invalid_argument("sweep: K must equal the number of angle intervals");
        (void)GridDecomposition(m, l);
        validate_intervals(intervals);
        algo.validate();
        refine.validate();
    }
};

inline void to_json(json& j, const SweepSpec& s) {
    json iv = json::array();
    for (const auto& i : s.intervals) iv.push_back({i.lo_deg, i.hi_deg});
    j = json{{"methods", s.methods},
             {"snr_list_db", s.snr_list_db},
             {"t_list", s.t_list},
             {"trials", s.trials},
             {"base_seed", s.base_seed},
             {"M", s.m},
             {"L", s.l},
             {"K", s.k},
             {"intervals", iv},
             {"algo", s.algo},
             {"refine", s.refine},
             {"ml_step_deg", s.ml_step_deg},
             {"mse_unit", "deg^2"},
             {"crb_variant", "deterministic, known unit source powers"}};
}

inline void from_json(const json& j, SweepSpec& s) {
    if (!j.is_object()) throw std::invalid_argument("sweep spec must be a JSON object");
    bool k_given = false;
    for (const auto& [key, value] : j.items()) {
        if (key == "methods") s.methods = value.get<std::vector<std::string>>();
        else if (key == "snr_list_db") s.snr_list_db = value.get<std::vector<double>>();
        else if (key == "t_list") s.t_list = value.get<std::vector<int>>();
        else if (key == "trials") s.trials = value.get<int>();
        else if (key == "base_seed") s.base_seed = value.get<std::uint64_t>();
        else if (key == "M") s.m = value.get<int>();
        else if (key == "L") s.l = value.get<int>();
        else if (key == "K") {
            s.k = value.get<int>();
            k_given = true;
        } else if (key == "intervals") {
            s.intervals.clear();
            for (const auto& p : value) {
                if (!p.is_array() || p.size() != 2) throw std::invalid_argument("interval must be [lo_deg, hi_deg]");
                s.intervals.push_back({p[0].get<double>(), p[1].get<double>()});
            }
        } else if (key == "algo") s.algo = value.get<AlgoConfig>();
        else if (key == "refine") s.refine = value.get<RefineConfig>();
        else if (key == "ml_step_deg") s.ml_step_deg = value.get<double>();
        else if (key == "mse_unit" || key == "crb_variant") continue;  // informational, written back by to_json
        else throw std::invalid_argument("unknown sweep key '" + key + "'");
    }
    if (!k_given) s.k = static_cast<int>(s.intervals.size());
    s.validate();
}

struct TrialTask {
    std::string method;
    int t = 1;
    double snr_db = 0.0;
    int trial = 0;  ///< -1 for the once-per-cell CRB row
};

/// Tasks in output order: cells (T outer, SNR inner), then methods, then trials.
inline std::vector<TrialTask> plan_tasks(const SweepSpec& spec) {
    std::vector<TrialTask> tasks;
    for (int t : spec.t_list)
        for (double snr : spec.snr_list_db)
            for (const auto& method : spec.methods) {
                if (method == "crb") {
                    tasks.push_back({method, t, snr, -1});
                    continue;
                }
                for (int i = 0; i < spec.trials; ++i) tasks.push_back({method, t, snr, i});
            }
    return tasks;
}

inline std::uint64_t trial_seed(const SweepSpec& spec, int trial) {
    return spec.base_seed + static_cast<std::uint64_t>(trial);
}

/// CRB row: the bound averaged over sources and over the trial scenarios of the cell, in deg^2.
inline ExperimentRecord crb_record(const SweepSpec& spec, int t, double snr_db) {
    ExperimentRecord r{"crb", spec.m, spec.l, spec.k, t, snr_db, spec.base_seed};
    const auto start = std::chrono::steady_clock::now();
    double sum = 0.0;
    bool ok = true;
    for (int i = 0; i < spec.trials; ++i) {
        const Scenario sc = draw_scenario(spec.intervals, t, trial_seed(spec, i));
        const CrbResult c = crb(sc.thetas, spec.m, t, snr_db);
        ok = ok && !c.ill_conditioned;
        for (double v : c.variance) sum += v;
    }
    r.mse_deg2 = rad2deg(rad2deg(sum / (spec.trials * spec.k)));
    r.rmse_deg = std::sqrt(r.mse_deg2);
    r.success = ok;
    r.runtime_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return r;
}

inline DoaEstimate run_method(const std::string& method, const CMatrix& raw, int k, const GridDecomposition& grid,
                              const SweepSpec& spec) {
    if (method == "mp") return estimate_doas(raw, k, grid, spec.algo);
    if (method == "dft") return dft_two_stage(raw, k, spec.refine);
    if (method == "ml") return ml_grid(raw, k, spec.ml_step_deg);
    throw std::invalid_argument("unknown method '" + method + "'");
}

/// One Monte-Carlo trial. Divergence and shortfall become failed records.
inline ExperimentRecord run_trial(const SweepSpec& spec, const TrialTask& task) {
    if (task.method == "crb") return crb_record(spec, task.t, task.snr_db);
    const std::uint64_t seed = trial_seed(spec, task.trial);
    ExperimentRecord r{task.method, spec.m, spec.l, spec.k, task.t, task.snr_db, seed};
    const Scenario sc = draw_scenario(spec.intervals, task.t, seed);
    const SnapshotSet snaps = generate_snapshots(sc, spec.m, task.snr_db, seed);
    const GridDecomposition grid(spec.m, spec.l);
    const auto start = std::chrono::steady_clock::now();
    try {
        const DoaEstimate est = run_method(task.method, snaps.raw, spec.k, grid, spec);
        r.iterations = est.iterations;
        r.success = !est.shortfall;
        if (r.success) {
            r.mse_deg2 = match_and_mse(est.thetas(), sc.thetas).mse_deg2;
            r.rmse_deg = std::sqrt(r.mse_deg2);
        } else {
            r.mse_deg2 = r.rmse_deg = std::numeric_limits<double>::quiet_NaN();
        }
    } catch (const MessagePassingError& e) {
        r.success = false;
        r.iterations = e.iteration();
        r.mse_deg2 = r.rmse_deg = std::numeric_limits<double>::quiet_NaN();
    }
    r.runtime_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return r;
}

/// Runs every task on `jobs` workers. `sink` is called from the calling thread,
/// once per record, in plan order, as soon as the prefix up to that record is done.
inline std::vector<ExperimentRecord> run_sweep(const SweepSpec& spec, int jobs,
                                               const std::function<void(const ExperimentRecord&)>& sink = {}) {
    spec.validate();
    if (jobs < 1) throw std::invalid_argument("jobs must be >= 1");
    const std::vector<TrialTask> tasks = plan_tasks(spec);
    std::vector<std::optional<ExperimentRecord>> done(tasks.size());
    std::mutex mu;
    std::condition_variable cv;
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;

    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            std::optional<ExperimentRecord> rec;
            try {
                rec = run_trial(spec, tasks[i]);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
                next = tasks.size();
            }
            {
                std::lock_guard lock(mu);
                done[i] = std::move(rec);
            }
            cv.notify_one();
        }
    };

    std::vector<std::thread> pool;
    const int n = std::min<int>(jobs, static_cast<int>(std::max<std::size_t>(tasks.size(), 1)));
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);

    std::vector<ExperimentRecord> out;
    out.reserve(tasks.size());
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return done[i].has_value() || failure; });
        if (failure) break;
        out.push_back(*done[i]);
        lock.unlock();
        if (sink) sink(out.back());
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
    return out;
}

/// Expected row count: (non-CRB methods) * cells * trials + cells for a CRB method.
inline std::size_t expected_rows(const SweepSpec& spec) {
    const std::size_t cells = spec.t_list.size() * spec.snr_list_db.size();
    std::size_t rows = 0;
    for (const auto& m : spec.methods) rows += m == "crb" ? cells : cells * static_cast<std::size_t>(spec.trials);
    return rows;
}

}  // namespace mpdoa
