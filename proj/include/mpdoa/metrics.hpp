#pragma once

// Angle error with optimal estimate-to-truth assignment, Monte-Carlo records
// and their per-cell aggregation.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "array_core.hpp"

namespace mpdoa {

struct Assignment {
    double mse_deg2 = 0.0;
    std::vector<int> truth_of;  ///< truth_of[i] = truth index paired with estimate i
};

/// Minimum-total-squared-error bijection between estimates and truths (radians in,
/// degrees^2 out), exhaustive over all K! pairings.
inline Assignment match_and_mse(const std::vector<double>& estimates, const std::vector<double>& truths) {
    if (estimates.size() != truths.size())
        throw std::invalid_argument("match_and_mse: " + std::to_string(estimates.size()) + " estimates for "
                                    + std::to_string(truths.size()) + " truths");
    if (truths.size() > 5) throw std::invalid_argument("match_and_mse: K > 5 is not supported");
    Assignment best;
    if (truths.empty()) return best;
    std::vector<int> perm(truths.size());
    std::iota(perm.begin(), perm.end(), 0);
    double best_sum = std::numeric_limits<double>::infinity();
    do {
        double sum = 0.0;
        for (std::size_t i = 0; i < perm.size(); ++i) {
            const double d = rad2deg(estimates[i] - truths[static_cast<std::size_t>(perm[i])]);
            sum += d * d;
        }
        if (sum < best_sum) {
            best_sum = sum;
            best.truth_of = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    best.mse_deg2 = best_sum / static_cast<double>(truths.size());
    return best;
}

struct ExperimentRecord {
    std::string method;
    int m = 0, l = 0, k = 0, t = 0;
    double snr_db = 0.0;
    std::uint64_t seed = 0;
    double mse_deg2 = 0.0;
    double rmse_deg = 0.0;
    bool success = false;
    int iterations = 0;
    double runtime_ms = 0.0;
};

inline constexpr const char* kRecordHeader =
    "method,M,L,K,T,snr_db,seed,mse_deg2,rmse_deg,success,iterations,runtime_ms";

/// Shortest round-trip text for a double; nan and inf spelled out.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string to_csv(const ExperimentRecord& r) {
    std::ostringstream os;
    os << r.method << ',' << r.m << ',' << r.l << ',' << r.k << ',' << r.t << ',' << format_number(r.snr_db) << ','
       << r.seed << ',' << format_number(r.mse_deg2) << ',' << format_number(r.rmse_deg) << ','
       << (r.success ? 1 : 0) << ',' << r.iterations << ',' << std::fixed << std::setprecision(3) << r.runtime_ms;
    return os.str();
}

struct SummaryRow {
    std::string method;
    int t = 0;
    double snr_db = 0.0;
    double mean_mse_deg2 = 0.0;  ///< over successful trials; nan if there are none
    int trials = 0;
    double success_rate = 0.0;
};

inline constexpr const char* kSummaryHeader = "method,T,snr_db,mean_mse_deg2,trials,success_rate";

inline std::string to_csv(const SummaryRow& s) {
    std::ostringstream os;
    os << s.method << ',' << s.t << ',' << format_number(s.snr_db) << ',' << format_number(s.mean_mse_deg2) << ','
       << s.trials << ',' << format_number(s.success_rate);
    return os.str();
}

/// Groups records by (method, T, snr) and averages MSE over the successful ones.
inline std::vector<SummaryRow> aggregate(const std::vector<ExperimentRecord>& records) {
    if (records.empty()) throw std::invalid_argument("aggregate: no records");
    struct Acc {
        double sum = 0.0;
        int ok = 0, n = 0;
    };
    std::map<std::tuple<std::string, int, double>, Acc> cells;
    std::vector<std::tuple<std::string, int, double>> order;
    for (const auto& r : records) {
        const auto key = std::make_tuple(r.method, r.t, r.snr_db);
        auto [it, fresh] = cells.try_emplace(key);
        if (fresh) order.push_back(key);
        ++it->second.n;
        if (r.success) {
            ++it->second.ok;
            it->second.sum += r.mse_deg2;
        }
    }
    std::vector<SummaryRow> out;
    for (const auto& key : order) {
        const Acc& a = cells.at(key);
        SummaryRow s;
        std::tie(s.method, s.t, s.snr_db) = key;
        s.trials = a.n;
        s.success_rate = static_cast<double>(a.ok) / a.n;
        s.mean_mse_deg2 = a.ok > 0 ? a.sum / a.ok : std::numeric_limits<double>::quiet_NaN();
        out.push_back(s);
    }
    return out;
}

}  // namespace mpdoa
