#pragma once

// Scenario drawing and noisy snapshot generation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "array_core.hpp"

namespace mpdoa {

/// splitmix64 finalizer; used to derive independent stream seeds from (seed, stream).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream = 0) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) { return Rng(mix_seed(seed, stream)); }

/// Circular complex Gaussian with E|z|^2 = variance.
inline cplx complex_gaussian(Rng& rng, double variance) {
    std::normal_distribution<double> n(0.0, std::sqrt(variance / 2.0));
    const double re = n(rng);
    const double im = n(rng);
    return {re, im};
}

struct AngleInterval {
    double lo_deg;
    double hi_deg;
};

/// The three source sectors used in the published simulations.
inline std::vector<AngleInterval> reference_intervals() {
    return {{-60.0, -50.0}, {-20.0, -10.0}, {20.0, 30.0}};
}

struct Scenario {
    std::vector<double> thetas;  ///< radians, one per source
    int snapshots = 1;           ///< T

    int sources() const { return static_cast<int>(thetas.size()); }
};

inline void validate_intervals(const std::vector<AngleInterval>& intervals) {
    if (intervals.empty()) throw std::invalid_argument("at least one angle interval is required");
    for (const auto& iv : intervals) {
        if (!(iv.lo_deg <= iv.hi_deg) || iv.lo_deg < -90.0 || iv.hi_deg > 90.0)
            throw std::invalid_argument("angle interval must satisfy -90 <= lo <= hi <= 90");
    }
    for (std::size_t i = 0; i < intervals.size(); ++i)
        for (std::size_t j = i + 1; j < intervals.size(); ++j) {
            const auto& a = intervals[i];
            const auto& b = intervals[j];
            if (std::max(a.lo_deg, b.lo_deg) <= std::min(a.hi_deg, b.hi_deg))
                throw std::invalid_argument("angle intervals overlap");
        }
}

/// One angle uniformly drawn per interval.
inline Scenario draw_scenario(const std::vector<AngleInterval>& intervals, int snapshots,
                              std::uint64_t seed) {
    validate_intervals(intervals);
    if (snapshots < 1) throw std::invalid_argument("snapshot count must be >= 1");
    Rng rng = make_rng(seed, 0);
    Scenario sc;
    sc.snapshots = snapshots;
    for (const auto& iv : intervals) {
        double deg = iv.lo_deg;
        if (iv.hi_deg > iv.lo_deg) deg = std::uniform_real_distribution<double>(iv.lo_deg, iv.hi_deg)(rng);
        sc.thetas.push_back(deg2rad(deg));
    }
    return sc;
}

struct SnapshotSet {
    CMatrix raw;  ///< M x T array outputs before the inverse DFT
    CMatrix y;    ///< M x T, column t = unitary_idft(raw.col(t))
    double snr_db = 0.0;
    double noise_precision_true = 1.0;
    std::uint64_t seed = 0;
    std::vector<double> thetas;  ///< ground truth, radians (may be empty for external data)

    int elements() const { return static_cast<int>(raw.rows()); }
    int snapshots() const { return static_cast<int>(raw.cols()); }
};

/// Noise variance per element for unit-power sources; 0 for snr_db = +inf.
inline double noise_variance(double snr_db) {
    if (std::isinf(snr_db) && snr_db > 0) return 0.0;
    return std::pow(10.0, -snr_db / 10.0);
}

inline SnapshotSet snapshots_from_raw(CMatrix raw, double snr_db, std::uint64_t seed,
                                      std::vector<double> thetas = {}) {
    SnapshotSet s;
    s.y = unitary_idft_columns(raw);
    s.raw = std::move(raw);
    s.snr_db = snr_db;
    const double nv = noise_variance(snr_db);
    s.noise_precision_true = nv > 0 ? 1.0 / nv : std::numeric_limits<double>::infinity();
    s.seed = seed;
    s.thetas = std::move(thetas);
    return s;
}

/// r(t) = sum_k a(theta_k) s_k(t) + w(t), unit-power Gaussian sources, white noise at snr_db.
inline SnapshotSet generate_snapshots(const Scenario& sc, int m, double snr_db, std::uint64_t seed) {
    UlaGeometry geom(m);
    const int t_count = sc.snapshots;
    Rng src_rng = make_rng(seed, 1);
    Rng noise_rng = make_rng(seed, 2);
    const double nv = noise_variance(snr_db);

    std::vector<CVector> steer;
    steer.reserve(sc.thetas.size());
    for (double th : sc.thetas) steer.push_back(steering_vector(th, geom.elements()));

    CMatrix raw = CMatrix::Zero(m, t_count);
    for (int t = 0; t < t_count; ++t) {
        for (const auto& a : steer) raw.col(t) += a * complex_gaussian(src_rng, 1.0);
        if (nv > 0)
            for (int i = 0; i < m; ++i) raw(i, t) += complex_gaussian(noise_rng, nv);
    }
    return snapshots_from_raw(std::move(raw), snr_db, seed, sc.thetas);
}

}  // namespace mpdoa
