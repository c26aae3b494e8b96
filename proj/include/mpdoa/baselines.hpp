#pragma once

// Reference estimators: two-stage DFT search, grid maximum likelihood, and the
// deterministic Cramer-Rao bound.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "array_core.hpp"
#include "message_passing.hpp"
#include "signal_sim.hpp"

namespace mpdoa {

struct RefineConfig {
    int points = 100;     ///< P, sub-grid points per coarse peak
    int half_width = 1;   ///< search +/- this many DFT bins around the peak
    int suppression = 3;  ///< peak exclusion radius in bins (floor(L/2))

    void validate() const {
        if (points < 2) throw std::invalid_argument("RefineConfig: P must be >= 2");
        if (half_width < 1) throw std::invalid_argument("RefineConfig: half_width must be >= 1");
        if (suppression < 0) throw std::invalid_argument("RefineConfig: suppression must be >= 0");
    }
};

/// Steering vector on the continuous bin axis: a_i = exp(-j 2 pi i u / M), u = 0.5 M sin(theta).
inline CVector bin_steering(double u, int m) {
    CVector a(m);
    for (int i = 0; i < m; ++i) a[i] = std::polar(1.0, -2.0 * kPi * i * u / m);
    return a;
}

/// Maps a bin position to an angle, aliasing it into [-M/2, M/2] first.
inline double bin_to_theta(double u, int m) {
    const double half = 0.5 * m;
    u = std::fmod(u + half, static_cast<double>(m));
    if (u < 0) u += m;
    u -= half;
    return std::asin(std::clamp(u / half, -1.0, 1.0));
}

/// sum_t |a^H r(t)|^2 / T
inline double matched_filter_power(const CVector& a, const CMatrix& raw) {
    return (a.adjoint() * raw).cwiseAbs2().sum() / static_cast<double>(raw.cols());
}

/// Coarse DFT peaks followed by a local matched-filter search of P points per peak.
inline DoaEstimate dft_two_stage(const CMatrix& raw, int k, const RefineConfig& refine = {}) {
    if (k < 1) throw std::invalid_argument("dft_two_stage: K must be >= 1");
    refine.validate();
    const int m = static_cast<int>(raw.rows());
    const CMatrix spec = unitary_idft_columns(raw);
    const Eigen::VectorXd power = spec.cwiseAbs2().rowwise().mean();

    DoaEstimate est;
    for (int row : pick_peaks(power, k, refine.suppression)) {
        const int w = fold_bin(row, m);
        const double lo = w - refine.half_width;
        const double step = 2.0 * refine.half_width / (refine.points - 1);
        double best_u = w, best = -1.0;
        for (int j = 0; j < refine.points; ++j) {
            const double u = lo + step * j;
            const double p = matched_filter_power(bin_steering(u, m), raw);
            if (p > best) {
                best = p;
                best_u = u;
            }
        }
        SourceEstimate s;
        s.theta = bin_to_theta(best_u, m);
        s.grid = row;
        s.w = w;
        s.alpha = best_u - w;
        s.power = best / m;
        est.sources.push_back(s);
    }
    est.shortfall = static_cast<int>(est.sources.size()) < k;
    est.iterations = 1;
    return est;
}

/// tr(P_A R) with R the sample covariance, computed from A^H Y without forming R.
inline double ml_criterion(const std::vector<double>& thetas, const CMatrix& raw) {
    const int m = static_cast<int>(raw.rows());
    CMatrix a(m, static_cast<Eigen::Index>(thetas.size()));
    for (std::size_t i = 0; i < thetas.size(); ++i) a.col(static_cast<Eigen::Index>(i)) = steering_vector(thetas[i], m);
    const CMatrix gram = a.adjoint() * a;
    const CMatrix b = a.adjoint() * raw;
    Eigen::LDLT<CMatrix> ldlt(gram);
    if (ldlt.info() != Eigen::Success) return -1.0;
    const CMatrix sol = ldlt.solve(b);
    return (b.adjoint() * sol).trace().real() / static_cast<double>(raw.cols());
}

/// Deterministic ML by grid search: exhaustive for K = 1, alternating
/// coordinate maximization from the DFT estimate for K = 2, 3.
inline DoaEstimate ml_grid(const CMatrix& raw, int k, double grid_step_deg) {
    if (k < 1) throw std::invalid_argument("ml_grid: K must be >= 1");
    if (k > 3) throw std::invalid_argument("ml_grid: K > 3 is not supported");
    if (!(grid_step_deg > 0)) throw std::invalid_argument("ml_grid: grid step must be > 0");
    const int m = static_cast<int>(raw.rows());
    const double step = deg2rad(grid_step_deg);
    DoaEstimate est;
    est.iterations = 1;

    if (k == 1) {
        double best = -1.0, best_theta = 0.0;
        const int n = static_cast<int>(std::floor(kPi / step));
        for (int i = 0; i <= n; ++i) {
            const double th = std::min(kPi / 2, -kPi / 2 + i * step);
            const double p = matched_filter_power(steering_vector(th, m), raw);
            if (p > best) {
                best = p;
                best_theta = th;
            }
        }
        SourceEstimate s;
        s.theta = best_theta;
        const auto dc = decompose_doa(best_theta, m);
        s.w = dc.w;
        s.alpha = dc.alpha;
        s.grid = dc.w + m / 2;
        s.power = best / m;
        est.sources.push_back(s);
        return est;
    }

    const DoaEstimate init = dft_two_stage(raw, k);
    if (init.shortfall) return init;
    std::vector<double> th = init.thetas();
    double current = ml_criterion(th, raw);
    // search +/- 2 DFT bins around each coordinate
    for (int sweep = 0; sweep < 20; ++sweep) {
        bool moved = false;
        for (int j = 0; j < k; ++j) {
            const double width = std::min(kPi / 2, 4.0 / (m * std::max(std::cos(th[j]), 4.0 / m)));
            const double lo = std::max(-kPi / 2, th[j] - width), hi = std::min(kPi / 2, th[j] + width);
            double best_theta = th[j];
            std::vector<double> trial = th;
            for (double cand = lo; cand <= hi; cand += step) {
                trial[j] = cand;
                const double c = ml_criterion(trial, raw);
                if (c > current + 1e-12 * std::abs(current)) {
                    current = c;
                    best_theta = cand;
                }
            }
            if (best_theta != th[j]) moved = true;
            th[j] = best_theta;
        }
        est.iterations = sweep + 1;
        if (!moved) break;
    }
    for (double t : th) {
        SourceEstimate s;
        s.theta = t;
        const auto dc = decompose_doa(t, m);
        s.w = dc.w;
        s.alpha = dc.alpha;
        s.grid = dc.w + m / 2;
        est.sources.push_back(s);
    }
    return est;
}

struct CrbResult {
    std::vector<double> variance;  ///< radians^2, one per source
    bool ill_conditioned = false;
};

/// Deterministic CRB for unit-power uncorrelated sources on a half-wavelength ULA:
/// (sigma^2 / 2T) {Re[(D^H P_A^perp D) .* I]}^{-1}.
inline CrbResult crb(const std::vector<double>& thetas, int m, int snapshots, double snr_db) {
    if (thetas.empty()) throw std::invalid_argument("crb: at least one angle required");
    if (snapshots < 1) throw std::invalid_argument("crb: T must be >= 1");
    const auto k = static_cast<Eigen::Index>(thetas.size());
    CMatrix a(m, k), d(m, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        const double th = thetas[static_cast<std::size_t>(j)];
        a.col(j) = steering_vector(th, m);
        for (int i = 0; i < m; ++i) d(i, j) = cplx(0.0, -kPi * i * std::cos(th)) * a(i, j);
    }
    CrbResult out;
    const CMatrix gram = a.adjoint() * a;
    Eigen::JacobiSVD<CMatrix> svd(gram);
    const auto& sv = svd.singularValues();
    if (sv[sv.size() - 1] <= 1e-10 * sv[0]) out.ill_conditioned = true;
    const CMatrix proj = CMatrix::Identity(m, m) - a * gram.ldlt().solve(a.adjoint());
    const CMatrix h = d.adjoint() * proj * d;
    const Eigen::MatrixXd fim = h.real().diagonal().asDiagonal();  // Hadamard with P^T = I
    const double nv = noise_variance(snr_db);
    const Eigen::MatrixXd bound = (nv / (2.0 * snapshots)) * fim.inverse();
    for (Eigen::Index j = 0; j < k; ++j) out.variance.push_back(bound(j, j));
    return out;
}

/// Single-source closed form 6 sigma^2 / (T pi^2 cos^2(theta) M (M^2 - 1)).
inline double crb_single_closed_form(double theta, int m, int snapshots, double snr_db) {
    const double mm = m;
    const double c = std::cos(theta);
    return 6.0 * noise_variance(snr_db) / (snapshots * kPi * kPi * c * c * mm * (mm * mm - 1.0));
}

}  // namespace mpdoa
