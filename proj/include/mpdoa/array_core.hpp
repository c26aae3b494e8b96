#pragma once

// Uniform linear array model in the inverse-DFT domain.
//
// A half-wavelength ULA steering vector a(theta) becomes, after a unitary
// M-point inverse DFT, a circularly shifted Dirichlet kernel. Keeping only the
// L strongest kernel taps turns the array response into a 0/1 sensing
// structure V (one nonzero per column, L per row) times a short kernel vector.
//
// Indexing used throughout the library (all 0-based):
//   grid index  m' in [0, M)   <->  integer bin w = m' - M/2
//   slot index  l  in [0, L)   <->  offset delta = l - (L-1)/2
//   row index   r  in [0, M)   =    (w + delta + M) mod M

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

namespace mpdoa {

using cplx = std::complex<double>;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;

inline constexpr double kPi = std::numbers::pi;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

class UlaGeometry {
public:
    explicit UlaGeometry(int element_count) : m_(element_count) {
        if (m_ < 2 || m_ % 2 != 0)
            throw std::invalid_argument("UlaGeometry: element count must be even and >= 2, got "
                                        + std::to_string(m_));
    }
    int elements() const { return m_; }

private:
    int m_;
};

/// Integer DFT bin plus fractional offset of 0.5*M*sin(theta).
struct DoaComponents {
    int w = 0;
    double alpha = 0.0;
};

/// a_i = exp(-j*pi*i*sin(theta)), i = 0..M-1.
inline CVector steering_vector(double theta, int m) {
    if (!(theta >= -kPi / 2 && theta <= kPi / 2))
        throw std::domain_error("steering_vector: theta outside [-pi/2, pi/2]");
    if (m < 2) throw std::domain_error("steering_vector: M must be >= 2");
    CVector a(m);
    const double s = std::sin(theta);
    for (int i = 0; i < m; ++i) a[i] = std::polar(1.0, -kPi * i * s);
    return a;
}

/// Folds an integer bin into {-M/2, ..., M/2-1}.
inline int fold_bin(int w, int m) {
    int r = ((w + m / 2) % m + m) % m;
    return r - m / 2;
}

inline DoaComponents decompose_doa(double theta, int m) {
    if (!(theta >= -kPi / 2 && theta <= kPi / 2))
        throw std::domain_error("decompose_doa: theta outside [-pi/2, pi/2]");
    const double u = 0.5 * m * std::sin(theta);
    // floor(u + 0.5) keeps alpha in [-0.5, 0.5) for both signs
    const double w = std::floor(u + 0.5);
    return {fold_bin(static_cast<int>(w), m), u - w};
}

/// Inverse of decompose_doa: theta = asin(2(w + alpha)/M).
inline double compose_doa(DoaComponents c, int m) {
    const double arg = 2.0 * (c.w + c.alpha) / m;
    if (!(std::abs(arg) <= 1.0))
        throw std::domain_error("compose_doa: 2(w+alpha)/M = " + std::to_string(arg)
                                + " is outside [-1, 1]");
    return std::asin(arg);
}

/// Unitary inverse DFT: d_n = M^{-1/2} sum_i v_i exp(+j 2 pi i n / M).
inline CVector unitary_idft(const CVector& v) {
    Eigen::FFT<double> fft;
    std::vector<cplx> in(v.data(), v.data() + v.size()), out;
    fft.inv(out, in);  // scales by 1/M
    CVector d(v.size());
    const double scale = std::sqrt(static_cast<double>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) d[i] = out[static_cast<std::size_t>(i)] * scale;
    return d;
}

/// Unitary forward DFT, the inverse of unitary_idft.
inline CVector unitary_dft(const CVector& d) {
    Eigen::FFT<double> fft;
    std::vector<cplx> in(d.data(), d.data() + d.size()), out;
    fft.fwd(out, in);
    CVector v(d.size());
    const double scale = 1.0 / std::sqrt(static_cast<double>(d.size()));
    for (Eigen::Index i = 0; i < d.size(); ++i) v[i] = out[static_cast<std::size_t>(i)] * scale;
    return v;
}

/// Column-wise unitary inverse DFT of an M x T snapshot matrix.
inline CMatrix unitary_idft_columns(const CMatrix& x) {
    CMatrix out(x.rows(), x.cols());
    for (Eigen::Index t = 0; t < x.cols(); ++t) out.col(t) = unitary_idft(x.col(t));
    return out;
}

// ---------------------------------------------------------------------------
// Dirichlet kernel taps

/// M^{-1/2} sum_{m=0}^{M-1} exp(j 2 pi m (delta - alpha) / M), by direct summation.
inline cplx kernel_value(int delta, double alpha, int m) {
    const double z = delta - alpha;
    cplx acc{0.0, 0.0};
    for (int k = 0; k < m; ++k) acc += std::polar(1.0, 2.0 * kPi * k * z / m);
    return acc / std::sqrt(static_cast<double>(m));
}

/// d/dalpha of kernel_value: M^{-1/2} sum_m (-j 2 pi m / M) exp(j 2 pi m (delta - alpha) / M).
inline cplx kernel_derivative(int delta, double alpha_ref, int m) {
    const double z = delta - alpha_ref;
    cplx acc{0.0, 0.0};
    for (int k = 0; k < m; ++k) {
        const double w = 2.0 * kPi * k / m;
        acc += cplx(0.0, -w) * std::polar(1.0, w * z);
    }
    return acc / std::sqrt(static_cast<double>(m));
}

namespace detail {

// D(z) = sin(pi z) / sin(pi z / M) and its derivative. Below |z| < 1e-3 a
// second-order Taylor expansion avoids the 0/0 at z = 0 and the cancellation
// in D'.
struct Dirichlet {
    double value;
    double slope;
};

inline Dirichlet dirichlet(double z, int m) {
    const double mm = static_cast<double>(m);
    if (std::abs(z) < 1e-3) {
        const double c = kPi * kPi * (1.0 - 1.0 / (mm * mm));
        return {mm * (1.0 - c * z * z / 6.0), -mm * c * z / 3.0};
    }
    const double s1 = std::sin(kPi * z), c1 = std::cos(kPi * z);
    const double s2 = std::sin(kPi * z / mm), c2 = std::cos(kPi * z / mm);
    return {s1 / s2, (kPi * c1 * s2 - (kPi / mm) * s1 * c2) / (s2 * s2)};
}

}  // namespace detail

/// Closed-form Dirichlet evaluation of kernel_value; O(1). Requires |delta - alpha| < M.
inline cplx kernel_value_fast(int delta, double alpha, int m) {
    const double z = delta - alpha;
    const double c = kPi * (m - 1) / m;
    const auto d = detail::dirichlet(z, m);
    return std::polar(d.value / std::sqrt(static_cast<double>(m)), c * z);
}

/// Closed-form kernel_derivative; O(1).
inline cplx kernel_derivative_fast(int delta, double alpha_ref, int m) {
    const double z = delta - alpha_ref;
    const double c = kPi * (m - 1) / m;
    const auto d = detail::dirichlet(z, m);
    // d/dalpha = -d/dz of exp(j c z) D(z)
    const cplx dz = std::polar(1.0, c * z) * cplx(d.slope, c * d.value);
    return -dz / std::sqrt(static_cast<double>(m));
}

// ---------------------------------------------------------------------------
// Sensing structure

/// The w-grid, the L symmetric circular offsets and the row/grid bijections that
/// stand in for the M x ML sensing matrix V.
class GridDecomposition {
public:
    GridDecomposition(int m, int l) : m_(m), l_(l) {
        if (m < 2 || m % 2 != 0)
            throw std::invalid_argument("GridDecomposition: M must be even and >= 2");
        if (l < 1 || l % 2 == 0)
            throw std::invalid_argument("GridDecomposition: L must be odd and >= 1");
        if (l >= m) throw std::invalid_argument("GridDecomposition: L must be smaller than M");
        const auto n = static_cast<std::size_t>(m) * static_cast<std::size_t>(l);
        row_of_.resize(n);
        grid_of_.resize(n);
        for (int g = 0; g < m; ++g) {
            for (int s = 0; s < l; ++s) {
                const int r = ((bin(g) + offset(s)) % m + 2 * m) % m;
                row_of_[idx(g, s)] = r;
                grid_of_[idx(r, s)] = g;
            }
        }
    }

    int elements() const { return m_; }
    int slots() const { return l_; }
    int half_width() const { return (l_ - 1) / 2; }
    std::size_t edge_count() const { return row_of_.size(); }

    /// Integer bin w of grid index g.
    int bin(int g) const { return g - m_ / 2; }
    /// Grid index of a (folded) integer bin.
    int grid_index(int w) const { return fold_bin(w, m_) + m_ / 2; }
    /// Circular offset delta of slot s.
    int offset(int s) const { return s - (l_ - 1) / 2; }

    /// Observation row fed by grid point g through slot s.
    int row_of(int g, int s) const { return row_of_[idx(g, s)]; }
    /// Grid point feeding observation row r through slot s.
    int grid_of(int r, int s) const { return grid_of_[idx(r, s)]; }

    /// Flat edge index (g, s) -> g*L + s, the layout of x = vec([g_1 s'_1, ..., g_M s'_M]).
    std::size_t edge(int g, int s) const { return idx(g, s); }

    /// Dense V (M x ML), for tests and small problems only.
    Eigen::MatrixXd dense() const {
        Eigen::MatrixXd v = Eigen::MatrixXd::Zero(m_, m_ * l_);
        for (int g = 0; g < m_; ++g)
            for (int s = 0; s < l_; ++s) v(row_of(g, s), static_cast<Eigen::Index>(edge(g, s))) = 1.0;
        return v;
    }

private:
    std::size_t idx(int a, int s) const {
        return static_cast<std::size_t>(a) * static_cast<std::size_t>(l_) + static_cast<std::size_t>(s);
    }

    int m_;
    int l_;
    std::vector<int> row_of_;
    std::vector<int> grid_of_;
};

/// The L most significant kernel taps for a fractional offset alpha.
struct TruncatedKernel {
    double alpha = 0.0;
    std::vector<cplx> values;

    double energy() const {
        double e = 0.0;
        for (const auto& v : values) e += std::norm(v);
        return e;
    }
};

inline TruncatedKernel truncated_kernel(double alpha, const GridDecomposition& grid) {
    if (!(alpha >= -0.5 && alpha <= 0.5))
        throw std::domain_error("truncated_kernel: alpha outside [-0.5, 0.5]");
    TruncatedKernel k{alpha, {}};
    k.values.reserve(static_cast<std::size_t>(grid.slots()));
    for (int s = 0; s < grid.slots(); ++s)
        k.values.push_back(kernel_value(grid.offset(s), alpha, grid.elements()));
    return k;
}

/// y = V x without materializing V. x has the edge layout of GridDecomposition::edge.
inline CVector apply_sensing(const GridDecomposition& grid, const CVector& x) {
    const int m = grid.elements(), l = grid.slots();
    if (x.size() != static_cast<Eigen::Index>(grid.edge_count()))
        throw std::invalid_argument("apply_sensing: expected length " + std::to_string(grid.edge_count())
                                    + ", got " + std::to_string(x.size()));
    CVector y = CVector::Zero(m);
    for (int r = 0; r < m; ++r)
        for (int s = 0; s < l; ++s)
            y[r] += x[static_cast<Eigen::Index>(grid.edge(grid.grid_of(r, s), s))];
    return y;
}

}  // namespace mpdoa
