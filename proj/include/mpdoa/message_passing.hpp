#pragma once

// Hybrid BP / mean-field message passing on the block-sparse factor graph
//
//   Y = V X + N,   x_{g,s}(t) = s'_g(t) * g_{s,g},   g_{s,g} = kernel(delta_s, alpha_g)
//
// with s'_g(t) ~ CN(0, 1/gamma_g), gamma_g ~ Gamma(eps, eta), alpha_g ~ U[-0.5, 0.5)
// and noise precision lambda. Each iteration runs a forward recursion (data ->
// s' -> g -> alpha) followed by a backward recursion (gamma, alpha -> g -> x,
// h, lambda). Messages computed in the previous round are reused where the
// schedule needs them before they are refreshed.
//
// Edge e = g*L + s carries x_{g,s}; it lands on observation row row_of(g, s).

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "array_core.hpp"

namespace mpdoa {

struct AlgoConfig {
    double epsilon_init = 0.01;
    double eta = 1e-4;
    double lambda_init = 1.0;
    double sigma_s = 1e-5;  ///< relative-change stopping threshold on s'
    int max_iter = 200;
    double var_floor = 1e-12;
    double var_cap = 1e12;
    double damping = 1.0;  ///< 1 = off; weight of the new backward x-message
    double gain_floor = 1e-12;  ///< floor on |g|^2 before dividing by it
    bool learn_kernel = true;   ///< false: keep g fixed and skip the alpha updates
    bool retune_epsilon = true;
    /// gamma update uses |s'|^2 + v_s' (belief variance) when true, or the
    /// forward message variance when false.
    bool gamma_uses_belief_variance = true;

    void validate() const {
        if (!(var_floor > 0)) throw std::invalid_argument("AlgoConfig: var_floor must be > 0");
        if (!(var_cap > var_floor)) throw std::invalid_argument("AlgoConfig: var_cap must exceed var_floor");
        if (!(sigma_s > 0)) throw std::invalid_argument("AlgoConfig: sigma_s must be > 0");
        if (!(damping > 0 && damping <= 1)) throw std::invalid_argument("AlgoConfig: damping must be in (0, 1]");
        if (max_iter < 1) throw std::invalid_argument("AlgoConfig: max_iter must be >= 1");
        if (!(lambda_init > 0) || !(eta >= 0) || !(epsilon_init >= 0))
            throw std::invalid_argument("AlgoConfig: lambda_init > 0, eta >= 0, epsilon_init >= 0 required");
    }
};

/// Raised when a message turns non-finite; names the update stage and iteration.
class MessagePassingError : public std::runtime_error {
public:
    MessagePassingError(std::string stage, int iteration)
        : std::runtime_error("non-finite value in stage '" + stage + "' at iteration " + std::to_string(iteration)),
          stage_(std::move(stage)),
          iteration_(iteration) {}
    const std::string& stage() const { return stage_; }
    int iteration() const { return iteration_; }

private:
    std::string stage_;
    int iteration_;
};

/// Per-edge Gaussian messages. Edge-by-snapshot quantities are E x T, row
/// aggregates are M x T, and the snapshot-independent g/alpha messages are length E.
struct EdgeState {
    // forward x-messages, f_delta -> x
    CMatrix x_fwd;
    Eigen::MatrixXd v_fwd;
    // backward x-messages, f_x -> x
    CMatrix x_bwd;
    Eigen::MatrixXd v_bwd;
    // row aggregates of the backward messages
    CMatrix p_hat;
    Eigen::MatrixXd v_p;
    // f_x -> s' messages
    CMatrix s_fwd;
    Eigen::MatrixXd vs_fwd;
    // f_x -> g messages per snapshot and their product over t
    CMatrix g_fwd_t;
    Eigen::MatrixXd vg_fwd_t;
    CVector g_fwd;
    Eigen::VectorXd vg_fwd;
    // f_g -> g (model side)
    CVector g_bwd;
    Eigen::VectorXd vg_bwd;
    // f_g -> alpha and alpha -> f_g
    Eigen::VectorXd a_fwd;
    Eigen::VectorXd va_fwd;
    Eigen::VectorXd a_bwd;
    Eigen::VectorXd va_bwd;
    // kernel and its derivative at the linearization point
    CVector k0;
    CVector k1;
    Eigen::VectorXd alpha_lin;  ///< per grid point
};

struct BeliefState {
    CMatrix s_hat;          ///< M x T
    Eigen::MatrixXd v_s;    ///< M x T
    CMatrix f_s;            ///< M x T, product of the L incoming f_x -> s' messages
    Eigen::MatrixXd v_f_s;  ///< M x T
    Eigen::VectorXd gamma;  ///< per grid point
    Eigen::VectorXd alpha;  ///< per grid point, clipped to [-0.5, 0.5]
    Eigen::VectorXd v_alpha;
    CVector g_hat;          ///< per edge
    Eigen::VectorXd v_g;
    CMatrix h_hat;          ///< M x T
    Eigen::MatrixXd v_h;
    double lambda = 1.0;
    double epsilon = 0.01;

    /// (1/T) sum_t |s'|^2 + v_s' per grid point.
    Eigen::VectorXd mean_power() const {
        return (s_hat.cwiseAbs2() + v_s).rowwise().mean();
    }
};

struct TraceRow {
    int iteration;
    double relative_change;
    double lambda;
    double epsilon;
};

struct RunResult {
    EdgeState edges;
    BeliefState beliefs;
    std::vector<TraceRow> trace;
    int iterations = 0;
    bool converged = false;
};

/// Leave-one-out division of a Gaussian belief by an incoming message. Falls back
/// to (belief_mean, var_cap) when the result is non-positive or wider than var_cap.
template <class Mean>
struct GaussianMessage {
    Mean mean;
    double var;
};

template <class Mean>
inline GaussianMessage<Mean> gaussian_extrinsic(Mean belief_mean, double belief_var, Mean msg_mean, double msg_var,
                                                double var_cap) {
    const double msg_prec = std::isinf(msg_var) ? 0.0 : 1.0 / msg_var;
    const double prec = 1.0 / belief_var - msg_prec;
    if (!(prec > 1.0 / var_cap)) return {belief_mean, var_cap};
    const double var = 1.0 / prec;
    return {var * (belief_mean / belief_var - msg_mean * msg_prec), var};
}

namespace detail {

inline double clamp_var(double v, const AlgoConfig& c) {
    if (std::isnan(v)) return v;
    return std::clamp(v, c.var_floor, c.var_cap);
}

template <class Derived>
inline void check_finite(const Eigen::DenseBase<Derived>& m, const char* stage, int iteration) {
    if (!m.allFinite()) throw MessagePassingError(stage, iteration);
}

inline void check_finite(double v, const char* stage, int iteration) {
    if (!std::isfinite(v)) throw MessagePassingError(stage, iteration);
}

}  // namespace detail

/// Allocates and initializes all messages and beliefs.
inline std::pair<EdgeState, BeliefState> initialize(const GridDecomposition& grid, int snapshots,
                                                    const AlgoConfig& config) {
    config.validate();
    const int m = grid.elements();
    const auto e = static_cast<Eigen::Index>(grid.edge_count());
    const int t = snapshots;
    if (t < 1) throw std::invalid_argument("initialize: snapshot count must be >= 1");

    EdgeState es;
    es.x_fwd = CMatrix::Zero(e, t);
    es.v_fwd = Eigen::MatrixXd::Ones(e, t);
    es.x_bwd = CMatrix::Zero(e, t);
    es.v_bwd = Eigen::MatrixXd::Ones(e, t);
    es.p_hat = CMatrix::Zero(m, t);
    es.v_p = Eigen::MatrixXd::Constant(m, t, static_cast<double>(grid.slots()));
    es.s_fwd = CMatrix::Zero(e, t);
    es.vs_fwd = Eigen::MatrixXd::Constant(e, t, config.var_cap);
    es.g_fwd_t = CMatrix::Zero(e, t);
    es.vg_fwd_t = Eigen::MatrixXd::Constant(e, t, config.var_cap);
    es.g_fwd = CVector::Zero(e);
    es.vg_fwd = Eigen::VectorXd::Constant(e, config.var_cap);
    es.g_bwd = CVector::Ones(e);
    es.vg_bwd = Eigen::VectorXd::Constant(e, config.var_cap);
    es.a_fwd = Eigen::VectorXd::Zero(e);
    es.va_fwd = Eigen::VectorXd::Constant(e, config.var_cap);
    es.a_bwd = Eigen::VectorXd::Zero(e);
    es.va_bwd = Eigen::VectorXd::Constant(e, config.var_cap);
    es.k0 = CVector::Zero(e);
    es.k1 = CVector::Zero(e);
    es.alpha_lin = Eigen::VectorXd::Zero(m);

    BeliefState bs;
    bs.s_hat = CMatrix::Zero(m, t);
    bs.v_s = Eigen::MatrixXd::Ones(m, t);
    bs.f_s = CMatrix::Zero(m, t);
    bs.v_f_s = Eigen::MatrixXd::Ones(m, t);
    bs.alpha = Eigen::VectorXd::Zero(m);
    bs.v_alpha = Eigen::VectorXd::Constant(m, config.var_cap);
    bs.g_hat = CVector::Ones(e);
    bs.v_g = Eigen::VectorXd::Constant(e, config.var_cap);
    bs.h_hat = CMatrix::Zero(m, t);
    bs.v_h = Eigen::MatrixXd::Ones(m, t);
    bs.lambda = config.lambda_init;
    bs.epsilon = config.epsilon_init;
    // gamma from its update rule evaluated at the initial s' belief (mean 0, variance 1)
    bs.gamma = Eigen::VectorXd::Constant(m, (config.epsilon_init + t) / (config.eta + t));
    return {std::move(es), std::move(bs)};
}

/// Data -> s' -> g -> alpha.
inline void forward_pass(const CMatrix& y, const GridDecomposition& grid, EdgeState& es, BeliefState& bs,
                         const AlgoConfig& c, int iteration = 0) {
    const int m = grid.elements(), l = grid.slots();
    const auto t_count = y.cols();
    if (y.rows() != m) throw std::invalid_argument("forward_pass: Y must have M rows");
    const double noise_var = 1.0 / bs.lambda;

    // (a) extrinsic forward x-messages from the row aggregates of the backward ones
    for (Eigen::Index t = 0; t < t_count; ++t) {
        for (int r = 0; r < m; ++r) {
            cplx p{0.0, 0.0};
            double vp = 0.0;
            for (int s = 0; s < l; ++s) {
                const auto e = static_cast<Eigen::Index>(grid.edge(grid.grid_of(r, s), s));
                p += es.x_bwd(e, t);
                vp += es.v_bwd(e, t);
            }
            es.p_hat(r, t) = p;
            es.v_p(r, t) = vp;
            for (int s = 0; s < l; ++s) {
                const auto e = static_cast<Eigen::Index>(grid.edge(grid.grid_of(r, s), s));
                es.x_fwd(e, t) = y(r, t) - p + es.x_bwd(e, t);
                es.v_fwd(e, t) = detail::clamp_var(noise_var + vp - es.v_bwd(e, t), c);
            }
        }
    }
    detail::check_finite(es.x_fwd, "forward x-message", iteration);
    detail::check_finite(es.v_fwd, "forward x-variance", iteration);

    // (b) f_x -> s' by dividing out g, then the product over slots; (c) s' belief
    for (Eigen::Index t = 0; t < t_count; ++t) {
        for (int g = 0; g < m; ++g) {
            double prec = 0.0;
            cplx acc{0.0, 0.0};
            for (int s = 0; s < l; ++s) {
                const auto e = static_cast<Eigen::Index>(grid.edge(g, s));
                const cplx gh = bs.g_hat[e];
                const double gain = std::max(std::norm(gh), c.gain_floor);
                const cplx sm = es.x_fwd(e, t) * std::conj(gh) / gain;
                const double sv = detail::clamp_var(es.v_fwd(e, t) / gain, c);
                es.s_fwd(e, t) = sm;
                es.vs_fwd(e, t) = sv;
                prec += 1.0 / sv;
                acc += sm / sv;
            }
            const double vf = 1.0 / prec;
            const cplx f = vf * acc;
            bs.v_f_s(g, t) = vf;
            bs.f_s(g, t) = f;
            bs.s_hat(g, t) = f / (1.0 + vf * bs.gamma[g]);
            bs.v_s(g, t) = 1.0 / (1.0 / vf + bs.gamma[g]);
        }
    }
    detail::check_finite(bs.s_hat, "s' belief", iteration);
    detail::check_finite(bs.v_s, "s' belief variance", iteration);

    if (!c.learn_kernel) return;

    // (d) f_x -> g per snapshot, multiplied over t
    const auto e_count = static_cast<Eigen::Index>(grid.edge_count());
    for (int g = 0; g < m; ++g) {
        for (int s = 0; s < l; ++s) {
            const auto e = static_cast<Eigen::Index>(grid.edge(g, s));
            double prec = 0.0;
            cplx acc{0.0, 0.0};
            for (Eigen::Index t = 0; t < t_count; ++t) {
                const double den = std::norm(bs.s_hat(g, t)) + bs.v_s(g, t);
                const cplx gm = es.x_fwd(e, t) * std::conj(bs.s_hat(g, t)) / den;
                const double gv = detail::clamp_var(es.v_fwd(e, t) / den, c);
                es.g_fwd_t(e, t) = gm;
                es.vg_fwd_t(e, t) = gv;
                prec += 1.0 / gv;
                acc += gm / gv;
            }
            es.vg_fwd[e] = detail::clamp_var(1.0 / prec, c);
            es.g_fwd[e] = acc / prec;
        }
    }
    detail::check_finite(es.g_fwd, "forward g-message", iteration);

    // (e) linearize the kernel at the previous alpha estimate
    es.alpha_lin = bs.alpha;
    for (int g = 0; g < m; ++g) {
        for (int s = 0; s < l; ++s) {
            const auto e = static_cast<Eigen::Index>(grid.edge(g, s));
            es.k0[e] = kernel_value_fast(grid.offset(s), es.alpha_lin[g], m);
            es.k1[e] = kernel_derivative_fast(grid.offset(s), es.alpha_lin[g], m);
        }
    }

    // (f) alpha messages from the real and imaginary parts, combined by precision
    for (Eigen::Index e = 0; e < e_count; ++e) {
        const int g = static_cast<int>(e / l);
        const double a0 = es.alpha_lin[g];
        const cplx k0 = es.k0[e], k1 = es.k1[e], fg = es.g_fwd[e];
        const double vg = es.vg_fwd[e];
        // precision 2 k'^2 / v and precision-weighted mean of (f - k0 + k' a0) / k'
        const double prec_re = 2.0 * k1.real() * k1.real() / vg;
        const double prec_im = 2.0 * k1.imag() * k1.imag() / vg;
        const double num_re = 2.0 * k1.real() * (fg.real() - k0.real() + k1.real() * a0) / vg;
        const double num_im = 2.0 * k1.imag() * (fg.imag() - k0.imag() + k1.imag() * a0) / vg;
        const double prec = prec_re + prec_im;
        if (prec > 1.0 / c.var_cap) {
            es.va_fwd[e] = detail::clamp_var(1.0 / prec, c);
            es.a_fwd[e] = (num_re + num_im) / prec;
        } else {
            es.va_fwd[e] = c.var_cap;
            es.a_fwd[e] = a0;
        }
    }
    for (int g = 0; g < m; ++g) {
        double prec = 0.0, acc = 0.0;
        for (int s = 0; s < l; ++s) {
            const auto e = static_cast<Eigen::Index>(grid.edge(g, s));
            prec += 1.0 / es.va_fwd[e];
            acc += es.a_fwd[e] / es.va_fwd[e];
        }
        bs.v_alpha[g] = 1.0 / prec;
        bs.alpha[g] = std::clamp(acc / prec, -0.5, 0.5);
    }
    detail::check_finite(bs.alpha, "alpha belief", iteration);
}

/// log(mean gamma) - mean(log gamma), clamped at 0, then 0.5*sqrt(.).
/// Scaled by gamma_0 first so equal precisions give exactly 0.
inline double tuned_epsilon(const Eigen::VectorXd& gamma) {
    const Eigen::ArrayXd r = gamma.array() / gamma[0];
    return 0.5 * std::sqrt(std::max(0.0, std::log(r.mean()) - r.log().mean()));
}

/// MT / sum(|y - h|^2 + v_h).
inline double lambda_from_residuals(const CMatrix& y, const CMatrix& h_hat, const Eigen::MatrixXd& v_h) {
    const double resid = (y - h_hat).cwiseAbs2().sum() + v_h.sum();
    return static_cast<double>(y.size()) / resid;
}

/// gamma, epsilon -> x <- (s', g) -> h -> lambda.
inline void backward_pass(const CMatrix& y, const GridDecomposition& grid, EdgeState& es, BeliefState& bs,
                          const AlgoConfig& c, int iteration = 0) {
    const int m = grid.elements(), l = grid.slots();
    const auto t_count = y.cols();
    const auto e_count = static_cast<Eigen::Index>(grid.edge_count());

    // source precisions and the shape retune
    for (int g = 0; g < m; ++g) {
        double sum = 0.0;
        for (Eigen::Index t = 0; t < t_count; ++t)
            sum += std::norm(bs.s_hat(g, t)) + (c.gamma_uses_belief_variance ? bs.v_s(g, t) : bs.v_f_s(g, t));
        bs.gamma[g] = (bs.epsilon + static_cast<double>(t_count)) / (c.eta + sum);
    }
    detail::check_finite(bs.gamma, "gamma update", iteration);
    if (c.retune_epsilon) bs.epsilon = tuned_epsilon(bs.gamma);

    // s' -> f_x (extrinsic)
    CMatrix s_ext(e_count, t_count);
    Eigen::MatrixXd vs_ext(e_count, t_count);
    for (Eigen::Index t = 0; t < t_count; ++t)
        for (Eigen::Index e = 0; e < e_count; ++e) {
            const int g = static_cast<int>(e / l);
            const auto msg = gaussian_extrinsic(bs.s_hat(g, t), bs.v_s(g, t), es.s_fwd(e, t), es.vs_fwd(e, t), c.var_cap);
            s_ext(e, t) = msg.mean;
            vs_ext(e, t) = detail::clamp_var(msg.var, c);
        }

    // g -> f_x: either the learned belief with snapshot t divided out, or the fixed kernel
    CMatrix g_ext(e_count, t_count);
    Eigen::MatrixXd vg_ext(e_count, t_count);
    if (c.learn_kernel) {
        for (Eigen::Index e = 0; e < e_count; ++e) {
            const int g = static_cast<int>(e / l);
            const auto a_msg = gaussian_extrinsic(bs.alpha[g], bs.v_alpha[g], es.a_fwd[e], es.va_fwd[e], c.var_cap);
            es.a_bwd[e] = a_msg.mean;
            es.va_bwd[e] = detail::clamp_var(a_msg.var, c);
            const cplx k1 = es.k1[e];
            es.g_bwd[e] = es.k0[e] + k1 * (es.a_bwd[e] - es.alpha_lin[g]);
            es.vg_bwd[e] = detail::clamp_var(es.va_bwd[e] * std::norm(k1), c);
            const double vg = 1.0 / (1.0 / es.vg_fwd[e] + 1.0 / es.vg_bwd[e]);
            bs.v_g[e] = vg;
            bs.g_hat[e] = vg * (es.g_fwd[e] / es.vg_fwd[e] + es.g_bwd[e] / es.vg_bwd[e]);
        }
        detail::check_finite(bs.g_hat, "g belief", iteration);
        for (Eigen::Index t = 0; t < t_count; ++t)
            for (Eigen::Index e = 0; e < e_count; ++e) {
                const auto msg = gaussian_extrinsic(bs.g_hat[e], bs.v_g[e], es.g_fwd_t(e, t), es.vg_fwd_t(e, t), c.var_cap);
                g_ext(e, t) = msg.mean;
                vg_ext(e, t) = detail::clamp_var(msg.var, c);
            }
    } else {
        for (Eigen::Index t = 0; t < t_count; ++t) {
            g_ext.col(t) = bs.g_hat;
            vg_ext.col(t).setZero();
        }
    }

    // f_x -> x: product of s' and g with the exact second-moment variance
    const double keep = 1.0 - c.damping;
    for (Eigen::Index t = 0; t < t_count; ++t)
        for (Eigen::Index e = 0; e < e_count; ++e) {
            const cplx fs = s_ext(e, t), fg = g_ext(e, t);
            const double vs = vs_ext(e, t), vg = vg_ext(e, t);
            const cplx xm = fs * fg;
            const double xv = detail::clamp_var(std::norm(fs) * vg + std::norm(fg) * vs + vg * vs, c);
            es.x_bwd(e, t) = c.damping * xm + keep * es.x_bwd(e, t);
            es.v_bwd(e, t) = c.damping * xv + keep * es.v_bwd(e, t);
        }
    detail::check_finite(es.x_bwd, "backward x-message", iteration);
    detail::check_finite(es.v_bwd, "backward x-variance", iteration);

    // h beliefs and the noise precision
    for (Eigen::Index t = 0; t < t_count; ++t)
        for (int r = 0; r < m; ++r) {
            cplx p{0.0, 0.0};
            double vp = 0.0;
            for (int s = 0; s < l; ++s) {
                const auto e = static_cast<Eigen::Index>(grid.edge(grid.grid_of(r, s), s));
                p += es.x_bwd(e, t);
                vp += es.v_bwd(e, t);
            }
            es.p_hat(r, t) = p;
            es.v_p(r, t) = vp;
            const double vh = 1.0 / (bs.lambda + 1.0 / vp);
            const cplx h = vh * (y(r, t) * bs.lambda + p / vp);
            bs.v_h(r, t) = vh;
            bs.h_hat(r, t) = h;
        }
    bs.lambda = lambda_from_residuals(y, bs.h_hat, bs.v_h);
    detail::check_finite(bs.lambda, "lambda update", iteration);
}

/// Sum_t ||s_new(t) - s_old(t)||^2 / sum_t ||s_old(t)||^2; a zero denominator counts as converged.
inline double relative_change(const CMatrix& s_new, const CMatrix& s_old) {
    const double den = s_old.squaredNorm();
    const double num = (s_new - s_old).squaredNorm();
    if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return num / den;
}

/// Alternates forward and backward recursions until the relative change of s'
/// drops to sigma_s or max_iter iterations have run. Y is the post-IDFT M x T data.
inline RunResult run(const CMatrix& y, const GridDecomposition& grid, const AlgoConfig& config) {
    if (y.rows() != grid.elements()) throw std::invalid_argument("run: Y must have M rows");
    auto [es, bs] = initialize(grid, static_cast<int>(y.cols()), config);
    RunResult out;
    CMatrix prev = bs.s_hat;
    for (int it = 1; it <= config.max_iter; ++it) {
        forward_pass(y, grid, es, bs, config, it);
        backward_pass(y, grid, es, bs, config, it);
        // the first iterate has no predecessor produced by the algorithm
        const double change = it == 1 ? std::numeric_limits<double>::infinity() : relative_change(bs.s_hat, prev);
        out.trace.push_back({it, change, bs.lambda, bs.epsilon});
        out.iterations = it;
        prev = bs.s_hat;
        if (change <= config.sigma_s) {
            out.converged = true;
            break;
        }
    }
    out.edges = std::move(es);
    out.beliefs = std::move(bs);
    return out;
}

// ---------------------------------------------------------------------------
// DOA extraction

struct SourceEstimate {
    double theta = 0.0;  ///< radians
    int grid = 0;        ///< grid index m'
    int w = 0;           ///< integer bin, unwrapped so that |2(w + alpha)/M| <= 1
    double alpha = 0.0;
    double power = 0.0;
};

/// Shared output shape of the estimator and the baselines.
struct DoaEstimate {
    std::vector<SourceEstimate> sources;
    int iterations = 0;
    bool converged = true;
    bool shortfall = false;

    std::vector<double> thetas() const {
        std::vector<double> out;
        out.reserve(sources.size());
        for (const auto& s : sources) out.push_back(s.theta);
        return out;
    }
};

/// (w, alpha) -> angle, moving a bin below -M/2 to its alias above +M/2 - 1/2.
inline SourceEstimate physical_estimate(int grid_index, int w, double alpha, int m, double power) {
    if (w + alpha < -0.5 * m) w += m;
    SourceEstimate s;
    s.grid = grid_index;
    s.w = w;
    s.alpha = alpha;
    s.power = power;
    s.theta = compose_doa({w, alpha}, m);
    return s;
}

/// Indices of up to k strict local maxima of a circular spectrum, strongest first,
/// skipping any candidate within `exclusion` bins of one already taken.
inline std::vector<int> pick_peaks(const Eigen::VectorXd& spectrum, int k, int exclusion) {
    const int n = static_cast<int>(spectrum.size());
    std::vector<int> cand;
    for (int i = 0; i < n; ++i) {
        const double left = spectrum[(i - 1 + n) % n], right = spectrum[(i + 1) % n];
        if (spectrum[i] > left && spectrum[i] > right) cand.push_back(i);
    }
    std::stable_sort(cand.begin(), cand.end(), [&](int a, int b) { return spectrum[a] > spectrum[b]; });
    std::vector<int> picked;
    for (int i : cand) {
        if (static_cast<int>(picked.size()) == k) break;
        const bool near = std::any_of(picked.begin(), picked.end(), [&](int p) {
            const int d = std::abs(i - p);
            return std::min(d, n - d) <= exclusion;
        });
        if (!near) picked.push_back(i);
    }
    return picked;
}

inline DoaEstimate extract_doas(const BeliefState& beliefs, int k, const GridDecomposition& grid) {
    if (k < 1) throw std::invalid_argument("extract_doas: K must be >= 1");
    const int m = grid.elements();
    const Eigen::VectorXd power = beliefs.mean_power();
    DoaEstimate est;
    for (int g : pick_peaks(power, k, grid.half_width()))
        est.sources.push_back(physical_estimate(g, grid.bin(g), beliefs.alpha[g], m, power[g]));
    est.shortfall = static_cast<int>(est.sources.size()) < k;
    return est;
}

/// IDFT preprocessing, message passing and extraction in one call; raw is the M x T array output.
inline DoaEstimate estimate_doas(const CMatrix& raw, int k, const GridDecomposition& grid, const AlgoConfig& config,
                                 RunResult* details = nullptr) {
    const CMatrix y = unitary_idft_columns(raw);
    RunResult res = run(y, grid, config);
    DoaEstimate est = extract_doas(res.beliefs, k, grid);
    est.iterations = res.iterations;
    est.converged = res.converged;
    if (details) *details = std::move(res);
    return est;
}

}  // namespace mpdoa
