#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "mpdoa/message_passing.hpp"
#include "mpdoa/signal_sim.hpp"

using namespace mpdoa;

namespace {

CMatrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    CMatrix x(r, c);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = {g(rng), g(rng)};
    return x;
}

void expect_variances_in_range(const EdgeState& es, const BeliefState& bs, const AlgoConfig& c) {
    auto in_range = [&](const auto& v, const char* name) {
        EXPECT_GE(v.minCoeff(), c.var_floor) << name;
        EXPECT_LE(v.maxCoeff(), c.var_cap) << name;
        EXPECT_TRUE(v.allFinite()) << name;
    };
    in_range(es.v_fwd, "v_fwd");
    in_range(es.v_bwd, "v_bwd");
    in_range(es.vs_fwd, "vs_fwd");
    in_range(es.vg_fwd, "vg_fwd");
    in_range(es.vg_bwd, "vg_bwd");
    in_range(es.va_fwd, "va_fwd");
    in_range(es.va_bwd, "va_bwd");
    in_range(bs.v_s, "v_s");
    in_range(bs.v_f_s, "v_f_s");
    in_range(bs.v_alpha, "v_alpha");
    in_range(bs.v_g, "v_g");
    in_range(bs.v_h, "v_h");
    EXPECT_GT(bs.gamma.minCoeff(), 0.0);
    EXPECT_GT(bs.lambda, 0.0);
    EXPECT_GE(bs.alpha.minCoeff(), -0.5);
    EXPECT_LE(bs.alpha.maxCoeff(), 0.5);
}

}  // namespace

TEST(AlgoConfig, Validation) {
    AlgoConfig c;
    EXPECT_NO_THROW(c.validate());
    c.var_floor = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.var_cap = c.var_floor;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.sigma_s = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.damping = 1.5;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Initialize, AlgorithmOneValues) {
    const GridDecomposition grid(16, 5);
    const auto [es, bs] = initialize(grid, 3, AlgoConfig{});
    EXPECT_EQ(bs.lambda, 1.0);
    EXPECT_EQ(bs.epsilon, 0.01);
    EXPECT_TRUE((bs.g_hat.array() == cplx(1, 0)).all());
    EXPECT_TRUE((bs.s_hat.array() == cplx(0, 0)).all());
    EXPECT_TRUE((bs.v_s.array() == 1.0).all());
    EXPECT_TRUE((bs.alpha.array() == 0.0).all());
    EXPECT_TRUE((es.x_bwd.array() == cplx(0, 0)).all());
    EXPECT_TRUE((es.v_bwd.array() == 1.0).all());
    EXPECT_TRUE((es.p_hat.array() == cplx(0, 0)).all());
    EXPECT_TRUE((es.v_p.array() == 5.0).all());
    EXPECT_EQ(es.x_bwd.rows(), 80);
    EXPECT_EQ(es.x_bwd.cols(), 3);
}

TEST(ForwardPass, ZeroDataStaysZero) {
    const GridDecomposition grid(16, 3);
    AlgoConfig c;
    auto [es, bs] = initialize(grid, 2, c);
    forward_pass(CMatrix::Zero(16, 2), grid, es, bs, c, 1);
    EXPECT_EQ(es.x_fwd.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(bs.s_hat.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(bs.alpha.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ForwardPass, RowAggregatesMatchDenseV) {
    std::mt19937_64 rng(4);
    const GridDecomposition grid(16, 5);
    AlgoConfig c;
    auto [es, bs] = initialize(grid, 3, c);
    es.x_bwd = random_matrix(80, 3, rng);
    std::uniform_real_distribution<double> u(0.1, 2.0);
    for (Eigen::Index i = 0; i < es.v_bwd.size(); ++i) es.v_bwd.data()[i] = u(rng);
    const CMatrix y = random_matrix(16, 3, rng);
    forward_pass(y, grid, es, bs, c, 1);
    const Eigen::MatrixXd v = grid.dense();
    const CMatrix p = v.cast<cplx>() * es.x_bwd;
    const Eigen::MatrixXd vp = v * es.v_bwd;
    EXPECT_LT((es.p_hat - p).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((es.v_p - vp).cwiseAbs().maxCoeff(), 1e-10);
    // x-> = y - p + x<- for every edge
    for (int g = 0; g < 16; ++g)
        for (int s = 0; s < 5; ++s) {
            const auto e = static_cast<Eigen::Index>(grid.edge(g, s));
            const int r = grid.row_of(g, s);
            for (int t = 0; t < 3; ++t)
                EXPECT_LT(std::abs(es.x_fwd(e, t) - (y(r, t) - p(r, t) + es.x_bwd(e, t))), 1e-12);
        }
}

TEST(ForwardPass, OnGridSourcePeaksAtTrueIndex) {
    const int m = 8;
    const GridDecomposition grid(m, 3);
    AlgoConfig c;
    c.learn_kernel = false;
    auto [es, bs] = initialize(grid, 1, c);
    const int g0 = grid.grid_index(2);
    for (int g = 0; g < m; ++g) {
        const auto k = truncated_kernel(0.0, grid);
        for (int s = 0; s < 3; ++s) bs.g_hat[static_cast<Eigen::Index>(grid.edge(g, s))] = k.values[static_cast<std::size_t>(s)];
    }
    const CMatrix y = unitary_idft_columns(steering_vector(std::asin(2.0 * 2 / m), m) * cplx(0.7, -0.4));
    forward_pass(y, grid, es, bs, c, 1);
    Eigen::Index best;
    bs.s_hat.col(0).cwiseAbs().maxCoeff(&best);
    EXPECT_EQ(best, g0);
}

// Dense oracle: with known kernels, y = A s' + n where A = V G. For a support whose
// atoms touch disjoint rows the factor graph restricted to the support is a forest,
// and one forward pass from prior-consistent backward messages is exact BP.
TEST(OracleEquivalence, SprimeBeliefsMatchDensePosterior) {
    const int m = 8, l = 3;
    const GridDecomposition grid(m, l);
    AlgoConfig c;
    c.learn_kernel = false;
    auto [es, bs] = initialize(grid, 1, c);

    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> ua(-0.5, 0.5);
    CMatrix a = CMatrix::Zero(m, m);
    for (int g = 0; g < m; ++g) {
        const auto k = truncated_kernel(ua(rng), grid);
        for (int s = 0; s < l; ++s) {
            bs.g_hat[static_cast<Eigen::Index>(grid.edge(g, s))] = k.values[static_cast<std::size_t>(s)];
            a(grid.row_of(g, s), g) += k.values[static_cast<std::size_t>(s)];
        }
    }
    const std::vector<int> support{0, 3};  // rows {3,4,5} and {6,7,0}
    for (int g = 0; g < m; ++g) bs.gamma[g] = 1e10;
    bs.gamma[0] = 0.8;
    bs.gamma[3] = 2.5;
    bs.lambda = 4.0;
    for (int g = 0; g < m; ++g)
        for (int s = 0; s < l; ++s) {
            const auto e = static_cast<Eigen::Index>(grid.edge(g, s));
            es.x_bwd(e, 0) = 0.0;
            es.v_bwd(e, 0) = std::max(std::norm(bs.g_hat[e]) / bs.gamma[g], c.var_floor);
        }
    CVector sp = CVector::Zero(m);
    sp[0] = {1.1, -0.3};
    sp[3] = {-0.4, 0.9};
    const CMatrix y = a * sp + 0.5 * random_matrix(m, 1, rng);

    forward_pass(y, grid, es, bs, c, 1);

    const CMatrix post_prec = bs.lambda * a.adjoint() * a + CMatrix(bs.gamma.cast<cplx>().asDiagonal());
    const CMatrix cov = post_prec.inverse();
    const CVector mean = bs.lambda * cov * a.adjoint() * y;
    for (int g : support) {
        EXPECT_NEAR(std::abs(bs.s_hat(g, 0) - mean[g]), 0.0, 1e-6) << g;
        EXPECT_NEAR(bs.v_s(g, 0), cov(g, g).real(), 1e-6) << g;
    }
    for (int g = 0; g < m; ++g) EXPECT_NEAR(std::abs(bs.s_hat(g, 0) - mean[g]), 0.0, 1e-6) << g;
}

TEST(BackwardPass, GammaHandExample) {
    const GridDecomposition grid(8, 3);
    AlgoConfig c;
    c.learn_kernel = false;
    auto [es, bs] = initialize(grid, 1, c);
    // s' = 0 with unit variance: |s'|^2 + v = 1
    backward_pass(CMatrix::Zero(8, 1), grid, es, bs, c, 1);
    for (int g = 0; g < 8; ++g) EXPECT_NEAR(bs.gamma[g], 1.01 / 1.0001, 1e-12);
    EXPECT_NEAR(bs.epsilon, 0.0, 1e-7);
}

TEST(TunedEpsilon, EqualGammasGiveZeroAndJensenHolds) {
    EXPECT_EQ(tuned_epsilon(Eigen::VectorXd::Constant(10, 3.7)), 0.0);
    std::mt19937_64 rng(6);
    std::lognormal_distribution<double> ln(0.0, 3.0);
    for (int trial = 0; trial < 200; ++trial) {
        Eigen::VectorXd g(50);
        for (auto& x : g) x = ln(rng);
        const double arg = std::log(g.mean()) - g.array().log().mean();
        EXPECT_GE(arg, -1e-12);
        EXPECT_NEAR(tuned_epsilon(g), 0.5 * std::sqrt(std::max(0.0, arg)), 1e-12);
    }
}

TEST(LambdaUpdate, UnitResiduals) {
    const CMatrix y = CMatrix::Zero(4, 3);
    CMatrix h = CMatrix::Constant(4, 3, cplx(0.6, 0.0));
    Eigen::MatrixXd vh = Eigen::MatrixXd::Constant(4, 3, 0.64);
    EXPECT_NEAR(lambda_from_residuals(y, h, vh), 1.0, 1e-12);
}

TEST(GaussianExtrinsic, Examples) {
    auto r = gaussian_extrinsic(1.0, 0.5, 1.0, 1.0, 1e12);
    EXPECT_DOUBLE_EQ(r.var, 1.0);
    EXPECT_DOUBLE_EQ(r.mean, 1.0);
    r = gaussian_extrinsic(2.0, 0.5, -7.0, std::numeric_limits<double>::infinity(), 1e12);
    EXPECT_DOUBLE_EQ(r.var, 0.5);
    EXPECT_DOUBLE_EQ(r.mean, 2.0);
    r = gaussian_extrinsic(2.0, 0.5, 3.0, 0.5, 1e12);
    EXPECT_DOUBLE_EQ(r.var, 1e12);
    EXPECT_DOUBLE_EQ(r.mean, 2.0);
    const auto z = gaussian_extrinsic(cplx(1, 1), 0.25, cplx(0, 0), 1.0, 1e12);
    EXPECT_NEAR(z.var, 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(std::abs(z.mean - cplx(4.0 / 3.0, 4.0 / 3.0)), 0.0, 1e-14);
}

TEST(Run, ZeroDataConvergesAtIterationTwo) {
    const GridDecomposition grid(16, 3);
    const RunResult r = run(CMatrix::Zero(16, 4), grid, AlgoConfig{});
    EXPECT_TRUE(r.converged);
    EXPECT_EQ(r.iterations, 2);
    EXPECT_EQ(r.beliefs.s_hat.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Run, OnGridSourceConverges) {
    const int m = 128;
    const GridDecomposition grid(m, 7);
    const auto snaps = generate_snapshots(draw_scenario({{30, 30}}, 10, 0), m, 30.0, 3);
    AlgoConfig c;
    const RunResult r = run(snaps.y, grid, c);
    EXPECT_TRUE(r.converged);
    EXPECT_LE(r.iterations, c.max_iter);
    EXPECT_EQ(static_cast<int>(r.trace.size()), r.iterations);
}

TEST(Run, Deterministic) {
    const GridDecomposition grid(64, 5);
    const auto snaps = generate_snapshots(draw_scenario({{-40, -30}, {10, 20}}, 5, 9), 64, 5.0, 9);
    AlgoConfig c;
    c.max_iter = 40;
    const RunResult a = run(snaps.y, grid, c), b = run(snaps.y, grid, c);
    ASSERT_EQ(a.trace.size(), b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        EXPECT_EQ(a.trace[i].relative_change, b.trace[i].relative_change);
        EXPECT_EQ(a.trace[i].lambda, b.trace[i].lambda);
        EXPECT_EQ(a.trace[i].epsilon, b.trace[i].epsilon);
    }
    EXPECT_TRUE(a.beliefs.s_hat == b.beliefs.s_hat);
    EXPECT_TRUE(a.beliefs.alpha == b.beliefs.alpha);
}

TEST(Run, VariancesStayInRangeAfterEveryPass) {
    const GridDecomposition grid(128, 7);
    const auto snaps = generate_snapshots(draw_scenario(reference_intervals(), 10, 4), 128, 0.0, 4);
    AlgoConfig c;
    auto [es, bs] = initialize(grid, 10, c);
    for (int it = 1; it <= 30; ++it) {
        forward_pass(snaps.y, grid, es, bs, c, it);
        expect_variances_in_range(es, bs, c);
        backward_pass(snaps.y, grid, es, bs, c, it);
        expect_variances_in_range(es, bs, c);
        if (::testing::Test::HasFailure()) FAIL() << "iteration " << it;
    }
}

TEST(Run, BeliefConsistencyIdentity) {
    const GridDecomposition grid(64, 5);
    const auto snaps = generate_snapshots(draw_scenario({{5, 15}}, 4, 1), 64, 10.0, 1);
    AlgoConfig c;
    auto [es, bs] = initialize(grid, 4, c);
    for (int it = 1; it <= 5; ++it) {
        forward_pass(snaps.y, grid, es, bs, c, it);
        for (int g = 0; g < 64; ++g)
            for (int t = 0; t < 4; ++t) {
                const double lhs = 1.0 / bs.v_s(g, t), rhs = 1.0 / bs.v_f_s(g, t) + bs.gamma[g];
                EXPECT_NEAR(lhs, rhs, 1e-9 * rhs);
                const cplx s = bs.v_s(g, t) * (bs.f_s(g, t) / bs.v_f_s(g, t));
                EXPECT_LE(std::abs(bs.s_hat(g, t) - s), 1e-12 * std::max(1.0, std::abs(s)));
            }
        backward_pass(snaps.y, grid, es, bs, c, it);
    }
}

TEST(Run, NonFiniteInputNamesStage) {
    const GridDecomposition grid(16, 3);
    CMatrix y = CMatrix::Zero(16, 2);
    y(3, 1) = {std::numeric_limits<double>::quiet_NaN(), 0.0};
    try {
        run(y, grid, AlgoConfig{});
        FAIL() << "expected MessagePassingError";
    } catch (const MessagePassingError& e) {
        EXPECT_EQ(e.iteration(), 1);
        EXPECT_EQ(e.stage(), "forward x-message");
    }
    EXPECT_THROW(run(CMatrix::Zero(15, 2), grid, AlgoConfig{}), std::invalid_argument);
}

TEST(RelativeChange, Conventions) {
    EXPECT_EQ(relative_change(CMatrix::Zero(3, 2), CMatrix::Zero(3, 2)), 0.0);
    EXPECT_TRUE(std::isinf(relative_change(CMatrix::Ones(3, 2), CMatrix::Zero(3, 2))));
    EXPECT_DOUBLE_EQ(relative_change(2.0 * CMatrix::Ones(3, 2), CMatrix::Ones(3, 2)), 1.0);
}

TEST(ExtractDoas, NoiselessOnGridThirtyDegrees) {
    const int m = 128;
    const GridDecomposition grid(m, 7);
    const auto snaps = generate_snapshots(draw_scenario({{30, 30}}, 5, 0), m, std::numeric_limits<double>::infinity(), 0);
    const DoaEstimate est = estimate_doas(snaps.raw, 1, grid, AlgoConfig{});
    ASSERT_EQ(est.sources.size(), 1u);
    EXPECT_NEAR(rad2deg(est.sources[0].theta), 30.0, 1e-3);
    EXPECT_NEAR(est.sources[0].alpha, 0.0, 1e-3);
    EXPECT_EQ(est.sources[0].w, 32);
    EXPECT_FALSE(est.shortfall);
}

TEST(ExtractDoas, OneHotBeliefAtZero) {
    const GridDecomposition grid(16, 3);
    auto [es, bs] = initialize(grid, 1, AlgoConfig{});
    bs.v_s.setZero();
    bs.s_hat(grid.grid_index(0), 0) = 2.0;
    const auto est = extract_doas(bs, 1, grid);
    ASSERT_EQ(est.sources.size(), 1u);
    EXPECT_EQ(est.sources[0].theta, 0.0);
    EXPECT_EQ(est.sources[0].grid, 8);
}

TEST(ExtractDoas, SuppressionAndShortfall) {
    const int m = 128;
    const GridDecomposition grid(m, 7);
    auto [es, bs] = initialize(grid, 1, AlgoConfig{});
    bs.v_s.setZero();
    bs.s_hat(20, 0) = 3.0;
    bs.s_hat(21, 0) = 2.0;  // a shoulder, not a local maximum
    bs.s_hat(60, 0) = 1.5;  // 40 bins away
    bs.s_hat(62, 0) = 1.4;  // within floor(L/2) of 60
    auto est = extract_doas(bs, 2, grid);
    ASSERT_EQ(est.sources.size(), 2u);
    EXPECT_EQ(est.sources[0].grid, 20);
    EXPECT_EQ(est.sources[1].grid, 60);
    est = extract_doas(bs, 3, grid);
    EXPECT_TRUE(est.shortfall);
    EXPECT_EQ(est.sources.size(), 2u);
}

TEST(ExtractDoas, UnwrapsBelowMinusHalfM) {
    const auto s = physical_estimate(0, -64, -0.3, 128, 1.0);
    EXPECT_EQ(s.w, 64);
    EXPECT_NEAR(s.theta, std::asin(2.0 * 63.7 / 128), 1e-12);
    const auto t = physical_estimate(0, -64, 0.3, 128, 1.0);
    EXPECT_EQ(t.w, -64);
}

TEST(ExtractDoas, ZeroDataIsShortfall) {
    const GridDecomposition grid(32, 3);
    const auto est = estimate_doas(CMatrix::Zero(32, 3), 2, grid, AlgoConfig{});
    EXPECT_TRUE(est.shortfall);
    EXPECT_TRUE(est.sources.empty());
}
