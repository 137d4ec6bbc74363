// Copyright (c) ellipcert contributors.
// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "ellipcert/synthesis.hpp"
#include "support/oracles.hpp"

using namespace ellipcert;

namespace {

Matrix stable_matrix(oracle::Rng& rng, Eigen::Index n, double rho) {
    Matrix a = rng.matrix(n, n);
    return a * (rho / spectral_radius(a));
}

// Minimum over lambda of the scalar invariant bound
// P(lambda) = b^2 U^2 lambda / ((lambda - a^2)(1 - lambda)), by dense scan.
double scalar_optimum(double a, double b, double bound) {
    double best = 1e300;
    const int n = 2000000;
    for (int k = 1; k < n; ++k) {
        double lambda = a * a + (1.0 - a * a) * k / n;
        best = std::min(best, b * b * bound * bound * lambda / ((lambda - a * a) * (1.0 - lambda)));
    }
    return best;
}

SynthesisResult run(const std::string& fixture, const SynthesisConfig& cfg = {}) {
    Analysis a = prepare(oracle::fixture(fixture), cfg.inputs);
    return synthesize(a.summary, a.init, cfg);
}

} // namespace

TEST(Lyapunov, ScalarClosedForm) {
    SymMatrix p = solve_discrete_lyapunov(Matrix::Constant(1, 1, 0.5), SymMatrix::identity(1));
    EXPECT_NEAR(p(0, 0), 4.0 / 3.0, 1e-10);
}

TEST(Lyapunov, RandomStableSystemsHaveSmallResidual) {
    oracle::Rng rng(100);
    for (int k = 0; k < 100; ++k) {
        auto n = rng.integer(1, 10);
        Matrix a = stable_matrix(rng, n, rng.uniform(0.0, 0.99));
        SymMatrix q(rng.spd(n));
        SymMatrix p = solve_discrete_lyapunov(a, q);
        Matrix r = p.mat() - a * p.mat() * a.transpose() - q.mat();
        EXPECT_LE(r.norm(), 1e-8 * p.mat().norm()) << "n=" << n;
    }
}

// Truncated series sum_k A^k Q A'^k as an independent reference.
TEST(Lyapunov, MatchesSeriesSum) {
    oracle::Rng rng(101);
    for (int k = 0; k < 20; ++k) {
        auto n = rng.integer(1, 6);
        Matrix a = stable_matrix(rng, n, 0.8);
        Matrix q = rng.spd(n);
        Matrix sum = Matrix::Zero(n, n);
        Matrix term = q;
        for (int i = 0; i < 2000 && term.norm() > 1e-18 * sum.norm(); ++i) {
            sum += term;
            term = a * term * a.transpose();
        }
        SymMatrix p = solve_discrete_lyapunov(a, SymMatrix(q));
        EXPECT_LE((p.mat() - sum).norm(), 1e-9 * sum.norm());
    }
}

TEST(Lyapunov, LargeSystemsUseDoubling) {
    oracle::Rng rng(102);
    Matrix a = stable_matrix(rng, 40, 0.9);
    SymMatrix q(rng.spd(40));
    SymMatrix p = solve_discrete_lyapunov(a, q);
    EXPECT_LE(lyapunov_residual(a, p, q), 1e-8 * p.mat().norm());
}

TEST(Lyapunov, UnstableSystemsAreRejected) {
    Matrix a(2, 2);
    a << 1.0, 0.0, 0.0, 0.5;
    try {
        solve_discrete_lyapunov(a, SymMatrix::identity(2));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::SpectralRadiusTooLarge);
    }
}

TEST(Synthesis, ScalarRadiusMatchesClosedForm) {
    SynthesisResult r = run("scalar.ctl");
    ASSERT_TRUE(r.proved()) << r.reason;
    double p = r.P(0, 0);
    double radius = std::sqrt(p);
    EXPECT_GE(radius, 2000.0);
    EXPECT_LE(radius, 2100.0);
    double best = scalar_optimum(0.999, 2.0, 1.0);
    EXPECT_NEAR(best, 4.0e6, 0.02e6);
    EXPECT_GE(p, best * (1 - 1e-6));
    EXPECT_LE(p, best * 1.01);
}

TEST(Synthesis, SubsystemOfTwoStateMatchesScalar) {
    SynthesisResult a = run("twostate_x1.ctl");
    SynthesisResult b = run("scalar.ctl");
    ASSERT_TRUE(a.proved());
    ASSERT_TRUE(b.proved());
    EXPECT_NEAR(a.P(0, 0), b.P(0, 0), 1e-6 * b.P(0, 0));
}

TEST(Synthesis, InputBoundScalesTheInvariant) {
    SynthesisConfig cfg;
    cfg.inputs.bounds[0] = 2.0;
    SynthesisResult r2 = run("scalar.ctl", cfg);
    SynthesisResult r1 = run("scalar.ctl");
    ASSERT_TRUE(r1.proved());
    ASSERT_TRUE(r2.proved());
    EXPECT_NEAR(r2.P(0, 0) / r1.P(0, 0), 4.0, 0.04);
}

TEST(Synthesis, TwoStateIsMarginal) {
    SynthesisResult r = run("twostate.ctl");
    EXPECT_FALSE(r.proved());
    EXPECT_NE(r.reason.find("marginal spectral radius 1.0"), std::string::npos) << r.reason;
}

TEST(Synthesis, SectorPatternIsProved) {
    SynthesisResult r = run("sector.ctl");
    ASSERT_TRUE(r.proved()) << r.reason;
    EXPECT_FALSE(run("sector_unstable.ctl").proved());
}

TEST(Synthesis, ResultsReplayThroughTheirOwnChain) {
    for (const char* f : {"scalar.ctl", "rotation.ctl", "sector.ctl", "sector_input.ctl", "halving.ctl"}) {
        Analysis a = prepare(oracle::fixture(f));
        SynthesisResult r = synthesize(a.summary, a.init);
        ASSERT_TRUE(r.proved()) << f << ": " << r.reason;
        auto posts = evaluate_chain_abs(a.summary, r.P, r.chain.params);
        EXPECT_TRUE(loewner_leq(posts.back(), r.P, r.margin)) << f;
        EXPECT_TRUE(check_initial(a.init, r.P)) << f;
        EXPECT_GT(r.margin, 0.0) << f;
    }
}

TEST(Synthesis, Deterministic) {
    SynthesisResult a = run("rotation.ctl");
    SynthesisResult b = run("rotation.ctl");
    ASSERT_TRUE(a.proved());
    EXPECT_EQ(a.P.mat(), b.P.mat());
    EXPECT_EQ(a.theta, b.theta);
}

TEST(Config, JsonRoundTrip) {
    auto j = nlohmann::json::parse(R"({"inputs": {"0": {"type": "rect", "bound": 2.5}}, "grid": 16, "refine": 1,
                                       "margin": "auto"})");
    SynthesisConfig c = synthesis_config_from_json(j);
    EXPECT_EQ(c.inputs.bound(0), 2.5);
    EXPECT_EQ(c.inputs.bound(7), 1.0);
    EXPECT_EQ(c.grid, 16);
    EXPECT_EQ(c.refine, 1);
    EXPECT_FALSE(c.margin.has_value());
    SynthesisConfig d = synthesis_config_from_json(to_json(c));
    EXPECT_EQ(d.inputs.bounds, c.inputs.bounds);
    EXPECT_EQ(d.grid, c.grid);
}

TEST(Config, MalformedConfigIsAFormatError) {
    for (const char* text : {R"([1, 2])", R"({"inputs": {"0": {"type": "ball", "bound": 1}}})",
                             R"({"inputs": {"x": {"bound": 1}}})", R"({"margin": -1})", R"({"grid": 1})"}) {
        try {
            synthesis_config_from_json(nlohmann::json::parse(text));
            ADD_FAILURE() << text;
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::Format) << text;
        }
    }
}
