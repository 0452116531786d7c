// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "trajlab/nulltext.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace trajlab;
using testutil::bit_equal;
using testutil::randn;

namespace {

struct OracleCase {
    NoiseSchedule sched = build_noise_schedule();
    HybridPlan plan = hybrid_grid(6, 1, 3);
    std::shared_ptr<GaussianOracle> pred;
    Embedding cond;
    Vector source;
    Trajectory inv;

    OracleCase(int d, int m, unsigned seed) {
        pred = testutil::make_oracle(d, m, seed, sched);
        std::mt19937_64 rng(seed + 100);
        cond.role = EmbeddingRole::Conditional;
        cond.values = 0.5 * randn(m, rng);
        source = pred->config().effective_mean(cond.values) + randn(d, rng);
        inv = run_trajectory(plan, sched, *pred, source, std::vector<Embedding>(plan.size(), cond),
                             Direction::Inversion);
    }
};

NullTextOptions exact(int iterations) {
    NullTextOptions o;
    o.rule = NullStepRule::ExactLineSearch;
    o.iterations = iterations;
    return o;
}

}  // namespace

TEST(Targets, MirrorInversion) {
    OracleCase s(6, 6, 1);
    const auto t = recon_targets(s.inv, s.source);
    ASSERT_EQ(t.latents.size(), 6u);
    EXPECT_TRUE(bit_equal(t.latents[0], s.inv.steps[4].latent_after));
    EXPECT_TRUE(bit_equal(t.latents[4], s.inv.steps[0].latent_after));
    EXPECT_TRUE(bit_equal(t.latents[5], s.source));
    Trajectory rec = s.inv;
    rec.direction = Direction::Reconstruction;
    EXPECT_THROW(recon_targets(rec, s.source), Error);
}

TEST(NullText, ZeroIterationsKeepsInitialNull) {
    OracleCase s(8, 8, 2);
    NullTextOptions o;
    o.iterations = 0;
    const auto emb = optimize_null_schedule(s.plan, s.sched, s.pred, s.inv.final_latent(),
                                            recon_targets(s.inv, s.source), s.cond, s.cond.values, o);
    ASSERT_EQ(emb.nulls.size(), 6u);
    for (const auto& n : emb.nulls) EXPECT_TRUE(bit_equal(n.values, s.cond.values));
    for (int u : emb.iterations_used) EXPECT_EQ(u, 0);
}

TEST(NullText, ExactLineSearchDrivesResidualsToZero) {
    OracleCase s(16, 16, 3);
    const auto targets = recon_targets(s.inv, s.source);
    const auto emb =
        optimize_null_schedule(s.plan, s.sched, s.pred, s.inv.final_latent(), targets, s.cond, s.cond.values, exact(500));
    for (double r : emb.residuals) EXPECT_LE(r, 1e-6);
    EXPECT_TRUE(emb.non_converged.empty());
    const auto rec = reconstruct_with_null(s.plan, s.sched, s.pred, s.inv.final_latent(), emb);
    const auto replay = step_residuals(rec, targets);
    for (std::size_t p = 0; p < replay.size(); ++p) EXPECT_EQ(replay[p], emb.residuals[p]);
}

TEST(NullText, LossTraceNonIncreasing) {
    OracleCase s(12, 12, 4);
    for (NullStepRule rule : {NullStepRule::Fixed, NullStepRule::ExactLineSearch}) {
        NullTextOptions o;
        o.rule = rule;
        o.iterations = 25;
        o.learning_rate = 50.0;
        Vector shifted = s.cond.values + Vector::Ones(12);
        const auto emb = optimize_null_schedule(s.plan, s.sched, s.pred, s.inv.final_latent(),
                                                recon_targets(s.inv, s.source), s.cond, shifted, o);
        for (const auto& trace : emb.loss_trace) {
            for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i], trace[i - 1]);
        }
    }
}

TEST(NullText, MatchesClosedFormLeastSquares) {
    // m < d: the per-step problem is an overdetermined linear least-squares fit
    const int d = 12;
    const int m = 5;
    OracleCase s(d, m, 5);
    const auto targets = recon_targets(s.inv, s.source);
    NullTextOptions o = exact(4000);
    o.early_stop = 0.0;
    const Vector start = s.cond.values + Vector::Constant(m, 0.3);
    const auto emb = optimize_null_schedule(s.plan, s.sched, s.pred, s.inv.final_latent(), targets, s.cond, start, o);
    const auto rec = reconstruct_with_null(s.plan, s.sched, s.pred, s.inv.final_latent(), emb);

    const auto& cfg = s.pred->config();
    Vector prev = start;
    Dpm2mState state;
    for (std::size_t p = 0; p < s.plan.size(); ++p) {
        const double t = s.plan.timesteps[p];
        const double ab = s.sched.alpha_bar(t);
        const double a = std::sqrt(ab);
        const Vector gain = (std::sqrt(1.0 - ab) / (ab * cfg.sigma_diag.array().square() + 1.0 - ab)).matrix();
        const auto c = step_coefficients(s.sched, s.plan.solver_tags[p], t, s.plan.targets[p],
                                         s.plan.solver_tags[p] == Solver::Dpm ? state : Dpm2mState{});
        const double g = eps_gain(c, s.sched, t);
        const Matrix J = -g * a * gain.asDiagonal() * cfg.coupling;
        const auto base = hybrid_step(s.plan, p, s.sched, *s.pred, rec.steps[p].latent_before, Embedding{prev}, state);
        const Vector r = targets.latents[p] - base.latent;
        const Vector closed = prev + J.colPivHouseholderQr().solve(r);
        EXPECT_LE((emb.nulls[p].values - closed).norm(), 1e-6 * closed.norm()) << "step " << p;
        const auto step = hybrid_step(s.plan, p, s.sched, *s.pred, rec.steps[p].latent_before, emb.nulls[p], state);
        state = step.state;
        prev = emb.nulls[p].values;
    }
}

TEST(NullText, GuidedVariantStillConverges) {
    OracleCase s(10, 10, 6);
    NullTextOptions o = exact(500);
    o.guidance = 0.5;
    const auto emb = optimize_null_schedule(s.plan, s.sched, s.pred, s.inv.final_latent(),
                                            recon_targets(s.inv, s.source), s.cond, s.cond.values, o);
    for (double r : emb.residuals) EXPECT_LE(r, 1e-6);
    EXPECT_NE(effective_predictor(s.pred, emb), PredictorPtr(s.pred));
}

TEST(NullText, ZeroCouplingCannotMove) {
    OracleCase s(6, 4, 7);
    GaussianOracleConfig cfg = s.pred->config();
    cfg.coupling.setZero();
    auto flat = std::make_shared<GaussianOracle>(cfg, s.sched);
    const auto emb = optimize_null_schedule(s.plan, s.sched, flat, s.inv.final_latent(),
                                            recon_targets(s.inv, s.source), s.cond, std::nullopt, exact(50));
    for (const auto& n : emb.nulls) EXPECT_TRUE(n.values.isZero(0.0));
    EXPECT_FALSE(emb.non_converged.empty());
}

TEST(NullText, PlanMismatchRejected) {
    OracleCase s(6, 6, 8);
    const auto emb = optimize_null_schedule(s.plan, s.sched, s.pred, s.inv.final_latent(),
                                            recon_targets(s.inv, s.source), s.cond, s.cond.values, exact(20));
    EXPECT_THROW(reconstruct_with_null(hybrid_grid(6, 0, 3), s.sched, s.pred, s.inv.final_latent(), emb), Error);
    EXPECT_THROW(reconstruct_with_null(fragmented_plan(6, 1, 3), s.sched, s.pred, s.inv.final_latent(), emb), Error);
    try {
        reconstruct_with_null(uniform_plan(6, Solver::Ddim), s.sched, s.pred, s.inv.final_latent(), emb);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::PlanMismatch);
    }
}

TEST(NullText, ArgumentErrors) {
    OracleCase s(6, 6, 9);
    ReconTargets few{{s.source}};
    EXPECT_THROW(optimize_null_schedule(s.plan, s.sched, s.pred, s.inv.final_latent(), few, s.cond), Error);
    NullTextOptions o;
    o.learning_rate = 0.0;
    EXPECT_THROW(optimize_null_schedule(s.plan, s.sched, s.pred, s.inv.final_latent(), recon_targets(s.inv, s.source),
                                        s.cond, std::nullopt, o),
                 Error);
    EXPECT_THROW(optimize_null_schedule(s.plan, s.sched, nullptr, s.inv.final_latent(),
                                        recon_targets(s.inv, s.source), s.cond),
                 Error);
    EXPECT_THROW(null_step_rule_from_string("adam"), Error);
}

TEST(NullText, SerializationRoundTripIsExact) {
    OracleCase s(6, 6, 10);
    NullTextOptions o = exact(30);
    o.guidance = 0.25;
    const auto emb = optimize_null_schedule(s.plan, s.sched, s.pred, s.inv.final_latent(),
                                            recon_targets(s.inv, s.source), s.cond, s.cond.values, o);
    std::stringstream ss;
    write_embedding_schedule(ss, emb);
    const auto back = read_embedding_schedule(ss);
    EXPECT_EQ(back.plan_fingerprint, emb.plan_fingerprint);
    EXPECT_EQ(back.options.guidance, 0.25);
    ASSERT_EQ(back.nulls.size(), emb.nulls.size());
    for (std::size_t p = 0; p < emb.nulls.size(); ++p) EXPECT_TRUE(bit_equal(back.nulls[p].values, emb.nulls[p].values));
    EXPECT_TRUE(bit_equal(back.conditional.values, emb.conditional.values));
    const auto a = reconstruct_with_null(s.plan, s.sched, s.pred, s.inv.final_latent(), emb);
    const auto b = reconstruct_with_null(s.plan, s.sched, s.pred, s.inv.final_latent(), back);
    EXPECT_TRUE(bit_equal(a.final_latent(), b.final_latent()));

    std::istringstream junk("not-a-schedule\n");
    EXPECT_THROW(read_embedding_schedule(junk), Error);
}
