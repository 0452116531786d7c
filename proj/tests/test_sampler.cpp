// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "trajlab/sampler.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <sstream>
#include <vector>

using namespace trajlab;

namespace {

Vector randn(int n, std::mt19937_64& rng) {
    std::normal_distribution<double> n01;
    Vector v(n);
    for (int i = 0; i < n; ++i) v[i] = n01(rng);
    return v;
}

GaussianOracle make_oracle(int d, unsigned seed, const NoiseSchedule& sched) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.4, 1.2);
    GaussianOracleConfig cfg;
    cfg.mu = randn(d, rng);
    cfg.sigma_diag = Vector(d);
    for (int i = 0; i < d; ++i) cfg.sigma_diag[i] = u(rng);
    return GaussianOracle(cfg, sched);
}

bool bit_equal(const Vector& a, const Vector& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

std::vector<Embedding> empties(std::size_t n) { return std::vector<Embedding>(n); }

}  // namespace

TEST(DdimStep, IdentityAtSameLevelIsBitwise) {
    const auto sched = build_noise_schedule();
    const auto oracle = make_oracle(8, 1, sched);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> ut(1e-3, 1.0);
    for (int i = 0; i < 200; ++i) {
        const Vector z = randn(8, rng);
        const double t = ut(rng);
        EXPECT_TRUE(bit_equal(ddim_step(sched, oracle, z, t, t, Embedding{}), z));
    }
}

TEST(DdimStep, MatchesEpsForm) {
    const auto sched = build_noise_schedule();
    const auto oracle = make_oracle(5, 3, sched);
    std::mt19937_64 rng(4);
    const Vector z = randn(5, rng);
    const double t = 0.8, k = 0.35;
    const Vector eps = oracle.eps(z, t, Embedding{});
    const Vector x0 = (z - sched.noise(t) * eps) / sched.signal(t);
    const Vector expect = sched.signal(k) * x0 + sched.noise(k) * eps;
    EXPECT_LT((ddim_step(sched, oracle, z, t, k, Embedding{}) - expect).norm(), 1e-13);
}

TEST(DdimStep, OrderingErrors) {
    const auto sched = build_noise_schedule();
    const auto oracle = make_oracle(3, 5, sched);
    const Vector z = Vector::Ones(3);
    EXPECT_THROW(ddim_step(sched, oracle, z, 0.3, 0.5, Embedding{}), Error);
    EXPECT_THROW(ddim_invert_step(sched, oracle, z, 0.5, 0.5, Embedding{}), Error);
    EXPECT_THROW(ddim_step(sched, oracle, Vector::Ones(4), 0.5, 0.3, Embedding{}), Error);
}

TEST(DdimStep, ZeroEpsRoundTripIsExact) {
    const auto sched = build_noise_schedule();
    ConstantPredictor zero(Vector::Zero(4));
    const Vector x = Vector::LinSpaced(4, -1, 1);
    const auto plan = uniform_plan(10, Solver::Ddim);
    const auto inv = run_trajectory(plan, sched, zero, x, empties(10), Direction::Inversion);
    const auto rec = run_trajectory(plan, sched, zero, inv.final_latent(), empties(10), Direction::Reconstruction);
    EXPECT_LT((rec.final_latent() - x).norm(), 1e-12);
}

TEST(DpmStep, FirstOrderEqualsDdim) {
    const auto sched = build_noise_schedule();
    const auto oracle = make_oracle(6, 6, sched);
    std::mt19937_64 rng(7);
    const Vector z = randn(6, rng);
    const Latent ddim = ddim_step(sched, oracle, z, 0.7, 0.2, Embedding{});
    const auto dpm = dpm2m_step(sched, oracle, z, 0.7, 0.2, Embedding{}, Dpm2mState{});
    EXPECT_LT((dpm.latent - ddim).norm(), 1e-12);
    EXPECT_FALSE(dpm.state.empty());
}

TEST(DpmStep, SecondOrderCoefficients) {
    const auto sched = build_noise_schedule();
    Dpm2mState st;
    st.prev_x0 = Vector::Zero(2);
    st.prev_lambda = sched.half_log_snr(0.9);
    const auto c = step_coefficients(sched, Solver::Dpm, 0.6, 0.3, st);
    const double lt = sched.half_log_snr(0.6), lk = sched.half_log_snr(0.3);
    const double h = lk - lt, r = (lt - st.prev_lambda) / h;
    const double ak = sched.signal(0.3);
    EXPECT_TRUE(c.uses_history);
    EXPECT_NEAR(c.z, sched.noise(0.3) / sched.noise(0.6), 1e-15);
    EXPECT_NEAR(c.x0, ak * (1 - std::exp(-h)) * (1 + 0.5 / r), 1e-14);
    EXPECT_NEAR(c.x0_prev, -ak * (1 - std::exp(-h)) * 0.5 / r, 1e-14);
    SamplerOptions first;
    first.dpm_order = 1;
    EXPECT_FALSE(step_coefficients(sched, Solver::Dpm, 0.6, 0.3, st, first).uses_history);
    SamplerOptions bad;
    bad.dpm_order = 3;
    EXPECT_THROW(step_coefficients(sched, Solver::Dpm, 0.6, 0.3, st, bad), Error);
}

TEST(DpmStep, DataEndFallsBackAndDropsHistory) {
    const auto sched = build_noise_schedule();
    Dpm2mState st;
    st.prev_x0 = Vector::Zero(2);
    st.prev_lambda = sched.half_log_snr(0.5);
    const auto c = step_coefficients(sched, Solver::Dpm, 0.2, 0.0, st);
    EXPECT_FALSE(c.uses_history);
    EXPECT_TRUE(c.touches_data_end);
    EXPECT_EQ(c.z, 0.0);
    EXPECT_EQ(c.x0, 1.0);
}

TEST(EpsGain, MatchesFiniteDifference) {
    const auto sched = build_noise_schedule();
    for (Solver s : {Solver::Ddim, Solver::Dpm}) {
        Dpm2mState st;
        st.prev_x0 = Vector::Constant(1, 0.3);
        st.prev_lambda = sched.half_log_snr(0.9);
        const auto c = step_coefficients(sched, s, 0.6, 0.3, st);
        const Vector z = Vector::Constant(1, 0.7);
        auto f = [&](double e) {
            const Vector eps = Vector::Constant(1, e);
            return apply_update(c, z, predict_x0(sched, z, 0.6, eps), eps, st)[0];
        };
        const double h = 1e-6;
        EXPECT_NEAR(eps_gain(c, sched, 0.6), (f(0.1 + h) - f(0.1 - h)) / (2 * h), 1e-8);
    }
}

TEST(HybridStep, AllDpmPlanMatchesManualLoop) {
    const auto sched = build_noise_schedule();
    const auto oracle = make_oracle(4, 8, sched);
    std::mt19937_64 rng(9);
    const Vector z0 = randn(4, rng);
    const auto plan = uniform_plan(8, Solver::Dpm);
    const auto traj = run_trajectory(plan, sched, oracle, z0, empties(8), Direction::Reconstruction);
    Vector z = z0;
    Dpm2mState st;
    for (std::size_t p = 0; p < 8; ++p) {
        auto r = dpm2m_step(sched, oracle, z, plan.timesteps[p], plan.targets[p], Embedding{}, st);
        z = r.latent;
        st = r.state;
    }
    EXPECT_TRUE(bit_equal(traj.final_latent(), z));
}

TEST(HybridStep, AllDdimPlanMatchesManualLoop) {
    const auto sched = build_noise_schedule();
    const auto oracle = make_oracle(4, 10, sched);
    std::mt19937_64 rng(11);
    const Vector z0 = randn(4, rng);
    const auto plan = uniform_plan(7, Solver::Ddim);
    const auto traj = run_trajectory(plan, sched, oracle, z0, empties(7), Direction::Reconstruction);
    Vector z = z0;
    for (std::size_t p = 0; p < 7; ++p) z = ddim_step(sched, oracle, z, plan.timesteps[p], plan.targets[p], Embedding{});
    EXPECT_TRUE(bit_equal(traj.final_latent(), z));
}

TEST(Trajectory, InversionMirrorsPlan) {
    const auto sched = build_noise_schedule();
    const auto oracle = make_oracle(3, 12, sched);
    const auto plan = hybrid_grid(6, 1, 3);
    const auto inv = run_trajectory(plan, sched, oracle, Vector::Ones(3), empties(6), Direction::Inversion);
    ASSERT_EQ(inv.steps.size(), 6u);
    EXPECT_EQ(inv.steps[0].timestep, 0.0);
    EXPECT_EQ(inv.steps[0].solver_tag, Solver::Ddim);
    EXPECT_EQ(inv.steps[5].target, plan.timesteps[0]);
    for (std::size_t j = 0; j < 6; ++j) {
        EXPECT_LT(inv.steps[j].timestep, inv.steps[j].target);
        EXPECT_EQ(inv.steps[j].solver_tag, plan.solver_tags[5 - j]);
        if (j > 0) EXPECT_EQ(inv.steps[j].latent_before, inv.steps[j - 1].latent_after);
    }
    EXPECT_THROW(run_trajectory(plan, sched, oracle, Vector::Ones(3), empties(5), Direction::Inversion), Error);
}

TEST(Trajectory, RoundTripConvergesUnderRefinement) {
    const auto sched = build_noise_schedule();
    const auto oracle = make_oracle(8, 14, sched);
    std::mt19937_64 rng(15);
    const Vector x = oracle.config().mu + oracle.config().sigma_diag.cwiseProduct(randn(8, rng));
    std::vector<double> errs;
    for (std::size_t T : {25u, 50u, 100u, 200u}) {
        const auto plan = uniform_plan(T, Solver::Ddim);
        const auto inv = run_trajectory(plan, sched, oracle, x, empties(T), Direction::Inversion);
        const auto rec = run_trajectory(plan, sched, oracle, inv.final_latent(), empties(T), Direction::Reconstruction);
        errs.push_back((rec.final_latent() - x).norm() / x.norm());
    }
    for (std::size_t i = 1; i < errs.size(); ++i) {
        EXPECT_LT(errs[i], errs[i - 1]);
        // first-order method: doubling T roughly halves the error
        EXPECT_NEAR(errs[i - 1] / errs[i], 2.0, 0.35);
    }
}

TEST(Trajectory, DpmOrderAgainstExactFlow) {
    const auto sched = build_noise_schedule();
    const auto oracle = make_oracle(6, 16, sched);
    std::mt19937_64 rng(17);
    const Vector z0 = randn(6, rng);
    std::vector<double> errs;
    for (std::size_t T : {5u, 10u, 20u, 40u}) {
        // T steps from 0.99 to 0.01 on the log-uniform grid
        HybridPlan plan = uniform_plan(T + 1, Solver::Dpm);
        plan.timesteps.pop_back();
        plan.solver_tags.pop_back();
        plan.targets.pop_back();
        plan.s2 = T - 1;
        const auto rec = run_trajectory(plan, sched, oracle, z0, empties(T), Direction::Reconstruction);
        const Vector ref = oracle.exact_flow(z0, plan.timesteps.front(), plan.targets.back(), Embedding{});
        errs.push_back((rec.final_latent() - ref).norm());
    }
    for (std::size_t i = 1; i < errs.size(); ++i) EXPECT_LT(errs[i], errs[i - 1]);
    EXPECT_GE(std::log2(errs[2] / errs[3]), 1.8);
}

TEST(Trajectory, CsvColumns) {
    const auto sched = build_noise_schedule();
    ConstantPredictor zero(Vector::Zero(2));
    const auto traj = run_trajectory(hybrid_grid(6, 1, 3), sched, zero, Vector::Ones(2), empties(6),
                                     Direction::Reconstruction);
    std::ostringstream os;
    write_trajectory_csv(os, traj);
    const std::string s = os.str();
    EXPECT_EQ(s.rfind("direction,step_index,timestep,solver_tag,l2_latent,l2_x0\nRECONSTRUCTION,0,", 0), 0u);
    EXPECT_NE(s.find(",DPM,"), std::string::npos);
}
