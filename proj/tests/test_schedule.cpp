// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "trajlab/schedule.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace trajlab;

TEST(NoiseSchedule, TableMatchesCumulativeProduct) {
    const auto s = build_noise_schedule();
    ASSERT_EQ(s.num_train_steps(), 1000u);
    EXPECT_DOUBLE_EQ(s.betas().front(), 0.00085);
    EXPECT_DOUBLE_EQ(s.betas().back(), 0.012);
    EXPECT_NEAR(s.alpha_bars()[0], 0.99915, 1e-15);
    EXPECT_NEAR(s.alpha_bars()[499], 0.1618121459134018, 1e-13);
    EXPECT_NEAR(s.alpha_bars()[999], 0.0015789629305514416, 1e-15);
}

TEST(NoiseSchedule, ContinuousEvaluator) {
    const auto s = build_noise_schedule();
    EXPECT_EQ(s.alpha_bar(0.0), 1.0);
    EXPECT_NEAR(s.alpha_bar(0.0005), 0.999575, 1e-15);
    EXPECT_NEAR(s.alpha_bar(0.25), 0.5708661560889988, 1e-13);
    EXPECT_NEAR(s.alpha_bar(0.2503), 0.570242720531479, 1e-13);
    EXPECT_EQ(s.alpha_bar(1.0), s.alpha_bars().back());
    EXPECT_THROW(s.alpha_bar(-0.1), Error);
    EXPECT_THROW(s.alpha_bar(1.5), Error);
}

TEST(NoiseSchedule, MonotoneInT) {
    const auto s = build_noise_schedule();
    double prev = 2.0;
    for (int i = 0; i <= 2000; ++i) {
        const double ab = s.alpha_bar(i / 2000.0);
        EXPECT_LT(ab, prev);
        prev = ab;
    }
}

TEST(NoiseSchedule, HalfLogSnrFloored) {
    const auto s = build_noise_schedule();
    EXPECT_TRUE(std::isfinite(s.half_log_snr(0.0)));
    EXPECT_NEAR(s.half_log_snr(0.5), 0.5 * std::log(0.1618121459134018 / (1 - 0.1618121459134018)), 1e-12);
}

TEST(NoiseSchedule, RejectsBadBetas) {
    EXPECT_THROW(build_noise_schedule(1000, 0.02, 0.01), Error);
    EXPECT_THROW(build_noise_schedule(1), Error);
    EXPECT_THROW(constant_beta_schedule(10, 1.0), Error);
}

TEST(Grids, DdimFive) {
    const auto g = ddim_grid(5).values;
    const double expect[] = {0.9999, 0.74995, 0.5, 0.25005, 9.999999999998899e-05};
    ASSERT_EQ(g.size(), 5u);
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(g[i], expect[i], 1e-12);
}

TEST(Grids, DpmThree) {
    const auto g = dpm_grid(3).values;
    const double expect[] = {0.99, 0.09949874371066199, 0.010000000000000004};
    ASSERT_EQ(g.size(), 3u);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(g[i], expect[i], 1e-12);
}

TEST(Grids, RejectShort) {
    EXPECT_THROW(ddim_grid(1), Error);
    EXPECT_THROW(dpm_grid(0), Error);
}

TEST(Grids, StrictlyDecreasing) {
    for (std::size_t n = 2; n < 60; ++n) {
        for (const auto& g : {ddim_grid(n).values, dpm_grid(n).values}) {
            for (std::size_t i = 1; i < n; ++i) EXPECT_LT(g[i], g[i - 1]);
        }
    }
}

TEST(HybridGrid, DefaultOperatingPoint) {
    const auto plan = hybrid_grid(6, 1, 3);
    const double expect[] = {0.9999, 0.79994, 0.15753647252978464, 0.0628425902968486, 0.025068424421340992,
                             9.999999999998899e-05};
    const Solver tags[] = {Solver::Ddim, Solver::Ddim, Solver::Dpm, Solver::Dpm, Solver::Dpm, Solver::Ddim};
    ASSERT_EQ(plan.size(), 6u);
    for (std::size_t p = 0; p < 6; ++p) {
        EXPECT_NEAR(plan.timesteps[p], expect[p], 1e-12);
        EXPECT_EQ(plan.solver_tags[p], tags[p]);
        EXPECT_EQ(plan.in_dpm_window(p), plan.convention_index(p) >= 1 && plan.convention_index(p) <= 3);
    }
    for (std::size_t p = 0; p + 1 < 6; ++p) EXPECT_EQ(plan.targets[p], plan.timesteps[p + 1]);
    EXPECT_EQ(plan.targets.back(), 0.0);
}

TEST(HybridGrid, FromNoiseSpliceRejected) {
    try {
        hybrid_grid(6, 1, 3, IndexConvention::FromNoise);
        FAIL() << "expected a splice error";
    } catch (const NonMonotoneSpliceError& e) {
        EXPECT_EQ(e.index(), 4u);
        EXPECT_EQ(e.code(), ErrorCode::NonMonotoneSplice);
    }
}

TEST(HybridGrid, FullWindowIsPureDpm) {
    const auto plan = hybrid_grid(7, 0, 6);
    const auto dpm = dpm_grid(7).values;
    for (std::size_t p = 0; p < 7; ++p) {
        EXPECT_EQ(plan.solver_tags[p], Solver::Dpm);
        EXPECT_EQ(plan.timesteps[p], dpm[p]);
    }
}

TEST(HybridGrid, InvalidWindow) {
    EXPECT_THROW(hybrid_grid(6, 3, 1), Error);
    EXPECT_THROW(hybrid_grid(6, 1, 6), Error);
    EXPECT_THROW(hybrid_grid(1, 0, 0), Error);
}

TEST(HybridGrid, MonotoneWheneverAccepted) {
    for (std::size_t T = 2; T <= 20; ++T) {
        for (std::size_t s1 = 0; s1 < T; ++s1) {
            for (std::size_t s2 = s1; s2 < T; ++s2) {
                for (auto conv : {IndexConvention::FromData, IndexConvention::FromNoise}) {
                    try {
                        const auto plan = hybrid_grid(T, s1, s2, conv);
                        for (std::size_t p = 1; p < T; ++p) EXPECT_LT(plan.timesteps[p], plan.timesteps[p - 1]);
                        std::size_t dpm = 0;
                        for (auto s : plan.solver_tags) dpm += s == Solver::Dpm;
                        EXPECT_EQ(dpm, s2 - s1 + 1);
                    } catch (const NonMonotoneSpliceError& e) {
                        EXPECT_GE(e.index(), 1u);
                        EXPECT_LT(e.index(), T);
                    }
                }
            }
        }
    }
}

TEST(FragmentedPlan, PerSegmentGrids) {
    // DDIM 0-4, DPM 5-10 in reconstruction order
    const auto plan = fragmented_plan(11, 0, 5);
    const auto ddim = ddim_grid(5).values;
    const auto dpm = dpm_grid(6).values;
    for (std::size_t p = 0; p < 5; ++p) {
        EXPECT_EQ(plan.solver_tags[p], Solver::Ddim);
        EXPECT_EQ(plan.timesteps[p], ddim[p]);
    }
    EXPECT_EQ(plan.targets[4], 0.0);
    for (std::size_t p = 5; p < 11; ++p) {
        EXPECT_EQ(plan.solver_tags[p], Solver::Dpm);
        EXPECT_EQ(plan.timesteps[p], dpm[p - 5]);
    }
    EXPECT_EQ(plan.targets[10], 0.0);
    EXPECT_NE(plan.fingerprint(), hybrid_grid(11, 0, 5).fingerprint());
}

TEST(UniformPlan, Shapes) {
    const auto d = uniform_plan(4, Solver::Ddim);
    const auto p = uniform_plan(4, Solver::Dpm);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(d.solver_tags[i], Solver::Ddim);
        EXPECT_EQ(p.solver_tags[i], Solver::Dpm);
    }
    EXPECT_EQ(d.timesteps, ddim_grid(4).values);
    EXPECT_EQ(p.timesteps, dpm_grid(4).values);
}

TEST(Plan, CsvAndStrings) {
    std::ostringstream os;
    write_plan_csv(os, hybrid_grid(6, 1, 3));
    const std::string csv = os.str();
    EXPECT_EQ(csv.rfind("step_index,timestep,solver_tag\n0,0.99990000000000001,DDIM\n", 0), 0u);
    EXPECT_NE(csv.find("2,0.15753647252978464,DPM"), std::string::npos);
    EXPECT_EQ(solver_from_string("dpm"), Solver::Dpm);
    EXPECT_EQ(convention_from_string("FROM_NOISE"), IndexConvention::FromNoise);
    EXPECT_THROW(solver_from_string("euler"), Error);
}
