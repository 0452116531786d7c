// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "trajlab/align.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

namespace trajlab {

namespace {

void check_lambda(double lambda) {
    require(lambda >= 0.0 && lambda <= 0.5, ErrorCode::InvalidRange,
            "mixing weight " + std::to_string(lambda) + " outside [0, 0.5]");
}

}  // namespace

std::pair<Latent, Latent> adaptive_mix_step(const Latent& z1, const Latent& z2, double lambda) {
    check_lambda(lambda);
    require_same_dim(z1, z2, "adaptive_mix_step");
    if (lambda == 0.5) {
        Latent m = hard_merge(z1, z2);
        return {m, m};
    }
    const Latent diff = z2 - z1;
    return {z1 + lambda * diff, z2 - lambda * diff};
}

double alignment_loss(double lambda, double discrepancy) {
    const double f = 1.0 - 2.0 * lambda;
    return f * f * discrepancy;
}

MixingState lambda_update(const MixingState& state, const Latent& z1, const Latent& z2) {
    const double d = mean_squared_diff(z1, z2);
    MixingState next = state;
    next.lambda = std::clamp(state.lambda + 4.0 * state.eta * (1.0 - 2.0 * state.lambda) * d, 0.0, 0.5);
    return next;
}

Latent hard_merge(const Latent& z1, const Latent& z2) {
    require_same_dim(z1, z2, "hard_merge");
    return 0.5 * (z1 + z2);
}

bool AlignedPair::loss_non_increasing() const {
    for (std::size_t i = 1; i < loss_history.size(); ++i) {
        if (loss_history[i] > loss_history[i - 1]) return false;
    }
    return true;
}

AlignedPair align_inversion(const HybridPlan& plan, const NoiseSchedule& schedule, const NoisePredictor& pred1,
                            const NoisePredictor& pred2, const Latent& z1_0, const Latent& z2_0,
                            std::span<const Embedding> embeddings1, std::span<const Embedding> embeddings2,
                            double init_lambda, const AlignOptions& options) {
    check_lambda(init_lambda);
    require(options.eta > 0.0, ErrorCode::InvalidRange, "align_inversion: eta must be > 0");
    require(options.delta >= 0.0 && options.delta <= 0.5, ErrorCode::InvalidRange,
            "align_inversion: delta outside [0, 0.5]");
    require_same_dim(z1_0, z2_0, "align_inversion");
    require(embeddings1.size() >= plan.size() && embeddings2.size() >= plan.size(), ErrorCode::InvalidRange,
            "align_inversion: one embedding per plan step is required");

    AlignedPair out;
    for (Trajectory* tr : {&out.traj_1, &out.traj_2}) {
        tr->direction = Direction::Inversion;
        tr->plan = plan;
        tr->steps.reserve(plan.size());
    }
    MixingState mix{init_lambda, options.eta, options.merge_mode, options.delta};
    Latent z1 = z1_0;
    Latent z2 = z2_0;
    Dpm2mState st1;
    Dpm2mState st2;
    bool merged = false;

    for (std::size_t j = 0; j < plan.size(); ++j) {
        const std::size_t p = plan_position(plan, j, Direction::Inversion);
        const auto [from, to] = step_levels(plan, j, Direction::Inversion);
        StepOutcome a = hybrid_step(plan, j, schedule, pred1, z1, embeddings1[p], st1, Direction::Inversion,
                                    options.sampler);
        StepOutcome b = hybrid_step(plan, j, schedule, pred2, z2, embeddings2[p], st2, Direction::Inversion,
                                    options.sampler);
        const double d = mean_squared_diff(a.latent, b.latent);
        out.discrepancy_history.push_back(d);

        const bool last = j + 1 == plan.size();
        const bool threshold = mix.merge_mode == MergeMode::Threshold && mix.lambda >= 0.5 - mix.delta;
        if (!merged && (threshold || last)) {
            if (mix.lambda < options.warn_below) {
                char buf[128];
                std::snprintf(buf, sizeof buf, "lambda=%.6g below %.6g at merge step %zu", mix.lambda,
                              options.warn_below, j);
                out.warnings.emplace_back(buf);
            }
            merged = true;
            out.merge_step = j;
            mix.lambda = 0.5;
        }

        Latent n1;
        Latent n2;
        if (merged) {
            n1 = hard_merge(a.latent, b.latent);
            n2 = n1;
        } else {
            std::tie(n1, n2) = adaptive_mix_step(a.latent, b.latent, mix.lambda);
        }
        out.lambda_history.push_back(mix.lambda);
        out.loss_history.push_back(alignment_loss(mix.lambda, d));
        if (!merged) mix = lambda_update(mix, a.latent, b.latent);

        for (auto [tr, before, outcome, after] :
             {std::tuple{&out.traj_1, &z1, &a, &n1}, std::tuple{&out.traj_2, &z2, &b, &n2}}) {
            StepRecord rec;
            rec.step_index = j;
            rec.timestep = from;
            rec.target = to;
            rec.solver_tag = plan.solver_tags[p];
            rec.latent_before = *before;
            rec.latent_after = *after;
            rec.x0_estimate = outcome->x0;
            tr->steps.push_back(std::move(rec));
        }
        z1 = std::move(n1);
        z2 = std::move(n2);
        st1 = std::move(a.state);
        st2 = std::move(b.state);
    }
    out.z_shared = z1;
    return out;
}

void write_alignment_csv(std::ostream& out, const AlignedPair& pair) {
    out << "step,lambda,align_loss,l2_z1_z2\n";
    char buf[160];
    for (std::size_t j = 0; j < pair.lambda_history.size(); ++j) {
        const double l2 = (pair.traj_1.steps[j].latent_after - pair.traj_2.steps[j].latent_after).norm();
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", j, pair.lambda_history[j], pair.loss_history[j], l2);
        out << buf;
    }
}

}  // namespace trajlab
