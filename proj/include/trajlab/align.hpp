// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "trajlab/predictor.hpp"
#include "trajlab/sampler.hpp"

#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace trajlab {

enum class MergeMode { FinalStepOnly, Threshold };

struct MixingState {
    double lambda = 0.04;
    double eta = 0.01;
    MergeMode merge_mode = MergeMode::Threshold;
    double delta = 0.02;  // merge once lambda >= 0.5 - delta
};

/// Symmetric cross-mix ((1-l) z1 + l z2, (1-l) z2 + l z1). l = 0.5 returns the
/// merged average for both.
std::pair<Latent, Latent> adaptive_mix_step(const Latent& z1, const Latent& z2, double lambda);

/// (1 - 2 lambda)^2 * D.
double alignment_loss(double lambda, double discrepancy);

/// One closed-form gradient step on the alignment loss for the pre-mix pair.
MixingState lambda_update(const MixingState& state, const Latent& z1, const Latent& z2);

Latent hard_merge(const Latent& z1, const Latent& z2);

struct AlignedPair {
    Trajectory traj_1;
    Trajectory traj_2;
    std::vector<double> lambda_history;        // lambda applied at each step
    std::vector<double> loss_history;          // alignment loss after each step's mix
    std::vector<double> discrepancy_history;   // pre-mix mean squared difference
    Latent z_shared;
    std::size_t merge_step = 0;
    std::vector<std::string> warnings;

    bool loss_non_increasing() const;
};

struct AlignOptions {
    double eta = 0.01;
    MergeMode merge_mode = MergeMode::Threshold;
    double delta = 0.02;
    double warn_below = 0.45;
    SamplerOptions sampler;
};

/// Dual inversion under one plan. Each step advances both latents independently,
/// mixes them with the current lambda, then updates lambda; at the merge trigger
/// (or the last step) the pair is averaged and lambda pinned to 0.5.
AlignedPair align_inversion(const HybridPlan& plan, const NoiseSchedule& schedule, const NoisePredictor& pred1,
                            const NoisePredictor& pred2, const Latent& z1_0, const Latent& z2_0,
                            std::span<const Embedding> embeddings1, std::span<const Embedding> embeddings2,
                            double init_lambda = 0.04, const AlignOptions& options = {});

/// Rows `step,lambda,align_loss,l2_z1_z2`.
void write_alignment_csv(std::ostream& out, const AlignedPair& pair);

}  // namespace trajlab
