// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "trajlab/predictor.hpp"
#include "trajlab/sampler.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <utility>
#include <vector>

namespace trajlab {

enum class NullStepRule {
    Fixed,             // plain gradient descent with a fixed learning rate
    ExactLineSearch,   // steepest descent with the exact step along the gradient
};

const char* to_string(NullStepRule r);
NullStepRule null_step_rule_from_string(const std::string& s);

struct NullTextOptions {
    int iterations = 10;
    double learning_rate = 0.1;
    double early_stop = 1e-6;
    NullStepRule rule = NullStepRule::Fixed;
    /// Weight w in eps(null) + w (eps(cond) - eps(null)); 0 keeps the pure null path.
    double guidance = 0.0;
    SamplerOptions sampler;
};

/// Aligned inversion latents in reconstruction order: latents[p] is where
/// reconstruction step p should land.
struct ReconTargets {
    std::vector<Latent> latents;
};

/// Targets from an inversion trajectory over a plan of length T: step p lands on
/// the inversion state at the matching level, and the last step on `source`.
ReconTargets recon_targets(const Trajectory& inversion, const Latent& source);

struct NonConvergence {
    std::size_t step = 0;
    double residual = 0.0;
};

struct EmbeddingSchedule {
    Embedding conditional;
    std::vector<Embedding> nulls;
    NullTextOptions options;
    std::uint64_t plan_fingerprint = 0;
    std::vector<double> residuals;               // achieved squared error per step
    std::vector<int> iterations_used;
    std::vector<std::vector<double>> loss_trace; // accepted losses per inner iteration
    std::vector<NonConvergence> non_converged;
};

/// Per-identity sweep: for each reconstruction step, descends the null embedding
/// (starting from the previous step's result) and advances with the optimum.
EmbeddingSchedule optimize_null_schedule(const HybridPlan& plan, const NoiseSchedule& schedule,
                                         const PredictorPtr& pred, const Latent& z_start,
                                         const ReconTargets& targets, const Embedding& conditional,
                                         const std::optional<Vector>& init_null = std::nullopt,
                                         const NullTextOptions& options = {});

/// Both identities against one shared start latent.
std::pair<EmbeddingSchedule, EmbeddingSchedule> optimize_null_embeddings(
    const HybridPlan& plan, const NoiseSchedule& schedule, const std::pair<PredictorPtr, PredictorPtr>& preds,
    const Latent& z_shared, const std::pair<ReconTargets, ReconTargets>& targets,
    const std::pair<Embedding, Embedding>& conds, const NullTextOptions& options = {});

/// The predictor the schedule was optimized against (guided wrapper when w != 0).
PredictorPtr effective_predictor(const PredictorPtr& base, const EmbeddingSchedule& emb);

/// Deterministic replay; rejects schedules optimized on a different plan.
Trajectory reconstruct_with_null(const HybridPlan& plan, const NoiseSchedule& schedule, const PredictorPtr& pred,
                                 const Latent& z_shared, const EmbeddingSchedule& emb);

/// Squared distance between each step's output and its target.
std::vector<double> step_residuals(const Trajectory& rec, const ReconTargets& targets);

void write_embedding_schedule(std::ostream& out, const EmbeddingSchedule& emb);
EmbeddingSchedule read_embedding_schedule(std::istream& in);

}  // namespace trajlab
