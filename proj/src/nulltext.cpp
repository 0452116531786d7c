// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "trajlab/nulltext.hpp"

#include <cinttypes>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace trajlab {

const char* to_string(NullStepRule r) { return r == NullStepRule::Fixed ? "fixed" : "exact_line_search"; }

NullStepRule null_step_rule_from_string(const std::string& s) {
    if (s == "fixed") return NullStepRule::Fixed;
    if (s == "exact_line_search") return NullStepRule::ExactLineSearch;
    throw Error(ErrorCode::Config, "unknown null-text step rule '" + s + "'");
}

ReconTargets recon_targets(const Trajectory& inversion, const Latent& source) {
    require(inversion.direction == Direction::Inversion, ErrorCode::InvalidRange,
            "recon_targets: expected an inversion trajectory");
    const std::size_t T = inversion.steps.size();
    require(T >= 1, ErrorCode::InvalidRange, "recon_targets: empty trajectory");
    ReconTargets out;
    out.latents.reserve(T);
    for (std::size_t p = 0; p + 1 < T; ++p) out.latents.push_back(inversion.steps[T - 2 - p].latent_after);
    out.latents.push_back(source);
    for (const auto& l : out.latents) require_same_dim(l, source, "recon_targets");
    return out;
}

PredictorPtr effective_predictor(const PredictorPtr& base, const EmbeddingSchedule& emb) {
    if (emb.options.guidance == 0.0) return base;
    return std::make_shared<GuidedPredictor>(base, emb.conditional, emb.options.guidance);
}

namespace {

struct StepEval {
    StepOutcome outcome;
    Latent residual;
    double loss = 0.0;
    double gain = 0.0;
};

StepEval evaluate(const HybridPlan& plan, std::size_t p, const NoiseSchedule& schedule, const NoisePredictor& pred,
                  const Latent& z, const Embedding& e, const Dpm2mState& state, const Latent& target,
                  const SamplerOptions& sopt) {
    StepEval ev;
    ev.outcome = hybrid_step(plan, p, schedule, pred, z, e, state, Direction::Reconstruction, sopt);
    ev.residual = target - ev.outcome.latent;
    ev.loss = ev.residual.squaredNorm();
    const auto [from, to] = step_levels(plan, p, Direction::Reconstruction);
    const UpdateCoefficients c = step_coefficients(schedule, plan.solver_tags[p], from, to,
                                                   plan.solver_tags[p] == Solver::Dpm ? state : Dpm2mState{}, sopt);
    ev.gain = eps_gain(c, schedule, from);
    return ev;
}

}  // namespace

EmbeddingSchedule optimize_null_schedule(const HybridPlan& plan, const NoiseSchedule& schedule,
                                         const PredictorPtr& pred, const Latent& z_start,
                                         const ReconTargets& targets, const Embedding& conditional,
                                         const std::optional<Vector>& init_null, const NullTextOptions& options) {
    require(pred != nullptr, ErrorCode::Config, "optimize_null_schedule: null predictor");
    require(targets.latents.size() == plan.size(), ErrorCode::InvalidRange,
            "optimize_null_schedule: " + std::to_string(targets.latents.size()) + " targets for a plan of length " +
                std::to_string(plan.size()));
    require(options.iterations >= 0, ErrorCode::InvalidRange, "optimize_null_schedule: iterations must be >= 0");
    require(options.learning_rate > 0.0, ErrorCode::InvalidRange, "optimize_null_schedule: learning rate must be > 0");

    EmbeddingSchedule out;
    out.conditional = conditional;
    out.conditional.role = EmbeddingRole::Conditional;
    out.options = options;
    out.plan_fingerprint = plan.fingerprint();
    const PredictorPtr eff = effective_predictor(pred, out);

    Embedding current{init_null ? *init_null : Vector::Zero(conditional.values.size()), EmbeddingRole::Null};
    Latent z = z_start;
    Dpm2mState state;
    for (std::size_t p = 0; p < plan.size(); ++p) {
        const Latent& target = targets.latents[p];
        require_same_dim(z, target, "optimize_null_schedule");
        StepEval best = evaluate(plan, p, schedule, *eff, z, current, state, target, options.sampler);
        std::vector<double> trace{best.loss};
        int used = 0;
        const double from = step_levels(plan, p, Direction::Reconstruction).first;
        for (int it = 0; it < options.iterations && best.loss > options.early_stop; ++it) {
            ++used;
            // d loss / d null = -2 g J^T r
            const Vector grad = -2.0 * best.gain * embedding_vjp(*eff, z, from, current, best.residual);
            if (grad.squaredNorm() == 0.0) break;
            double step = options.learning_rate;
            if (options.rule == NullStepRule::ExactLineSearch) {
                const Latent dz = -best.gain * embedding_jvp(*eff, z, from, current, grad);
                const double denom = dz.squaredNorm();
                if (denom == 0.0) break;
                step = best.residual.dot(dz) / denom;
                if (!(step > 0.0)) break;
            }
            bool accepted = false;
            for (int halvings = 0; halvings < 30; ++halvings) {
                Embedding trial{current.values - step * grad, EmbeddingRole::Null};
                StepEval ev = evaluate(plan, p, schedule, *eff, z, trial, state, target, options.sampler);
                if (ev.loss <= best.loss) {
                    current = std::move(trial);
                    best = std::move(ev);
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if (!accepted) break;
            trace.push_back(best.loss);
        }
        if (best.loss > options.early_stop) out.non_converged.push_back({p, best.loss});
        out.nulls.push_back(current);
        out.residuals.push_back(best.loss);
        out.iterations_used.push_back(used);
        out.loss_trace.push_back(std::move(trace));
        z = std::move(best.outcome.latent);
        state = std::move(best.outcome.state);
    }
    return out;
}

std::pair<EmbeddingSchedule, EmbeddingSchedule> optimize_null_embeddings(
    const HybridPlan& plan, const NoiseSchedule& schedule, const std::pair<PredictorPtr, PredictorPtr>& preds,
    const Latent& z_shared, const std::pair<ReconTargets, ReconTargets>& targets,
    const std::pair<Embedding, Embedding>& conds, const NullTextOptions& options) {
    return {optimize_null_schedule(plan, schedule, preds.first, z_shared, targets.first, conds.first, std::nullopt,
                                   options),
            optimize_null_schedule(plan, schedule, preds.second, z_shared, targets.second, conds.second,
                                   std::nullopt, options)};
}

Trajectory reconstruct_with_null(const HybridPlan& plan, const NoiseSchedule& schedule, const PredictorPtr& pred,
                                 const Latent& z_shared, const EmbeddingSchedule& emb) {
    require(pred != nullptr, ErrorCode::Config, "reconstruct_with_null: null predictor");
    if (emb.plan_fingerprint != plan.fingerprint() || emb.nulls.size() != plan.size()) {
        throw Error(ErrorCode::PlanMismatch, "reconstruct_with_null: embedding schedule was optimized on another plan");
    }
    const PredictorPtr eff = effective_predictor(pred, emb);
    return run_trajectory(plan, schedule, *eff, z_shared, emb.nulls, Direction::Reconstruction, emb.options.sampler);
}

std::vector<double> step_residuals(const Trajectory& rec, const ReconTargets& targets) {
    require(rec.steps.size() == targets.latents.size(), ErrorCode::PlanMismatch,
            "step_residuals: trajectory and targets differ in length");
    std::vector<double> out;
    out.reserve(rec.steps.size());
    for (std::size_t p = 0; p < rec.steps.size(); ++p) {
        out.push_back((targets.latents[p] - rec.steps[p].latent_after).squaredNorm());
    }
    return out;
}

namespace {

void write_vector(std::ostream& out, const Vector& v) {
    char buf[32];
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof buf, " %.17g", v[i]);
        out << buf;
    }
    out << '\n';
}

Vector read_vector(std::istringstream& line, std::size_t n) {
    Vector v(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        if (!(line >> v[static_cast<Eigen::Index>(i)])) throw Error(ErrorCode::Io, "embedding schedule: short vector");
    }
    return v;
}

std::istringstream next_line(std::istream& in, const std::string& key) {
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::Io, "embedding schedule: missing '" + key + "' line");
    std::istringstream ls(line);
    std::string head;
    ls >> head;
    if (head != key) throw Error(ErrorCode::Io, "embedding schedule: expected '" + key + "', got '" + head + "'");
    return ls;
}

}  // namespace

void write_embedding_schedule(std::ostream& out, const EmbeddingSchedule& emb) {
    char buf[64];
    out << "trajlab-null-schedule 1\n";
    std::snprintf(buf, sizeof buf, "plan %016" PRIx64 "\n", emb.plan_fingerprint);
    out << buf;
    out << "shape " << emb.nulls.size() << ' ' << emb.conditional.values.size() << '\n';
    std::snprintf(buf, sizeof buf, "guidance %.17g\n", emb.options.guidance);
    out << buf;
    out << "conditional";
    write_vector(out, emb.conditional.values);
    for (std::size_t p = 0; p < emb.nulls.size(); ++p) {
        out << "null " << p;
        write_vector(out, emb.nulls[p].values);
    }
}

EmbeddingSchedule read_embedding_schedule(std::istream& in) {
    EmbeddingSchedule emb;
    {
        auto ls = next_line(in, "trajlab-null-schedule");
        int version = 0;
        ls >> version;
        require(version == 1, ErrorCode::Io, "embedding schedule: unsupported version");
    }
    {
        auto ls = next_line(in, "plan");
        std::string hex;
        ls >> hex;
        emb.plan_fingerprint = std::stoull(hex, nullptr, 16);
    }
    std::size_t steps = 0;
    std::size_t dim = 0;
    {
        auto ls = next_line(in, "shape");
        if (!(ls >> steps >> dim)) throw Error(ErrorCode::Io, "embedding schedule: bad shape line");
    }
    {
        auto ls = next_line(in, "guidance");
        ls >> emb.options.guidance;
    }
    {
        auto ls = next_line(in, "conditional");
        emb.conditional = Embedding{read_vector(ls, dim), EmbeddingRole::Conditional};
    }
    for (std::size_t p = 0; p < steps; ++p) {
        auto ls = next_line(in, "null");
        std::size_t idx = 0;
        ls >> idx;
        require(idx == p, ErrorCode::Io, "embedding schedule: null lines out of order");
        emb.nulls.push_back(Embedding{read_vector(ls, dim), EmbeddingRole::Null});
    }
    return emb;
}

}  // namespace trajlab
