// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "trajlab/sampler.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

namespace trajlab {

const char* to_string(Direction d) { return d == Direction::Inversion ? "INVERSION" : "RECONSTRUCTION"; }

namespace {

bool at_data_end(double alpha_bar) { return 1.0 - alpha_bar <= kNumericFloor; }

void check_alpha(double alpha_bar, double t) {
    require(alpha_bar > kNumericFloor, ErrorCode::DegenerateSchedule,
            "alpha_bar(" + std::to_string(t) + ") below numeric floor");
}

// Deterministic update rearranged as (c_k/c_t) z + (a_k - a_t c_k/c_t) x0 so that from == to is
// exactly the identity. When the start sits at the data end c_t vanishes and the
// eps form a_k x0 + c_k eps is used instead.
UpdateCoefficients first_order(double ab_t, double ab_k) {
    UpdateCoefficients c;
    const double a_t = std::sqrt(ab_t);
    const double a_k = std::sqrt(ab_k);
    const double c_k = std::sqrt(1.0 - ab_k);
    if (at_data_end(ab_t)) {
        c.x0 = a_k;
        c.eps = c_k;
        return c;
    }
    const double ratio = c_k / std::sqrt(1.0 - ab_t);
    c.z = ratio;
    c.x0 = a_k - a_t * ratio;
    return c;
}

}  // namespace

UpdateCoefficients step_coefficients(const NoiseSchedule& schedule, Solver solver, double from, double to,
                                     const Dpm2mState& state, const SamplerOptions& options) {
    require(options.dpm_order == 1 || options.dpm_order == 2, ErrorCode::InvalidRange,
            "dpm_order must be 1 or 2");
    const double ab_t = schedule.alpha_bar(from);
    const double ab_k = schedule.alpha_bar(to);
    check_alpha(ab_t, from);
    check_alpha(ab_k, to);

    if (solver == Solver::Ddim || at_data_end(ab_t) || at_data_end(ab_k)) {
        UpdateCoefficients c = first_order(ab_t, ab_k);
        c.touches_data_end = at_data_end(ab_t) || at_data_end(ab_k);
        c.lambda_from = schedule.half_log_snr(from);
        return c;
    }

    UpdateCoefficients c;
    const double lambda_t = schedule.half_log_snr(from);
    const double lambda_k = schedule.half_log_snr(to);
    const double h = lambda_k - lambda_t;
    const double a_k = std::sqrt(ab_k);
    const double phi = -std::expm1(-h);  // 1 - e^{-h}
    c.lambda_from = lambda_t;
    c.z = std::sqrt(1.0 - ab_k) / std::sqrt(1.0 - ab_t);
    c.x0 = a_k * phi;
    if (options.dpm_order == 2 && !state.empty() && h != 0.0) {
        const double h_prev = lambda_t - state.prev_lambda;
        const double r = h_prev / h;
        if (std::isfinite(r) && r > 0.0) {
            const double w = 1.0 / (2.0 * r);
            c.x0 = a_k * phi * (1.0 + w);
            c.x0_prev = -a_k * phi * w;
            c.uses_history = true;
        }
    }
    return c;
}

double eps_gain(const UpdateCoefficients& coeffs, const NoiseSchedule& schedule, double from) {
    const double ab = schedule.alpha_bar(from);
    return coeffs.eps - coeffs.x0 * std::sqrt(1.0 - ab) / std::sqrt(ab);
}

Latent apply_update(const UpdateCoefficients& coeffs, const Latent& z, const Latent& x0, const Latent& eps,
                    const Dpm2mState& state) {
    Latent out = coeffs.z * z + coeffs.x0 * x0;
    if (coeffs.uses_history) out += coeffs.x0_prev * *state.prev_x0;
    if (coeffs.eps != 0.0) out += coeffs.eps * eps;
    return out;
}

Latent ddim_step(const NoiseSchedule& schedule, const NoisePredictor& pred, const Latent& z, double t, double k,
                 const Embedding& e) {
    require(k <= t, ErrorCode::Ordering,
            "ddim_step: target " + std::to_string(k) + " above start " + std::to_string(t));
    const Latent eps = pred.eps(z, t, e);
    require_same_dim(z, eps, "ddim_step");
    const Latent x0 = predict_x0(schedule, z, t, eps);
    return apply_update(step_coefficients(schedule, Solver::Ddim, t, k, {}), z, x0, eps, {});
}

Latent ddim_invert_step(const NoiseSchedule& schedule, const NoisePredictor& pred, const Latent& z, double t,
                        double t_next, const Embedding& e) {
    require(t < t_next, ErrorCode::Ordering,
            "ddim_invert_step: t_next " + std::to_string(t_next) + " not above t " + std::to_string(t));
    const Latent eps = pred.eps(z, t, e);
    require_same_dim(z, eps, "ddim_invert_step");
    const Latent x0 = predict_x0(schedule, z, t, eps);
    return apply_update(step_coefficients(schedule, Solver::Ddim, t, t_next, {}), z, x0, eps, {});
}

DpmStepResult dpm2m_step(const NoiseSchedule& schedule, const NoisePredictor& pred, const Latent& z, double t,
                         double k, const Embedding& e, const Dpm2mState& state, const SamplerOptions& options) {
    const Latent eps = pred.eps(z, t, e);
    require_same_dim(z, eps, "dpm2m_step");
    Latent x0 = predict_x0(schedule, z, t, eps);
    const UpdateCoefficients c = step_coefficients(schedule, Solver::Dpm, t, k, state, options);
    DpmStepResult out{apply_update(c, z, x0, eps, state), {}};
    if (!c.touches_data_end) {
        out.state.prev_x0 = std::move(x0);
        out.state.prev_lambda = c.lambda_from;
    }
    return out;
}

std::size_t plan_position(const HybridPlan& plan, std::size_t step_index, Direction direction) {
    require(step_index < plan.size(), ErrorCode::InvalidRange,
            "step index " + std::to_string(step_index) + " outside plan of length " + std::to_string(plan.size()));
    return direction == Direction::Reconstruction ? step_index : plan.size() - 1 - step_index;
}

std::pair<double, double> step_levels(const HybridPlan& plan, std::size_t step_index, Direction direction) {
    const std::size_t p = plan_position(plan, step_index, direction);
    if (direction == Direction::Reconstruction) return {plan.timesteps[p], plan.targets[p]};
    return {plan.targets[p], plan.timesteps[p]};
}

StepOutcome advance_with_estimate(const HybridPlan& plan, std::size_t step_index, const NoiseSchedule& schedule,
                                  const Latent& z, Latent x0, Latent eps, const Dpm2mState& state,
                                  Direction direction, const SamplerOptions& options) {
    const std::size_t p = plan_position(plan, step_index, direction);
    const auto [from, to] = step_levels(plan, step_index, direction);
    const Solver solver = plan.solver_tags[p];
    require_same_dim(z, x0, "advance_with_estimate");
    require_same_dim(z, eps, "advance_with_estimate");

    StepOutcome out;
    out.x0 = std::move(x0);
    out.eps = std::move(eps);
    if (solver == Solver::Ddim) {
        const UpdateCoefficients c = step_coefficients(schedule, Solver::Ddim, from, to, {}, options);
        out.latent = apply_update(c, z, out.x0, out.eps, {});
        // state left empty: history never crosses a DDIM step
        return out;
    }
    const UpdateCoefficients c = step_coefficients(schedule, Solver::Dpm, from, to, state, options);
    out.latent = apply_update(c, z, out.x0, out.eps, state);
    if (!c.touches_data_end) {
        out.state.prev_x0 = out.x0;
        out.state.prev_lambda = c.lambda_from;
    }
    return out;
}

StepOutcome hybrid_step(const HybridPlan& plan, std::size_t step_index, const NoiseSchedule& schedule,
                        const NoisePredictor& pred, const Latent& z, const Embedding& e, const Dpm2mState& state,
                        Direction direction, const SamplerOptions& options) {
    const double from = step_levels(plan, step_index, direction).first;
    Latent eps = pred.eps(z, from, e);
    require_same_dim(z, eps, "hybrid_step");
    Latent x0 = predict_x0(schedule, z, from, eps);
    return advance_with_estimate(plan, step_index, schedule, z, std::move(x0), std::move(eps), state, direction,
                                 options);
}

Trajectory run_trajectory(const HybridPlan& plan, const NoiseSchedule& schedule, const NoisePredictor& pred,
                          const Latent& z_start, std::span<const Embedding> embeddings, Direction direction,
                          const SamplerOptions& options) {
    require(embeddings.size() >= plan.size(), ErrorCode::InvalidRange,
            "run_trajectory: " + std::to_string(embeddings.size()) + " embeddings for a plan of length " +
                std::to_string(plan.size()));
    Trajectory traj;
    traj.direction = direction;
    traj.plan = plan;
    traj.steps.reserve(plan.size());
    Latent z = z_start;
    Dpm2mState state;
    for (std::size_t j = 0; j < plan.size(); ++j) {
        const std::size_t p = plan_position(plan, j, direction);
        const auto [from, to] = step_levels(plan, j, direction);
        StepOutcome out = hybrid_step(plan, j, schedule, pred, z, embeddings[p], state, direction, options);
        StepRecord rec;
        rec.step_index = j;
        rec.timestep = from;
        rec.target = to;
        rec.solver_tag = plan.solver_tags[p];
        rec.latent_before = std::move(z);
        rec.latent_after = out.latent;
        rec.x0_estimate = std::move(out.x0);
        z = std::move(out.latent);
        state = std::move(out.state);
        traj.steps.push_back(std::move(rec));
    }
    return traj;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj, bool header) {
    if (header) out << "direction,step_index,timestep,solver_tag,l2_latent,l2_x0\n";
    char buf[192];
    for (const auto& s : traj.steps) {
        std::snprintf(buf, sizeof buf, "%s,%zu,%.17g,%s,%.17g,%.17g\n", to_string(traj.direction), s.step_index,
                      s.timestep, to_string(s.solver_tag), s.latent_after.norm(), s.x0_estimate.norm());
        out << buf;
    }
}

}  // namespace trajlab
