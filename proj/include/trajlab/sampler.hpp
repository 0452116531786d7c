// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "trajlab/common.hpp"
#include "trajlab/predictor.hpp"
#include "trajlab/schedule.hpp"

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace trajlab {

enum class Direction { Inversion, Reconstruction };

const char* to_string(Direction d);

/// Multistep history for the second-order data-prediction update.
struct Dpm2mState {
    std::optional<Latent> prev_x0;
    double prev_lambda = 0.0;

    bool empty() const noexcept { return !prev_x0.has_value(); }
    void clear() { prev_x0.reset(); }
};

struct SamplerOptions {
    int dpm_order = 2;  // 1 or 2
};

/// One update written as z_next = z*cz + x0*cx + x0_prev*cp + eps*ce.
///
/// Every solver step here is affine in (z, x0, x0_prev, eps) with scalar
/// coefficients; the null-text optimizer relies on that to get d z_next / d eps.
struct UpdateCoefficients {
    double z = 0.0;
    double x0 = 0.0;
    double x0_prev = 0.0;
    double eps = 0.0;
    bool uses_history = false;
    bool touches_data_end = false;
    double lambda_from = 0.0;
};

UpdateCoefficients step_coefficients(const NoiseSchedule& schedule, Solver solver, double from, double to,
                                     const Dpm2mState& state, const SamplerOptions& options = {});

/// Scalar d z_next / d eps for the given update at level `from`.
double eps_gain(const UpdateCoefficients& coeffs, const NoiseSchedule& schedule, double from);

/// Applies the coefficients; prev_x0 is only read when the update uses history.
Latent apply_update(const UpdateCoefficients& coeffs, const Latent& z, const Latent& x0, const Latent& eps,
                    const Dpm2mState& state);

/// First-order deterministic step from t down to k (k <= t; k == t is the identity).
Latent ddim_step(const NoiseSchedule& schedule, const NoisePredictor& pred, const Latent& z, double t, double k,
                 const Embedding& e);

/// Same algebra towards higher noise, eps evaluated at (z, t).
Latent ddim_invert_step(const NoiseSchedule& schedule, const NoisePredictor& pred, const Latent& z, double t,
                        double t_next, const Embedding& e);

struct DpmStepResult {
    Latent latent;
    Dpm2mState state;
};

/// Data-prediction multistep update from t to k. Works in either direction; the
/// step is first order while the state is empty or an endpoint sits at the data end.
DpmStepResult dpm2m_step(const NoiseSchedule& schedule, const NoisePredictor& pred, const Latent& z, double t,
                         double k, const Embedding& e, const Dpm2mState& state, const SamplerOptions& options = {});

struct StepOutcome {
    Latent latent;
    Latent x0;
    Latent eps;
    Dpm2mState state;
};

/// Start and end level of pass step `step_index` in the given direction.
std::pair<double, double> step_levels(const HybridPlan& plan, std::size_t step_index, Direction direction);
/// Reconstruction position for pass step `step_index`.
std::size_t plan_position(const HybridPlan& plan, std::size_t step_index, Direction direction);

/// Advances z with a given (x0, eps) estimate under the plan's solver for the step.
StepOutcome advance_with_estimate(const HybridPlan& plan, std::size_t step_index, const NoiseSchedule& schedule,
                                  const Latent& z, Latent x0, Latent eps, const Dpm2mState& state,
                                  Direction direction = Direction::Reconstruction, const SamplerOptions& options = {});

/// Dispatches on the plan's solver tag. DDIM steps clear the multistep history.
StepOutcome hybrid_step(const HybridPlan& plan, std::size_t step_index, const NoiseSchedule& schedule,
                        const NoisePredictor& pred, const Latent& z, const Embedding& e, const Dpm2mState& state,
                        Direction direction = Direction::Reconstruction, const SamplerOptions& options = {});

struct StepRecord {
    std::size_t step_index = 0;
    double timestep = 0.0;  // level the step starts from
    double target = 0.0;    // level the step lands on
    Solver solver_tag = Solver::Ddim;
    Latent latent_before;
    Latent latent_after;
    Latent x0_estimate;
};

struct Trajectory {
    Direction direction = Direction::Reconstruction;
    std::vector<StepRecord> steps;
    HybridPlan plan;

    const Latent& final_latent() const { return steps.back().latent_after; }
};

/// Full pass. Inversion walks the plan backwards so every step reuses the solver
/// of the reconstruction step at the same noise levels; embeddings are indexed
/// by reconstruction position in both directions.
Trajectory run_trajectory(const HybridPlan& plan, const NoiseSchedule& schedule, const NoisePredictor& pred,
                          const Latent& z_start, std::span<const Embedding> embeddings, Direction direction,
                          const SamplerOptions& options = {});

/// Rows `direction,step_index,timestep,solver_tag,l2_latent,l2_x0`.
void write_trajectory_csv(std::ostream& out, const Trajectory& traj, bool header = true);

}  // namespace trajlab
