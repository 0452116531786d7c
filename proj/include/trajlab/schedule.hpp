// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "trajlab/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace trajlab {

/// Linear-beta noise table with a continuous alpha_bar(t) evaluator on t in [0, 1].
///
/// The table entry alpha_bars[i] is prod_{s <= i}(1 - betas[s]). The evaluator maps
/// t to the fractional position u = t * num_train_steps, where u = 0 is the clean
/// data end (alpha_bar = 1) and u = i + 1 is table entry i, and interpolates
/// linearly between neighbours.
class NoiseSchedule {
public:
    NoiseSchedule() = default;
    NoiseSchedule(std::vector<double> betas, std::vector<double> alpha_bars);

    std::size_t num_train_steps() const noexcept { return betas_.size(); }
    const std::vector<double>& betas() const noexcept { return betas_; }
    const std::vector<double>& alpha_bars() const noexcept { return alpha_bars_; }

    double alpha_bar(double t) const;
    /// sqrt(alpha_bar(t)), the signal coefficient.
    double signal(double t) const;
    /// sqrt(1 - alpha_bar(t)), the noise coefficient.
    double noise(double t) const;
    /// Half-log-SNR 0.5 * ln(alpha_bar / (1 - alpha_bar)) with both terms floored.
    double half_log_snr(double t) const;

private:
    std::vector<double> betas_;
    std::vector<double> alpha_bars_;
};

NoiseSchedule build_noise_schedule(std::size_t num_train_steps = 1000, double beta_start = 0.00085,
                                   double beta_end = 0.012);

/// Table built from a constant beta; handy for hand-checkable examples.
NoiseSchedule constant_beta_schedule(std::size_t num_train_steps, double beta);

enum class GridKind { DdimLinear, DpmLogUniform };

struct TimestepGrid {
    std::vector<double> values;
    GridKind kind = GridKind::DdimLinear;
};

inline constexpr double kTauMax = 0.9999;
inline constexpr double kTauMin = 0.0001;
inline constexpr double kSigmaMax = 0.99;
inline constexpr double kSigmaMin = 0.01;

TimestepGrid ddim_grid(std::size_t steps);
TimestepGrid dpm_grid(std::size_t steps);

enum class Solver { Ddim, Dpm };
enum class IndexConvention { FromNoise, FromData };
enum class PlanLayout { Global, Fragmented };

const char* to_string(Solver s);
const char* to_string(IndexConvention c);
Solver solver_from_string(const std::string& s);
IndexConvention convention_from_string(const std::string& s);

/// Timestep sequence with a per-step solver tag, in reconstruction order.
///
/// Step p runs from timesteps[p] down to targets[p]. For the global layout the
/// targets are the next timestep (and 0 for the last step), so the whole pass is
/// one strictly decreasing sequence. The fragmented layout is kept for ablations:
/// every solver segment carries its own full-range grid and ends at t = 0.
struct HybridPlan {
    std::vector<double> timesteps;
    std::vector<double> targets;
    std::vector<Solver> solver_tags;
    std::size_t s1 = 0;
    std::size_t s2 = 0;
    IndexConvention convention = IndexConvention::FromData;
    PlanLayout layout = PlanLayout::Global;

    std::size_t size() const noexcept { return timesteps.size(); }
    /// Step index in the plan's own convention for reconstruction position p.
    std::size_t convention_index(std::size_t p) const;
    bool in_dpm_window(std::size_t p) const;
    std::uint64_t fingerprint() const;
};

/// Global hybrid plan: DPM timesteps inside [s1, s2] (under `convention`), DDIM
/// timesteps elsewhere, both taken from full-length grids.
HybridPlan hybrid_grid(std::size_t steps, std::size_t s1, std::size_t s2,
                       IndexConvention convention = IndexConvention::FromData);

/// Single-solver plan over that solver's own grid.
HybridPlan uniform_plan(std::size_t steps, Solver solver);

/// Per-segment grids: each contiguous run of one solver gets its own grid of the
/// run's length. Not monotone in general.
HybridPlan fragmented_plan(std::size_t steps, std::size_t s1, std::size_t s2,
                           IndexConvention convention = IndexConvention::FromData);

/// Rows `step_index,timestep,solver_tag` with a header line.
void write_plan_csv(std::ostream& out, const HybridPlan& plan);

}  // namespace trajlab
