// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "trajlab/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace trajlab {

const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidRange: return "invalid-range";
        case ErrorCode::NonMonotoneSplice: return "non-monotone-splice";
        case ErrorCode::DimensionMismatch: return "dimension-mismatch";
        case ErrorCode::DegenerateSchedule: return "degenerate-schedule";
        case ErrorCode::Ordering: return "ordering";
        case ErrorCode::ZeroRow: return "zero-row";
        case ErrorCode::ResolutionMismatch: return "resolution-mismatch";
        case ErrorCode::TokenIndex: return "token-index";
        case ErrorCode::OverlappingTokens: return "overlapping-tokens";
        case ErrorCode::UnknownLayer: return "unknown-layer";
        case ErrorCode::PlanMismatch: return "plan-mismatch";
        case ErrorCode::ZeroVector: return "zero-vector";
        case ErrorCode::Config: return "config";
        case ErrorCode::Io: return "io";
    }
    return "unknown";
}

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
    }
    return h;
}

NoiseSchedule::NoiseSchedule(std::vector<double> betas, std::vector<double> alpha_bars)
    : betas_(std::move(betas)), alpha_bars_(std::move(alpha_bars)) {
    require(betas_.size() == alpha_bars_.size() && betas_.size() >= 2, ErrorCode::InvalidRange,
            "NoiseSchedule: need at least two table entries");
}

double NoiseSchedule::alpha_bar(double t) const {
    require(t >= 0.0 && t <= 1.0, ErrorCode::InvalidRange,
            "alpha_bar: t=" + std::to_string(t) + " outside [0, 1]");
    const double u = t * static_cast<double>(alpha_bars_.size());
    const auto lo = static_cast<std::size_t>(std::floor(u));
    if (lo >= alpha_bars_.size()) return alpha_bars_.back();
    const double frac = u - static_cast<double>(lo);
    const double left = lo == 0 ? 1.0 : alpha_bars_[lo - 1];
    const double right = alpha_bars_[lo];
    if (frac == 0.0) return left;
    return left + frac * (right - left);
}

double NoiseSchedule::signal(double t) const { return std::sqrt(alpha_bar(t)); }

double NoiseSchedule::noise(double t) const { return std::sqrt(1.0 - alpha_bar(t)); }

double NoiseSchedule::half_log_snr(double t) const {
    const double ab = alpha_bar(t);
    return 0.5 * (std::log(std::max(ab, kNumericFloor)) - std::log(std::max(1.0 - ab, kNumericFloor)));
}

NoiseSchedule build_noise_schedule(std::size_t num_train_steps, double beta_start, double beta_end) {
    require(num_train_steps >= 2, ErrorCode::InvalidRange, "build_noise_schedule: num_train_steps must be >= 2");
    require(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0, ErrorCode::InvalidRange,
            "build_noise_schedule: need 0 < beta_start < beta_end < 1");
    std::vector<double> betas(num_train_steps);
    const double span = static_cast<double>(num_train_steps - 1);
    for (std::size_t i = 0; i < num_train_steps; ++i) {
        betas[i] = beta_start + (beta_end - beta_start) * (static_cast<double>(i) / span);
    }
    std::vector<double> alpha_bars(num_train_steps);
    double prod = 1.0;
    for (std::size_t i = 0; i < num_train_steps; ++i) {
        prod *= 1.0 - betas[i];
        alpha_bars[i] = prod;
    }
    return NoiseSchedule(std::move(betas), std::move(alpha_bars));
}

NoiseSchedule constant_beta_schedule(std::size_t num_train_steps, double beta) {
    require(num_train_steps >= 2, ErrorCode::InvalidRange, "constant_beta_schedule: need >= 2 steps");
    require(beta > 0.0 && beta < 1.0, ErrorCode::InvalidRange, "constant_beta_schedule: beta outside (0, 1)");
    std::vector<double> betas(num_train_steps, beta);
    std::vector<double> alpha_bars(num_train_steps);
    double prod = 1.0;
    for (std::size_t i = 0; i < num_train_steps; ++i) {
        prod *= 1.0 - beta;
        alpha_bars[i] = prod;
    }
    return NoiseSchedule(std::move(betas), std::move(alpha_bars));
}

TimestepGrid ddim_grid(std::size_t steps) {
    require(steps >= 2, ErrorCode::InvalidRange, "ddim_grid: T must be >= 2");
    TimestepGrid grid{std::vector<double>(steps), GridKind::DdimLinear};
    const double span = static_cast<double>(steps - 1);
    for (std::size_t i = 0; i < steps; ++i) {
        grid.values[i] = kTauMax - (static_cast<double>(i) / span) * (kTauMax - kTauMin);
    }
    return grid;
}

TimestepGrid dpm_grid(std::size_t steps) {
    require(steps >= 2, ErrorCode::InvalidRange, "dpm_grid: T must be >= 2");
    TimestepGrid grid{std::vector<double>(steps), GridKind::DpmLogUniform};
    const double span = static_cast<double>(steps - 1);
    const double log_max = std::log(kSigmaMax);
    const double log_min = std::log(kSigmaMin);
    for (std::size_t i = 0; i < steps; ++i) {
        grid.values[i] = std::exp(log_max + (static_cast<double>(i) / span) * (log_min - log_max));
    }
    return grid;
}

const char* to_string(Solver s) { return s == Solver::Ddim ? "DDIM" : "DPM"; }

const char* to_string(IndexConvention c) {
    return c == IndexConvention::FromNoise ? "FROM_NOISE" : "FROM_DATA";
}

Solver solver_from_string(const std::string& s) {
    if (s == "DDIM" || s == "ddim") return Solver::Ddim;
    if (s == "DPM" || s == "dpm") return Solver::Dpm;
    throw Error(ErrorCode::Config, "unknown solver tag '" + s + "'");
}

IndexConvention convention_from_string(const std::string& s) {
    if (s == "FROM_NOISE" || s == "from_noise") return IndexConvention::FromNoise;
    if (s == "FROM_DATA" || s == "from_data") return IndexConvention::FromData;
    throw Error(ErrorCode::Config, "unknown index convention '" + s + "'");
}

std::size_t HybridPlan::convention_index(std::size_t p) const {
    return convention == IndexConvention::FromNoise ? p : size() - 1 - p;
}

bool HybridPlan::in_dpm_window(std::size_t p) const {
    const std::size_t idx = convention_index(p);
    return idx >= s1 && idx <= s2;
}

std::uint64_t HybridPlan::fingerprint() const {
    std::uint64_t h = fnv1a(timesteps.data(), timesteps.size() * sizeof(double));
    h = fnv1a(targets.data(), targets.size() * sizeof(double), h);
    for (Solver s : solver_tags) {
        const unsigned char b = s == Solver::Dpm ? 1 : 0;
        h = fnv1a(&b, 1, h);
    }
    const unsigned char lay = layout == PlanLayout::Global ? 0 : 1;
    return fnv1a(&lay, 1, h);
}

namespace {

void check_window(std::size_t steps, std::size_t s1, std::size_t s2) {
    require(steps >= 2, ErrorCode::InvalidRange, "plan: T must be >= 2");
    require(s1 <= s2, ErrorCode::InvalidRange,
            "plan: s1=" + std::to_string(s1) + " exceeds s2=" + std::to_string(s2));
    require(s2 < steps, ErrorCode::InvalidRange,
            "plan: s2=" + std::to_string(s2) + " must be < T=" + std::to_string(steps));
}

void fill_global_targets(HybridPlan& plan) {
    plan.targets.resize(plan.size());
    for (std::size_t p = 0; p + 1 < plan.size(); ++p) plan.targets[p] = plan.timesteps[p + 1];
    plan.targets.back() = 0.0;
}

}  // namespace

HybridPlan hybrid_grid(std::size_t steps, std::size_t s1, std::size_t s2, IndexConvention convention) {
    check_window(steps, s1, s2);
    const auto tau = ddim_grid(steps).values;
    const auto sigma = dpm_grid(steps).values;

    HybridPlan plan;
    plan.s1 = s1;
    plan.s2 = s2;
    plan.convention = convention;
    plan.layout = PlanLayout::Global;
    plan.timesteps.resize(steps);
    plan.solver_tags.resize(steps);
    for (std::size_t p = 0; p < steps; ++p) {
        const bool dpm = plan.in_dpm_window(p);
        plan.solver_tags[p] = dpm ? Solver::Dpm : Solver::Ddim;
        plan.timesteps[p] = dpm ? sigma[p] : tau[p];
    }
    for (std::size_t p = 1; p < steps; ++p) {
        if (!(plan.timesteps[p] < plan.timesteps[p - 1])) {
            char buf[160];
            std::snprintf(buf, sizeof buf,
                          "hybrid_grid: splice not strictly decreasing at index %zu (%.6g after %.6g)", p,
                          plan.timesteps[p], plan.timesteps[p - 1]);
            throw NonMonotoneSpliceError(p, buf);
        }
    }
    fill_global_targets(plan);
    return plan;
}

HybridPlan uniform_plan(std::size_t steps, Solver solver) {
    HybridPlan plan;
    plan.timesteps = solver == Solver::Ddim ? ddim_grid(steps).values : dpm_grid(steps).values;
    plan.solver_tags.assign(steps, solver);
    plan.convention = IndexConvention::FromNoise;
    if (solver == Solver::Dpm) {
        plan.s1 = 0;
        plan.s2 = steps - 1;
    } else {
        // Empty DPM window: s1 > s2 is only representable for uniform DDIM plans.
        plan.s1 = steps;
        plan.s2 = steps;
    }
    fill_global_targets(plan);
    return plan;
}

HybridPlan fragmented_plan(std::size_t steps, std::size_t s1, std::size_t s2, IndexConvention convention) {
    check_window(steps, s1, s2);
    HybridPlan plan;
    plan.s1 = s1;
    plan.s2 = s2;
    plan.convention = convention;
    plan.layout = PlanLayout::Fragmented;
    plan.timesteps.resize(steps);
    plan.targets.resize(steps);
    plan.solver_tags.resize(steps);
    for (std::size_t p = 0; p < steps; ++p) {
        plan.solver_tags[p] = plan.in_dpm_window(p) ? Solver::Dpm : Solver::Ddim;
    }
    std::size_t begin = 0;
    while (begin < steps) {
        std::size_t end = begin;
        while (end < steps && plan.solver_tags[end] == plan.solver_tags[begin]) ++end;
        const std::size_t len = end - begin;
        const bool dpm = plan.solver_tags[begin] == Solver::Dpm;
        std::vector<double> seg;
        if (len >= 2) {
            seg = dpm ? dpm_grid(len).values : ddim_grid(len).values;
        } else {
            seg = {dpm ? kSigmaMax : kTauMax};
        }
        for (std::size_t i = 0; i < len; ++i) {
            plan.timesteps[begin + i] = seg[i];
            plan.targets[begin + i] = i + 1 < len ? seg[i + 1] : 0.0;
        }
        begin = end;
    }
    return plan;
}

void write_plan_csv(std::ostream& out, const HybridPlan& plan) {
    out << "step_index,timestep,solver_tag\n";
    char buf[64];
    for (std::size_t p = 0; p < plan.size(); ++p) {
        std::snprintf(buf, sizeof buf, "%.17g", plan.timesteps[p]);
        out << p << ',' << buf << ',' << to_string(plan.solver_tags[p]) << '\n';
    }
}

}  // namespace trajlab
