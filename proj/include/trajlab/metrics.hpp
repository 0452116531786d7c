// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "trajlab/common.hpp"
#include "trajlab/sampler.hpp"

#include <iosfwd>
#include <limits>
#include <optional>
#include <string>

namespace trajlab {

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

/// 10 log10(max^2 / MSE); +inf for an exact match.
double psnr(const Vector& a, const Vector& b, double max_value);

/// PSNR against `reference` with max_value set to the reference's range
/// (or 1 when the reference is constant).
double psnr_auto(const Vector& reference, const Vector& other);

double cosine_sim(const Vector& a, const Vector& b);

struct StabilityReport {
    double cumulative_mse = 0.0;
    double max_jump = 0.0;
    double final_l2 = 0.0;
    double psnr_db = 0.0;
};

/// Compares a reconstruction with the inversion it mirrors. The reconstruction
/// state before step p is matched with the inversion state at the same level.
StabilityReport stability_report(const Trajectory& inv, const Trajectory& rec, const Latent& source,
                                 std::optional<double> max_value = std::nullopt);

/// Largest per-dimension squared displacement over one reconstruction step.
double max_transition_jump(const Trajectory& rec);

std::string format_psnr(double db);

void write_stability_csv_header(std::ostream& out);
void write_stability_csv_row(std::ostream& out, const std::string& label, const StabilityReport& r);
void write_stability_summary(std::ostream& out, const std::string& label, const StabilityReport& r);

}  // namespace trajlab
