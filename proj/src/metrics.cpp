// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "trajlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace trajlab {

double psnr(const Vector& a, const Vector& b, double max_value) {
    require_same_dim(a, b, "psnr");
    require(max_value > 0.0, ErrorCode::InvalidRange, "psnr: max_value must be > 0");
    const double mse = mean_squared_diff(a, b);
    if (mse == 0.0) return kInfinitePsnr;
    return 10.0 * std::log10(max_value * max_value / mse);
}

double psnr_auto(const Vector& reference, const Vector& other) {
    const double range = reference.size() ? reference.maxCoeff() - reference.minCoeff() : 0.0;
    return psnr(reference, other, range > 0.0 ? range : 1.0);
}

double cosine_sim(const Vector& a, const Vector& b) {
    require_same_dim(a, b, "cosine_sim");
    const double na = a.norm();
    const double nb = b.norm();
    require(na > 0.0 && nb > 0.0, ErrorCode::ZeroVector, "cosine_sim: zero vector");
    return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double max_transition_jump(const Trajectory& rec) {
    double jump = 0.0;
    for (const auto& s : rec.steps) {
        jump = std::max(jump, mean_squared_diff(s.latent_after, s.latent_before));
    }
    return jump;
}

StabilityReport stability_report(const Trajectory& inv, const Trajectory& rec, const Latent& source,
                                 std::optional<double> max_value) {
    require(inv.direction == Direction::Inversion && rec.direction == Direction::Reconstruction,
            ErrorCode::PlanMismatch, "stability_report: expected an inversion and a reconstruction");
    const std::size_t T = rec.steps.size();
    require(T > 0 && inv.steps.size() == T && inv.plan.fingerprint() == rec.plan.fingerprint(),
            ErrorCode::PlanMismatch, "stability_report: trajectories use different plans");
    StabilityReport r;
    double acc = 0.0;
    for (std::size_t p = 0; p < T; ++p) {
        // rec step p starts where inversion step T-1-p ended
        acc += mean_squared_diff(rec.steps[p].latent_before, inv.steps[T - 1 - p].latent_after);
    }
    r.cumulative_mse = acc / static_cast<double>(T);
    r.max_jump = max_transition_jump(rec);
    const Latent& out = rec.final_latent();
    require_same_dim(out, source, "stability_report");
    r.final_l2 = (out - source).norm() / std::sqrt(static_cast<double>(source.size()));
    r.psnr_db = max_value ? psnr(source, out, *max_value) : psnr_auto(source, out);
    return r;
}

std::string format_psnr(double db) {
    if (std::isinf(db)) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", db);
    return buf;
}

void write_stability_csv_header(std::ostream& out) { out << "label,cumulative_mse,max_jump,final_l2,psnr_db\n"; }

void write_stability_csv_row(std::ostream& out, const std::string& label, const StabilityReport& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%.17g,", r.cumulative_mse, r.max_jump, r.final_l2);
    out << label << buf << format_psnr(r.psnr_db) << '\n';
}

void write_stability_summary(std::ostream& out, const std::string& label, const StabilityReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "[%s]\n  cumulative MSE : %.6e\n  max jump       : %.6e\n  final L2       : %.6e\n  PSNR (dB)      : ",
                  label.c_str(), r.cumulative_mse, r.max_jump, r.final_l2);
    out << buf << format_psnr(r.psnr_db) << '\n';
}

}  // namespace trajlab
