// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace trajlab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Diffusion state z^(t). Dimension is fixed within one experiment.
using Latent = Vector;

/// Floor applied to alpha_bar and 1 - alpha_bar before square roots and logs.
inline constexpr double kNumericFloor = 1e-9;

enum class ErrorCode {
    InvalidRange,
    NonMonotoneSplice,
    DimensionMismatch,
    DegenerateSchedule,
    Ordering,
    ZeroRow,
    ResolutionMismatch,
    TokenIndex,
    OverlappingTokens,
    UnknownLayer,
    PlanMismatch,
    ZeroVector,
    Config,
    Io,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Thrown by hybrid_grid when splicing the two grids breaks monotonicity.
class NonMonotoneSpliceError : public Error {
public:
    NonMonotoneSpliceError(std::size_t index, const std::string& what)
        : Error(ErrorCode::NonMonotoneSplice, what), index_(index) {}
    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

inline void require(bool ok, ErrorCode code, const std::string& what) {
    if (!ok) throw Error(code, what);
}

inline void require_same_dim(const Vector& a, const Vector& b, const char* where) {
    if (a.size() != b.size()) {
        throw Error(ErrorCode::DimensionMismatch, std::string(where) + ": dimension mismatch (" +
                                                      std::to_string(a.size()) + " vs " +
                                                      std::to_string(b.size()) + ")");
    }
}

/// Mean of squared elementwise differences.
inline double mean_squared_diff(const Vector& a, const Vector& b) {
    require_same_dim(a, b, "mean_squared_diff");
    if (a.size() == 0) return 0.0;
    return (a - b).squaredNorm() / static_cast<double>(a.size());
}

/// 64-bit FNV-1a, used for plan fingerprints and config hashes.
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 14695981039346656037ull);

}  // namespace trajlab
