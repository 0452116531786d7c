// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "trajlab/gating.hpp"

#include <cstdint>
#include <vector>

namespace trajlab {

struct ToyAttentionConfig {
    int side = 16;           // latent grid side; latent dimension is side * side
    int tokens = 77;
    double spatial_bandwidth = 1.5;
    double value_bandwidth = 0.75;
    double cross_weight = 0.25;
    std::uint64_t seed = 17;
};

/// Synthetic attention substrate: row-stochastic self maps from a bilateral
/// kernel over the pooled latent, and cross maps from a softmax against seeded
/// token keys.
class ToyAttentionModel {
public:
    explicit ToyAttentionModel(ToyAttentionConfig cfg);

    const ToyAttentionConfig& config() const noexcept { return cfg_; }

    /// Average-pools a side x side latent to layer_side x layer_side.
    Vector pool(const Latent& z, int layer_side) const;
    /// Nearest upsampling back to the latent grid.
    Latent unpool(const Vector& v, int layer_side) const;

    AttentionMaps maps(const Latent& z, int layer_side) const;

    /// Change in the target's x0 at one layer caused by gating, on the latent
    /// grid. Values follow their maps: each source's pooled x0 is read through its
    /// own self map and weighted per row by the region weights, and replaced
    /// token columns bring the owning source's token values. Exactly zero when
    /// the policy leaves the layer untouched.
    Vector gated_delta(const GatingConfig& gating, const std::string& layer_tag, const std::vector<Latent>& states,
                       const std::vector<Latent>& x0s, const SpatialMask& m1, const SpatialMask& m2) const;

private:
    ToyAttentionConfig cfg_;
    Matrix keys_;  // tokens x 3
};

}  // namespace trajlab
