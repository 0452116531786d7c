// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "trajlab/common.hpp"
#include "trajlab/schedule.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace trajlab {

/// H x W grid in [0, 1], stored row-major.
struct SpatialMask {
    int height = 0;
    int width = 0;
    Vector values;

    int size() const noexcept { return height * width; }
    double at(int y, int x) const { return values[static_cast<Eigen::Index>(y) * width + x]; }
    void validate() const;
};

SpatialMask constant_mask(int height, int width, double value);
SpatialMask rect_mask(int height, int width, int y0, int x0, int y1, int x1);
SpatialMask disk_mask(int height, int width, double cy, double cx, double radius);

/// Whitespace-separated rows of numbers, one grid row per line.
SpatialMask load_mask_text(std::istream& in);
/// P2 (ASCII) or P5 (binary) graymap scaled by its maxval.
SpatialMask load_mask_pgm(std::istream& in);
/// Dispatches on extension: .pgm, anything else is the text grid.
SpatialMask load_mask_file(const std::string& path);

/// Nearest-neighbour resample; when `binarize` is set values are thresholded at 0.5.
SpatialMask resample_nearest(const SpatialMask& mask, int height, int width, bool binarize = true);

enum class OverlapVariant {
    Verbatim,  // W3 = 1 - (M1 * M2)
    Union,     // W3 = 1 - (M1 + M2 - M1 * M2)
};

const char* to_string(OverlapVariant v);
OverlapVariant overlap_variant_from_string(const std::string& s);

struct RegionWeights {
    int height = 0;
    int width = 0;
    Vector w1;
    Vector w2;
    Vector w3;
};

RegionWeights compute_region_weights(const SpatialMask& m1, const SpatialMask& m2, double w_hat,
                                     OverlapVariant variant = OverlapVariant::Verbatim);

/// Row-gated fusion of three row-stochastic N x N maps followed by row
/// normalization. Rows gated only by W3 are copied from s3.
Matrix fuse_self_attention(const Matrix& s1, const Matrix& s2, const Matrix& s3, const RegionWeights& w);

/// Column c comes from a1 for c in t1, from a2 for c in t2, else from a3.
Matrix replace_cross_attention(const Matrix& a1, const Matrix& a2, const Matrix& a3, const std::vector<int>& t1,
                               const std::vector<int>& t2);

enum class Block { Down, Mid, Up };

const char* to_string(Block b);

struct LayerSpec {
    std::string tag;
    Block block = Block::Down;
    int resolution = 0;  // spatial positions N = side * side
    bool self_replace = false;
    bool cross_replace = true;
};

struct LayerPolicy {
    std::vector<LayerSpec> layers;

    const LayerSpec& find(const std::string& tag) const;
};

/// Down and mid blocks replace self attention, up blocks do not unless
/// `up_256_self` enables the 256-position up layer. Cross attention everywhere.
LayerPolicy default_layer_policy(bool up_256_self = false);

struct GatingConfig {
    double w_hat = 0.5;
    std::vector<int> tokens1;
    std::vector<int> tokens2;
    OverlapVariant variant = OverlapVariant::Verbatim;
    LayerPolicy policy = default_layer_policy();

    void validate(int token_count) const;
};

struct AttentionMaps {
    Matrix self_attn;   // N x N
    Matrix cross_attn;  // N x L
};

/// Gated maps for the target path at one layer. Sources 1 and 2 and the target's
/// own maps come in; masks are resampled to the layer resolution.
AttentionMaps apply_layer_policy(const GatingConfig& cfg, const std::string& layer_tag, const AttentionMaps& src1,
                                 const AttentionMaps& src2, const AttentionMaps& target, const SpatialMask& m1,
                                 const SpatialMask& m2);

/// mask * z_gen + (1 - mask) * (sqrt(ab_t) z_src + sqrt(1 - ab_t) noise).
Latent latent_blend(const Latent& z_gen, const Latent& z_src, const SpatialMask& mask, double t,
                    const NoiseSchedule& schedule, const Latent& noise);

/// Retention demand of each source in the overlap region.
struct OverlapScenario {
    std::string name;
    double demand1 = 0.5;
    double demand2 = 0.5;
};

struct WhatSweepPoint {
    double w_hat = 0.0;
    double share1 = 0.0;
    double share2 = 0.0;
    double score = 0.0;
};

/// Fuses synthetic overlapping maps for each w_hat, recovers each source's share
/// of the overlap rows by least squares and scores min_i share_i / demand_i.
std::vector<WhatSweepPoint> what_sweep(const OverlapScenario& scenario, const std::vector<double>& w_values,
                                       int side = 8, unsigned seed = 7);

}  // namespace trajlab
