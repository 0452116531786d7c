// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "trajlab/gating.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <random>
#include <sstream>

namespace trajlab {

void SpatialMask::validate() const {
    require(height > 0 && width > 0, ErrorCode::InvalidRange, "mask: empty grid");
    require(values.size() == static_cast<Eigen::Index>(height) * width, ErrorCode::DimensionMismatch,
            "mask: value count does not match grid");
    require((values.array() >= 0.0).all() && (values.array() <= 1.0).all(), ErrorCode::InvalidRange,
            "mask: entries must lie in [0, 1]");
}

SpatialMask constant_mask(int height, int width, double value) {
    SpatialMask m{height, width, Vector::Constant(static_cast<Eigen::Index>(height) * width, value)};
    m.validate();
    return m;
}

SpatialMask rect_mask(int height, int width, int y0, int x0, int y1, int x1) {
    SpatialMask m = constant_mask(height, width, 0.0);
    for (int y = std::max(0, y0); y < std::min(height, y1); ++y) {
        for (int x = std::max(0, x0); x < std::min(width, x1); ++x) m.values[y * width + x] = 1.0;
    }
    return m;
}

SpatialMask disk_mask(int height, int width, double cy, double cx, double radius) {
    SpatialMask m = constant_mask(height, width, 0.0);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double dy = y + 0.5 - cy;
            const double dx = x + 0.5 - cx;
            if (dy * dy + dx * dx <= radius * radius) m.values[y * width + x] = 1.0;
        }
    }
    return m;
}

SpatialMask load_mask_text(std::istream& in) {
    std::vector<double> vals;
    int rows = 0;
    int cols = -1;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::vector<double> row;
        double v = 0.0;
        while (ls >> v) row.push_back(v);
        if (row.empty()) continue;
        if (cols < 0) cols = static_cast<int>(row.size());
        require(static_cast<int>(row.size()) == cols, ErrorCode::Io, "mask: ragged rows in text grid");
        vals.insert(vals.end(), row.begin(), row.end());
        ++rows;
    }
    require(rows > 0, ErrorCode::Io, "mask: empty text grid");
    SpatialMask m{rows, cols, Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()))};
    m.validate();
    return m;
}

namespace {

// PGM header tokens, skipping '#' comments.
std::string pgm_token(std::istream& in) {
    std::string tok;
    while (in >> tok) {
        if (tok[0] != '#') return tok;
        std::string rest;
        std::getline(in, rest);
    }
    throw Error(ErrorCode::Io, "mask: truncated PGM header");
}

}  // namespace

SpatialMask load_mask_pgm(std::istream& in) {
    const std::string magic = pgm_token(in);
    require(magic == "P2" || magic == "P5", ErrorCode::Io, "mask: not a PGM file");
    const int width = std::stoi(pgm_token(in));
    const int height = std::stoi(pgm_token(in));
    const int maxval = std::stoi(pgm_token(in));
    require(width > 0 && height > 0 && maxval > 0 && maxval < 65536, ErrorCode::Io, "mask: bad PGM header");
    SpatialMask m{height, width, Vector(static_cast<Eigen::Index>(width) * height)};
    if (magic == "P2") {
        for (Eigen::Index i = 0; i < m.values.size(); ++i) m.values[i] = std::stod(pgm_token(in)) / maxval;
    } else {
        in.get();  // single whitespace after maxval
        const int bytes = maxval < 256 ? 1 : 2;
        for (Eigen::Index i = 0; i < m.values.size(); ++i) {
            int v = 0;
            for (int b = 0; b < bytes; ++b) {
                const int c = in.get();
                require(c != EOF, ErrorCode::Io, "mask: truncated PGM raster");
                v = (v << 8) | c;
            }
            m.values[i] = static_cast<double>(v) / maxval;
        }
    }
    m.validate();
    return m;
}

SpatialMask load_mask_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::Io, "mask: cannot open " + path);
    const bool pgm = path.size() >= 4 && path.compare(path.size() - 4, 4, ".pgm") == 0;
    return pgm ? load_mask_pgm(in) : load_mask_text(in);
}

SpatialMask resample_nearest(const SpatialMask& mask, int height, int width, bool binarize) {
    mask.validate();
    require(height > 0 && width > 0, ErrorCode::InvalidRange, "resample_nearest: empty target grid");
    SpatialMask out{height, width, Vector(static_cast<Eigen::Index>(height) * width)};
    for (int y = 0; y < height; ++y) {
        const int sy = std::min(mask.height - 1, static_cast<int>((y + 0.5) * mask.height / height));
        for (int x = 0; x < width; ++x) {
            const int sx = std::min(mask.width - 1, static_cast<int>((x + 0.5) * mask.width / width));
            double v = mask.at(sy, sx);
            if (binarize) v = v >= 0.5 ? 1.0 : 0.0;
            out.values[y * width + x] = v;
        }
    }
    return out;
}

const char* to_string(OverlapVariant v) { return v == OverlapVariant::Verbatim ? "verbatim" : "union"; }

OverlapVariant overlap_variant_from_string(const std::string& s) {
    if (s == "verbatim") return OverlapVariant::Verbatim;
    if (s == "union") return OverlapVariant::Union;
    throw Error(ErrorCode::Config, "unknown overlap variant '" + s + "'");
}

RegionWeights compute_region_weights(const SpatialMask& m1, const SpatialMask& m2, double w_hat,
                                     OverlapVariant variant) {
    m1.validate();
    m2.validate();
    require(m1.height == m2.height && m1.width == m2.width, ErrorCode::ResolutionMismatch,
            "compute_region_weights: masks differ in resolution");
    require(w_hat >= 0.0 && w_hat <= 1.0, ErrorCode::InvalidRange, "compute_region_weights: w_hat outside [0, 1]");
    const auto a = m1.values.array();
    const auto b = m2.values.array();
    const Eigen::ArrayXd both = a * b;
    RegionWeights w;
    w.height = m1.height;
    w.width = m1.width;
    w.w1 = (a * (1.0 - b) + w_hat * both).matrix();
    w.w2 = (b * (1.0 - a) + (1.0 - w_hat) * both).matrix();
    if (variant == OverlapVariant::Verbatim) {
        w.w3 = (1.0 - both).matrix();
    } else {
        w.w3 = (1.0 - (a + b - both)).matrix();
    }
    return w;
}

Matrix fuse_self_attention(const Matrix& s1, const Matrix& s2, const Matrix& s3, const RegionWeights& w) {
    const Eigen::Index n = s3.rows();
    require(s3.cols() == n && s1.rows() == n && s1.cols() == n && s2.rows() == n && s2.cols() == n,
            ErrorCode::DimensionMismatch, "fuse_self_attention: maps must share one square shape");
    require(w.w1.size() == n && w.w2.size() == n && w.w3.size() == n, ErrorCode::ResolutionMismatch,
            "fuse_self_attention: weights at " + std::to_string(w.w1.size()) + " positions for " +
                std::to_string(n) + " queries");
    Matrix out(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (w.w1[i] == 0.0 && w.w2[i] == 0.0 && w.w3[i] > 0.0) {
            out.row(i) = s3.row(i);
            continue;
        }
        out.row(i) = w.w1[i] * s1.row(i) + w.w2[i] * s2.row(i) + w.w3[i] * s3.row(i);
        const double sum = out.row(i).sum();
        if (!(sum > 1e-12)) {
            throw Error(ErrorCode::ZeroRow, "fuse_self_attention: fused row " + std::to_string(i) + " sums to zero");
        }
        out.row(i) /= sum;
    }
    return out;
}

Matrix replace_cross_attention(const Matrix& a1, const Matrix& a2, const Matrix& a3, const std::vector<int>& t1,
                               const std::vector<int>& t2) {
    require(a1.rows() == a3.rows() && a1.cols() == a3.cols() && a2.rows() == a3.rows() && a2.cols() == a3.cols(),
            ErrorCode::DimensionMismatch, "replace_cross_attention: maps must share one shape");
    const auto L = static_cast<int>(a3.cols());
    std::vector<char> owner(static_cast<std::size_t>(L), 0);
    for (const auto& [set, tag] : {std::pair{&t1, 1}, std::pair{&t2, 2}}) {
        for (int c : *set) {
            require(c >= 0 && c < L, ErrorCode::TokenIndex,
                    "replace_cross_attention: token " + std::to_string(c) + " outside [0, " + std::to_string(L) + ")");
            require(owner[c] == 0 || owner[c] == tag, ErrorCode::OverlappingTokens,
                    "replace_cross_attention: token " + std::to_string(c) + " in both sets");
            owner[c] = static_cast<char>(tag);
        }
    }
    Matrix out = a3;
    for (int c = 0; c < L; ++c) {
        if (owner[c] == 1) out.col(c) = a1.col(c);
        if (owner[c] == 2) out.col(c) = a2.col(c);
    }
    return out;
}

const char* to_string(Block b) {
    switch (b) {
        case Block::Down: return "DOWN";
        case Block::Mid: return "MID";
        case Block::Up: return "UP";
    }
    return "?";
}

const LayerSpec& LayerPolicy::find(const std::string& tag) const {
    for (const auto& l : layers) {
        if (l.tag == tag) return l;
    }
    throw Error(ErrorCode::UnknownLayer, "unknown layer tag '" + tag + "'");
}

LayerPolicy default_layer_policy(bool up_256_self) {
    return LayerPolicy{{
        {"down_256", Block::Down, 256, true, true},
        {"down_64", Block::Down, 64, true, true},
        {"mid_16", Block::Mid, 16, true, true},
        {"up_64", Block::Up, 64, false, true},
        {"up_256", Block::Up, 256, up_256_self, true},
    }};
}

void GatingConfig::validate(int token_count) const {
    require(w_hat >= 0.0 && w_hat <= 1.0, ErrorCode::Config, "gating.w_hat must lie in [0, 1]");
    for (const auto* set : {&tokens1, &tokens2}) {
        for (int c : *set) {
            require(c >= 0 && c < token_count, ErrorCode::TokenIndex,
                    "gating token " + std::to_string(c) + " outside [0, " + std::to_string(token_count) + ")");
        }
    }
    for (int c : tokens1) {
        require(std::find(tokens2.begin(), tokens2.end(), c) == tokens2.end(), ErrorCode::OverlappingTokens,
                "gating token " + std::to_string(c) + " appears in both token sets");
    }
}

namespace {

bool is_binary(const SpatialMask& m) { return ((m.values.array() == 0.0) || (m.values.array() == 1.0)).all(); }

}  // namespace

AttentionMaps apply_layer_policy(const GatingConfig& cfg, const std::string& layer_tag, const AttentionMaps& src1,
                                 const AttentionMaps& src2, const AttentionMaps& target, const SpatialMask& m1,
                                 const SpatialMask& m2) {
    const LayerSpec& spec = cfg.policy.find(layer_tag);
    AttentionMaps out = target;
    if (spec.self_replace) {
        const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(target.self_attn.rows()))));
        require(side * side == target.self_attn.rows(), ErrorCode::ResolutionMismatch,
                "apply_layer_policy: self map size is not a square grid");
        const SpatialMask r1 = resample_nearest(m1, side, side, is_binary(m1));
        const SpatialMask r2 = resample_nearest(m2, side, side, is_binary(m2));
        const RegionWeights w = compute_region_weights(r1, r2, cfg.w_hat, cfg.variant);
        out.self_attn = fuse_self_attention(src1.self_attn, src2.self_attn, target.self_attn, w);
    }
    if (spec.cross_replace) {
        out.cross_attn = replace_cross_attention(src1.cross_attn, src2.cross_attn, target.cross_attn, cfg.tokens1,
                                                 cfg.tokens2);
    }
    return out;
}

Latent latent_blend(const Latent& z_gen, const Latent& z_src, const SpatialMask& mask, double t,
                    const NoiseSchedule& schedule, const Latent& noise) {
    require_same_dim(z_gen, z_src, "latent_blend");
    require_same_dim(z_gen, noise, "latent_blend");
    require(mask.values.size() == z_gen.size(), ErrorCode::DimensionMismatch,
            "latent_blend: mask has " + std::to_string(mask.values.size()) + " cells for a latent of " +
                std::to_string(z_gen.size()));
    const double ab = schedule.alpha_bar(t);
    const auto m = mask.values.array();
    const Eigen::ArrayXd renoised = std::sqrt(ab) * z_src.array() + std::sqrt(1.0 - ab) * noise.array();
    return (m * z_gen.array() + (1.0 - m) * renoised).matrix();
}

namespace {

Matrix random_stochastic(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::exponential_distribution<double> ex(1.0);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = ex(rng);
        m.row(i) /= m.row(i).sum();
    }
    return m;
}

}  // namespace

std::vector<WhatSweepPoint> what_sweep(const OverlapScenario& scenario, const std::vector<double>& w_values,
                                       int side, unsigned seed) {
    require(scenario.demand1 > 0.0 && scenario.demand2 > 0.0, ErrorCode::InvalidRange,
            "what_sweep: demands must be > 0");
    require(side >= 4, ErrorCode::InvalidRange, "what_sweep: grid side must be >= 4");
    std::mt19937_64 rng(seed);
    const Eigen::Index n = static_cast<Eigen::Index>(side) * side;
    const Matrix s1 = random_stochastic(n, n, rng);
    const Matrix s2 = random_stochastic(n, n, rng);
    const Matrix s3 = random_stochastic(n, n, rng);
    // two overlapping elements, e.g. a face and an accessory on top of it
    const SpatialMask m1 = rect_mask(side, side, 0, 0, 3 * side / 4, 3 * side / 4);
    const SpatialMask m2 = rect_mask(side, side, side / 4, side / 4, side, side);

    std::vector<WhatSweepPoint> out;
    for (double wh : w_values) {
        const RegionWeights w = compute_region_weights(m1, m2, wh);
        const Matrix fused = fuse_self_attention(s1, s2, s3, w);
        double num1 = 0.0;
        double num2 = 0.0;
        int rows = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (m1.values[i] * m2.values[i] == 0.0) continue;
            Eigen::MatrixXd basis(n, 3);
            basis.col(0) = s1.row(i).transpose();
            basis.col(1) = s2.row(i).transpose();
            basis.col(2) = s3.row(i).transpose();
            const Eigen::Vector3d share = basis.colPivHouseholderQr().solve(Eigen::VectorXd(fused.row(i).transpose()));
            num1 += share[0];
            num2 += share[1];
            ++rows;
        }
        WhatSweepPoint pt;
        pt.w_hat = wh;
        pt.share1 = num1 / rows;
        pt.share2 = num2 / rows;
        pt.score = std::min(pt.share1 / scenario.demand1, pt.share2 / scenario.demand2);
        out.push_back(pt);
    }
    return out;
}

}  // namespace trajlab
