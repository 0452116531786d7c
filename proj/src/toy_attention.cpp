// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "trajlab/toy_attention.hpp"

#include <cmath>
#include <random>

namespace trajlab {

ToyAttentionModel::ToyAttentionModel(ToyAttentionConfig cfg) : cfg_(cfg) {
    require(cfg_.side >= 1 && cfg_.tokens >= 1, ErrorCode::Config, "toy attention: side and tokens must be >= 1");
    require(cfg_.spatial_bandwidth > 0.0 && cfg_.value_bandwidth > 0.0, ErrorCode::Config,
            "toy attention: bandwidths must be > 0");
    std::mt19937_64 rng(cfg_.seed);
    std::normal_distribution<double> n01;
    keys_ = Matrix(cfg_.tokens, 3);
    for (Eigen::Index l = 0; l < keys_.rows(); ++l) {
        for (Eigen::Index k = 0; k < 3; ++k) keys_(l, k) = 2.0 * n01(rng);
    }
}

namespace {

int factor_for(int side, int layer_side) {
    require(layer_side >= 1 && side % layer_side == 0, ErrorCode::ResolutionMismatch,
            "toy attention: layer side " + std::to_string(layer_side) + " does not divide latent side " +
                std::to_string(side));
    return side / layer_side;
}

void softmax_rows(Matrix& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double mx = m.row(i).maxCoeff();
        m.row(i) = (m.row(i).array() - mx).exp().matrix();
        m.row(i) /= m.row(i).sum();
    }
}

}  // namespace

Vector ToyAttentionModel::pool(const Latent& z, int layer_side) const {
    require(z.size() == static_cast<Eigen::Index>(cfg_.side) * cfg_.side, ErrorCode::DimensionMismatch,
            "toy attention: latent is not a side x side grid");
    const int f = factor_for(cfg_.side, layer_side);
    if (f == 1) return z;
    Vector out = Vector::Zero(static_cast<Eigen::Index>(layer_side) * layer_side);
    for (int y = 0; y < cfg_.side; ++y) {
        for (int x = 0; x < cfg_.side; ++x) out[(y / f) * layer_side + x / f] += z[y * cfg_.side + x];
    }
    return out / static_cast<double>(f * f);
}

Latent ToyAttentionModel::unpool(const Vector& v, int layer_side) const {
    const int f = factor_for(cfg_.side, layer_side);
    require(v.size() == static_cast<Eigen::Index>(layer_side) * layer_side, ErrorCode::DimensionMismatch,
            "toy attention: pooled vector size");
    if (f == 1) return v;
    Latent out(static_cast<Eigen::Index>(cfg_.side) * cfg_.side);
    for (int y = 0; y < cfg_.side; ++y) {
        for (int x = 0; x < cfg_.side; ++x) out[y * cfg_.side + x] = v[(y / f) * layer_side + x / f];
    }
    return out;
}

AttentionMaps ToyAttentionModel::maps(const Latent& z, int layer_side) const {
    const Vector v = pool(z, layer_side);
    const Eigen::Index n = v.size();
    const double sb = 2.0 * cfg_.spatial_bandwidth * cfg_.spatial_bandwidth;
    const double vb = 2.0 * cfg_.value_bandwidth * cfg_.value_bandwidth;
    AttentionMaps out;
    out.self_attn = Matrix(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double yi = static_cast<double>(i / layer_side);
        const double xi = static_cast<double>(i % layer_side);
        for (Eigen::Index j = 0; j < n; ++j) {
            const double dy = yi - static_cast<double>(j / layer_side);
            const double dx = xi - static_cast<double>(j % layer_side);
            const double dv = v[i] - v[j];
            out.self_attn(i, j) = -(dy * dy + dx * dx) / sb - dv * dv / vb;
        }
    }
    softmax_rows(out.self_attn);
    out.cross_attn = Matrix(n, keys_.rows());
    for (Eigen::Index i = 0; i < n; ++i) {
        const double feat[3] = {v[i], static_cast<double>(i / layer_side) / layer_side - 0.5,
                                static_cast<double>(i % layer_side) / layer_side - 0.5};
        for (Eigen::Index l = 0; l < keys_.rows(); ++l) {
            out.cross_attn(i, l) = keys_(l, 0) * feat[0] + keys_(l, 1) * feat[1] + keys_(l, 2) * feat[2];
        }
    }
    softmax_rows(out.cross_attn);
    return out;
}

Vector ToyAttentionModel::gated_delta(const GatingConfig& gating, const std::string& layer_tag,
                                      const std::vector<Latent>& states, const std::vector<Latent>& x0s,
                                      const SpatialMask& m1, const SpatialMask& m2) const {
    require(states.size() == 3 && x0s.size() == 3, ErrorCode::InvalidRange,
            "toy attention: expected source 1, source 2 and target states");
    const LayerSpec& spec = gating.policy.find(layer_tag);
    const int ls = static_cast<int>(std::lround(std::sqrt(static_cast<double>(spec.resolution))));
    require(ls * ls == spec.resolution, ErrorCode::ResolutionMismatch,
            "toy attention: layer " + layer_tag + " resolution is not a square");
    Vector delta = Vector::Zero(spec.resolution);
    if (!spec.self_replace && !spec.cross_replace) return unpool(delta, ls);

    AttentionMaps mp[3];
    Vector vals[3];
    for (int k = 0; k < 3; ++k) {
        mp[k] = maps(states[k], ls);
        vals[k] = pool(x0s[k], ls);
    }
    if (spec.self_replace) {
        const SpatialMask r1 = resample_nearest(m1, ls, ls);
        const SpatialMask r2 = resample_nearest(m2, ls, ls);
        const RegionWeights w = compute_region_weights(r1, r2, gating.w_hat, gating.variant);
        const Vector read1 = mp[0].self_attn * vals[0];
        const Vector read2 = mp[1].self_attn * vals[1];
        const Vector read3 = mp[2].self_attn * vals[2];
        for (Eigen::Index i = 0; i < delta.size(); ++i) {
            if (w.w1[i] == 0.0 && w.w2[i] == 0.0) continue;
            const double total = w.w1[i] + w.w2[i] + w.w3[i];
            require(total > 1e-12, ErrorCode::ZeroRow,
                    "toy attention: zero gating weight at row " + std::to_string(i) + " of " + layer_tag);
            delta[i] += (w.w1[i] * read1[i] + w.w2[i] * read2[i] + w.w3[i] * read3[i]) / total - read3[i];
        }
    }
    if (spec.cross_replace && !(gating.tokens1.empty() && gating.tokens2.empty())) {
        Vector tok[3];
        for (int k = 0; k < 3; ++k) {
            const Matrix& a = mp[k].cross_attn;
            tok[k] = (a.transpose() * vals[k]).cwiseQuotient(a.colwise().sum().transpose());
        }
        Vector gated_tok = tok[2];
        for (int c : gating.tokens1) gated_tok[c] = tok[0][c];
        for (int c : gating.tokens2) gated_tok[c] = tok[1][c];
        const Matrix gated = replace_cross_attention(mp[0].cross_attn, mp[1].cross_attn, mp[2].cross_attn,
                                                     gating.tokens1, gating.tokens2);
        delta += cfg_.cross_weight * (gated * gated_tok - mp[2].cross_attn * tok[2]);
    }
    return unpool(delta, ls);
}

}  // namespace trajlab
