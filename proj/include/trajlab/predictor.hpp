// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "trajlab/common.hpp"
#include "trajlab/schedule.hpp"

#include <memory>
#include <optional>

namespace trajlab {

enum class EmbeddingRole { Conditional, Null };

struct Embedding {
    Vector values;
    EmbeddingRole role = EmbeddingRole::Null;
};

/// Noise predictor eps(z, t, e). Implementations are immutable and must be
/// deterministic; the derivative hooks are optional.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;

    virtual Latent eps(const Latent& z, double t, const Embedding& e) const = 0;

    /// Directional derivative of eps with respect to the embedding along v.
    virtual std::optional<Latent> eps_embedding_jvp(const Latent& /*z*/, double /*t*/, const Embedding& /*e*/,
                                                    const Vector& /*v*/) const {
        return std::nullopt;
    }

    /// Gradient of <adjoint, eps(z, t, e)> with respect to e.
    virtual std::optional<Vector> eps_embedding_vjp(const Latent& /*z*/, double /*t*/, const Embedding& /*e*/,
                                                    const Latent& /*adjoint*/) const {
        return std::nullopt;
    }
};

using PredictorPtr = std::shared_ptr<const NoisePredictor>;

/// Diagonal Gaussian data model whose mean shifts linearly with the embedding:
/// x0 ~ N(mu + coupling * e, diag(sigma_diag^2)).
struct GaussianOracleConfig {
    Vector mu;
    Vector sigma_diag;
    Matrix coupling;  // d x m; may be 0 x 0 to mean "no coupling"

    Eigen::Index latent_dim() const { return mu.size(); }
    Eigen::Index embedding_dim() const { return coupling.cols(); }
    void validate() const;
    /// Effective data mean for embedding e.
    Vector effective_mean(const Vector& e) const;
};

/// Bayes-optimal eps for data drawn from the oracle's Gaussian.
Latent gaussian_oracle_eps(const GaussianOracleConfig& cfg, const NoiseSchedule& schedule, const Latent& z,
                           double t, const Embedding& e);

/// (z - sqrt(1 - alpha_bar) * eps) / sqrt(alpha_bar).
Latent predict_x0(const NoiseSchedule& schedule, const Latent& z, double t, const Latent& eps);

class GaussianOracle final : public NoisePredictor {
public:
    GaussianOracle(GaussianOracleConfig cfg, NoiseSchedule schedule);

    Latent eps(const Latent& z, double t, const Embedding& e) const override;
    std::optional<Latent> eps_embedding_jvp(const Latent& z, double t, const Embedding& e,
                                            const Vector& v) const override;
    std::optional<Vector> eps_embedding_vjp(const Latent& z, double t, const Embedding& e,
                                            const Latent& adjoint) const override;

    const GaussianOracleConfig& config() const noexcept { return cfg_; }
    const NoiseSchedule& schedule() const noexcept { return schedule_; }

    /// Exact probability-flow ODE transport of z from level t to level k.
    Latent exact_flow(const Latent& z, double t, double k, const Embedding& e) const;

private:
    // Per-coordinate gain c / (a^2 sigma^2 + c^2) applied to (z - a * mean).
    Vector gain(double t) const;

    GaussianOracleConfig cfg_;
    NoiseSchedule schedule_;
};

/// eps(z, t, e) = value regardless of inputs.
class ConstantPredictor final : public NoisePredictor {
public:
    explicit ConstantPredictor(Latent value) : value_(std::move(value)) {}
    Latent eps(const Latent& z, double t, const Embedding& e) const override;
    std::optional<Latent> eps_embedding_jvp(const Latent& z, double t, const Embedding& e,
                                            const Vector& v) const override;
    std::optional<Vector> eps_embedding_vjp(const Latent& z, double t, const Embedding& e,
                                            const Latent& adjoint) const override;

private:
    Latent value_;
};

/// Classifier-free combination eps(z,t,null) + w * (eps(z,t,C) - eps(z,t,null)).
/// The embedding passed to eps() is the null embedding; C is fixed at construction.
class GuidedPredictor final : public NoisePredictor {
public:
    GuidedPredictor(PredictorPtr base, Embedding conditional, double guidance);

    Latent eps(const Latent& z, double t, const Embedding& null_embedding) const override;
    std::optional<Latent> eps_embedding_jvp(const Latent& z, double t, const Embedding& e,
                                            const Vector& v) const override;
    std::optional<Vector> eps_embedding_vjp(const Latent& z, double t, const Embedding& e,
                                            const Latent& adjoint) const override;

    double guidance() const noexcept { return guidance_; }

private:
    PredictorPtr base_;
    Embedding conditional_;
    double guidance_;
};

/// Central-difference estimate of d<loss_adjoint, eps(z,t,e)>/de, one coordinate
/// at a time. The step for coordinate j is rel_step * max(1, |e_j|).
Vector finite_diff_embedding_grad(const NoisePredictor& pred, const Latent& z, double t, const Embedding& e,
                                  const Latent& loss_adjoint, double rel_step = 1e-4);

/// d eps / de along v via central differences.
Latent finite_diff_embedding_jvp(const NoisePredictor& pred, const Latent& z, double t, const Embedding& e,
                                 const Vector& v, double rel_step = 1e-4);

/// Analytic VJP when the predictor has one, else assembled from analytic JVPs,
/// else central differences.
Vector embedding_vjp(const NoisePredictor& pred, const Latent& z, double t, const Embedding& e,
                     const Latent& adjoint);

/// Analytic JVP when available, else central differences.
Latent embedding_jvp(const NoisePredictor& pred, const Latent& z, double t, const Embedding& e, const Vector& v);

}  // namespace trajlab
