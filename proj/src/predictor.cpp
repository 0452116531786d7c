// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "trajlab/predictor.hpp"

#include <algorithm>
#include <cmath>

namespace trajlab {

void GaussianOracleConfig::validate() const {
    require(mu.size() > 0, ErrorCode::DimensionMismatch, "GaussianOracleConfig: empty mean");
    require(sigma_diag.size() == mu.size(), ErrorCode::DimensionMismatch,
            "GaussianOracleConfig: sigma_diag size does not match mu");
    require((sigma_diag.array() > 0.0).all(), ErrorCode::InvalidRange,
            "GaussianOracleConfig: sigma_diag entries must be > 0");
    require(coupling.size() == 0 || coupling.rows() == mu.size(), ErrorCode::DimensionMismatch,
            "GaussianOracleConfig: coupling rows do not match latent dimension");
}

Vector GaussianOracleConfig::effective_mean(const Vector& e) const {
    if (coupling.size() == 0 || e.size() == 0) return mu;
    require(e.size() == coupling.cols(), ErrorCode::DimensionMismatch,
            "GaussianOracleConfig: embedding dimension " + std::to_string(e.size()) + " vs coupling cols " +
                std::to_string(coupling.cols()));
    return mu + coupling * e;
}

Latent gaussian_oracle_eps(const GaussianOracleConfig& cfg, const NoiseSchedule& schedule, const Latent& z,
                           double t, const Embedding& e) {
    require_same_dim(z, cfg.mu, "gaussian_oracle_eps");
    const double ab = schedule.alpha_bar(t);
    const double a = std::sqrt(ab);
    const double c = std::sqrt(1.0 - ab);
    const Vector mean = cfg.effective_mean(e.values);
    // eps* = (z - a E[x0|z]) / c, with the c^2 factor cancelled so t -> 0 stays finite.
    const Vector denom = (ab * cfg.sigma_diag.array().square() + (1.0 - ab)).matrix();
    return (c * (z - a * mean).array() / denom.array()).matrix();
}

Latent predict_x0(const NoiseSchedule& schedule, const Latent& z, double t, const Latent& eps) {
    require_same_dim(z, eps, "predict_x0");
    const double ab = schedule.alpha_bar(t);
    require(ab > kNumericFloor, ErrorCode::DegenerateSchedule,
            "predict_x0: alpha_bar(" + std::to_string(t) + ") below numeric floor");
    return (z - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
}

GaussianOracle::GaussianOracle(GaussianOracleConfig cfg, NoiseSchedule schedule)
    : cfg_(std::move(cfg)), schedule_(std::move(schedule)) {
    cfg_.validate();
}

Latent GaussianOracle::eps(const Latent& z, double t, const Embedding& e) const {
    return gaussian_oracle_eps(cfg_, schedule_, z, t, e);
}

Vector GaussianOracle::gain(double t) const {
    const double ab = schedule_.alpha_bar(t);
    const double c = std::sqrt(1.0 - ab);
    return (c / (ab * cfg_.sigma_diag.array().square() + (1.0 - ab))).matrix();
}

std::optional<Latent> GaussianOracle::eps_embedding_jvp(const Latent& z, double t, const Embedding& /*e*/,
                                                        const Vector& v) const {
    require_same_dim(z, cfg_.mu, "GaussianOracle::eps_embedding_jvp");
    if (cfg_.coupling.size() == 0) return Latent::Zero(z.size());
    require(v.size() == cfg_.coupling.cols(), ErrorCode::DimensionMismatch,
            "GaussianOracle::eps_embedding_jvp: direction dimension");
    const double a = schedule_.signal(t);
    return (-a * gain(t).array() * (cfg_.coupling * v).array()).matrix();
}

std::optional<Vector> GaussianOracle::eps_embedding_vjp(const Latent& z, double t, const Embedding& e,
                                                        const Latent& adjoint) const {
    require_same_dim(z, cfg_.mu, "GaussianOracle::eps_embedding_vjp");
    require_same_dim(adjoint, cfg_.mu, "GaussianOracle::eps_embedding_vjp");
    if (cfg_.coupling.size() == 0) return Vector::Zero(e.values.size());
    const double a = schedule_.signal(t);
    const Vector scaled = (-a * gain(t).array() * adjoint.array()).matrix();
    return cfg_.coupling.transpose() * scaled;
}

Latent GaussianOracle::exact_flow(const Latent& z, double t, double k, const Embedding& e) const {
    require_same_dim(z, cfg_.mu, "GaussianOracle::exact_flow");
    const Vector mean = cfg_.effective_mean(e.values);
    const double abt = schedule_.alpha_bar(t);
    const double abk = schedule_.alpha_bar(k);
    const Eigen::ArrayXd var = cfg_.sigma_diag.array().square();
    const Eigen::ArrayXd std_t = (abt * var + (1.0 - abt)).sqrt();
    const Eigen::ArrayXd std_k = (abk * var + (1.0 - abk)).sqrt();
    return (std::sqrt(abk) * mean.array() + std_k / std_t * (z - std::sqrt(abt) * mean).array()).matrix();
}

Latent ConstantPredictor::eps(const Latent& z, double /*t*/, const Embedding& /*e*/) const {
    require_same_dim(z, value_, "ConstantPredictor::eps");
    return value_;
}

std::optional<Latent> ConstantPredictor::eps_embedding_jvp(const Latent& z, double, const Embedding&,
                                                           const Vector&) const {
    return Latent::Zero(z.size());
}

std::optional<Vector> ConstantPredictor::eps_embedding_vjp(const Latent&, double, const Embedding& e,
                                                           const Latent&) const {
    return Vector::Zero(e.values.size());
}

GuidedPredictor::GuidedPredictor(PredictorPtr base, Embedding conditional, double guidance)
    : base_(std::move(base)), conditional_(std::move(conditional)), guidance_(guidance) {
    require(base_ != nullptr, ErrorCode::Config, "GuidedPredictor: null base predictor");
}

Latent GuidedPredictor::eps(const Latent& z, double t, const Embedding& null_embedding) const {
    Latent eps_null = base_->eps(z, t, null_embedding);
    if (guidance_ == 0.0) return eps_null;
    const Latent eps_cond = base_->eps(z, t, conditional_);
    return eps_null + guidance_ * (eps_cond - eps_null);
}

std::optional<Latent> GuidedPredictor::eps_embedding_jvp(const Latent& z, double t, const Embedding& e,
                                                         const Vector& v) const {
    auto inner = base_->eps_embedding_jvp(z, t, e, v);
    if (!inner) return std::nullopt;
    return (1.0 - guidance_) * *inner;
}

std::optional<Vector> GuidedPredictor::eps_embedding_vjp(const Latent& z, double t, const Embedding& e,
                                                         const Latent& adjoint) const {
    auto inner = base_->eps_embedding_vjp(z, t, e, adjoint);
    if (!inner) return std::nullopt;
    return (1.0 - guidance_) * *inner;
}

Vector finite_diff_embedding_grad(const NoisePredictor& pred, const Latent& z, double t, const Embedding& e,
                                  const Latent& loss_adjoint, double rel_step) {
    const Eigen::Index m = e.values.size();
    Vector grad = Vector::Zero(m);
    if (loss_adjoint.isZero(0.0)) return grad;
    Embedding probe = e;
    for (Eigen::Index j = 0; j < m; ++j) {
        const double h = rel_step * std::max(1.0, std::abs(e.values[j]));
        probe.values[j] = e.values[j] + h;
        const double plus = loss_adjoint.dot(pred.eps(z, t, probe));
        probe.values[j] = e.values[j] - h;
        const double minus = loss_adjoint.dot(pred.eps(z, t, probe));
        probe.values[j] = e.values[j];
        grad[j] = (plus - minus) / (2.0 * h);
    }
    return grad;
}

Latent finite_diff_embedding_jvp(const NoisePredictor& pred, const Latent& z, double t, const Embedding& e,
                                 const Vector& v, double rel_step) {
    const double vnorm = v.lpNorm<Eigen::Infinity>();
    if (vnorm == 0.0) return Latent::Zero(z.size());
    const double scale = std::max(1.0, e.values.lpNorm<Eigen::Infinity>());
    const double h = rel_step * scale / vnorm;
    Embedding plus = e;
    Embedding minus = e;
    plus.values += h * v;
    minus.values -= h * v;
    return (pred.eps(z, t, plus) - pred.eps(z, t, minus)) / (2.0 * h);
}

Vector embedding_vjp(const NoisePredictor& pred, const Latent& z, double t, const Embedding& e,
                     const Latent& adjoint) {
    if (auto g = pred.eps_embedding_vjp(z, t, e, adjoint)) return *g;
    const Eigen::Index m = e.values.size();
    Vector basis = Vector::Zero(m);
    if (auto probe = pred.eps_embedding_jvp(z, t, e, basis)) {
        Vector grad(m);
        for (Eigen::Index j = 0; j < m; ++j) {
            basis[j] = 1.0;
            grad[j] = adjoint.dot(*pred.eps_embedding_jvp(z, t, e, basis));
            basis[j] = 0.0;
        }
        return grad;
    }
    return finite_diff_embedding_grad(pred, z, t, e, adjoint);
}

Latent embedding_jvp(const NoisePredictor& pred, const Latent& z, double t, const Embedding& e, const Vector& v) {
    if (auto j = pred.eps_embedding_jvp(z, t, e, v)) return *j;
    return finite_diff_embedding_jvp(pred, z, t, e, v);
}

}  // namespace trajlab
