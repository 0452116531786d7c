// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "trajlab/align.hpp"
#include "trajlab/gating.hpp"
#include "trajlab/metrics.hpp"
#include "trajlab/nulltext.hpp"
#include "trajlab/toy_attention.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace trajlab {

/// Error raised inside a pipeline stage; `stage()` names it for the CLI's error line.
class StageError : public Error {
public:
    StageError(std::string stage, ErrorCode code, const std::string& what)
        : Error(code, what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

/// Gaussian data model for one identity. Means, spreads, coupling and the
/// conditional embedding are drawn from the experiment seed.
struct PredictorSpec {
    double mean_scale = 1.0;
    double sigma_min = 0.5;
    double sigma_max = 1.0;
    int embedding_dim = 0;  // 0: same as the latent dimension
    double coupling_scale = 0.5;
    double cond_scale = 0.5;
};

struct MaskSpec {
    std::string kind = "none";  // none | disk | rect | file
    std::vector<double> params; // disk: cy cx r, rect: y0 x0 y1 x1
    std::string path;

    bool present() const { return kind != "none"; }
};

struct ExperimentConfig {
    int side = 16;
    std::size_t steps = 6;
    std::size_t s1 = 1;
    std::size_t s2 = 3;
    IndexConvention convention = IndexConvention::FromData;
    PlanLayout layout = PlanLayout::Global;
    int dpm_order = 2;

    double lambda0 = 0.04;
    double eta = 0.01;
    MergeMode merge_mode = MergeMode::Threshold;
    double merge_delta = 0.02;

    NullTextOptions nulltext;
    std::string null_init = "conditional";  // conditional | zero

    bool gating_enabled = true;
    GatingConfig gating;
    bool up_256_self = false;
    MaskSpec mask1{"disk", {8.0, 6.0, 6.0}, {}};
    MaskSpec mask2{"rect", {3.0, 7.0, 9.0, 16.0}, {}};
    MaskSpec blend_mask;
    double i3_mix = 0.0;  // null embedding of the target path: (1 - mix) null_1 + mix null_2
    ToyAttentionConfig attention;

    PredictorSpec predictor1;
    PredictorSpec predictor2;

    std::uint64_t seed = 20240611;

    int latent_dim() const { return side * side; }
    void validate() const;
};

ExperimentConfig default_config();
ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// All fields, defaults materialized, stable key order.
std::string config_to_json_text(const ExperimentConfig& cfg);
/// 16 hex digits of FNV-1a over the resolved config text.
std::string config_hash(const ExperimentConfig& cfg);
/// Seed precedence: config file < EDITEDID_SEED < explicit flag.
void apply_seed_overrides(ExperimentConfig& cfg, std::optional<std::uint64_t> flag_seed);

HybridPlan make_plan(const ExperimentConfig& cfg);

struct Identity {
    std::shared_ptr<GaussianOracle> predictor;
    Embedding conditional;
    Latent source;
};

/// Deterministic predictor, conditional embedding and source latent for identity 0 or 1.
Identity make_identity(const ExperimentConfig& cfg, const NoiseSchedule& schedule, int which);

struct MetricRow {
    std::string stage;
    std::string name;
    double value = 0.0;
};

struct StageTiming {
    std::string stage;
    double milliseconds = 0.0;
};

struct PipelineResult {
    Latent source1;
    Latent source2;
    Latent z_shared;
    Latent recon1;
    Latent recon2;
    Latent target;
    AlignedPair aligned;
    EmbeddingSchedule null1;
    EmbeddingSchedule null2;
    Trajectory rec1;
    Trajectory rec2;
    Trajectory rec3;
    StabilityReport stability1;
    StabilityReport stability2;
    std::vector<MetricRow> metrics;
    std::vector<StageTiming> timings;
    std::vector<std::string> warnings;
    std::string config_hash;
};

PipelineResult run_editedid(const ExperimentConfig& cfg);

/// Bitwise comparison of every numeric output (timings excluded).
bool bitwise_equal(const PipelineResult& a, const PipelineResult& b);

struct BatchItem {
    std::optional<PipelineResult> result;
    std::string error_stage;
    std::string error;
};

/// Runs independent configs on `workers` threads; results keep input order and
/// one failing item never affects the others.
std::vector<BatchItem> run_parallel_batch(const std::vector<ExperimentConfig>& configs, int workers);

/// metrics.csv, trajectory_*.csv, alignment.csv, null_*.txt and summary.txt.
void write_pipeline_outputs(const PipelineResult& result, const std::filesystem::path& dir);

}  // namespace trajlab
