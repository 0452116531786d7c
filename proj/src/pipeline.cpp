// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "trajlab/pipeline.hpp"

#include "json.hpp"

#include <atomic>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <random>
#include <sstream>
#include <thread>

namespace trajlab {

using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& key, const std::string& what) {
    throw Error(ErrorCode::Config, key + ": " + what);
}

void check(bool ok, const std::string& key, const std::string& what) {
    if (!ok) config_error(key, what);
}

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    check(j.is_object(), where.empty() ? "<root>" : where, "expected an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        check(ok, where.empty() ? key : where + "." + key, "unknown key");
    }
}

template <typename T>
void read(const json& j, const char* key, const std::string& where, T& out) {
    if (!j.contains(key)) return;
    const std::string path = where.empty() ? key : where + "." + key;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        config_error(path, "wrong type");
    }
}

MaskSpec read_mask(const json& j, const std::string& where) {
    check_keys(j, where, {"kind", "params", "path"});
    MaskSpec m;
    read(j, "kind", where, m.kind);
    read(j, "params", where, m.params);
    read(j, "path", where, m.path);
    return m;
}

json mask_json(const MaskSpec& m) { return json{{"kind", m.kind}, {"params", m.params}, {"path", m.path}}; }

PredictorSpec read_predictor(const json& j, const std::string& where) {
    check_keys(j, where, {"mean_scale", "sigma_min", "sigma_max", "embedding_dim", "coupling_scale", "cond_scale"});
    PredictorSpec p;
    read(j, "mean_scale", where, p.mean_scale);
    read(j, "sigma_min", where, p.sigma_min);
    read(j, "sigma_max", where, p.sigma_max);
    read(j, "embedding_dim", where, p.embedding_dim);
    read(j, "coupling_scale", where, p.coupling_scale);
    read(j, "cond_scale", where, p.cond_scale);
    return p;
}

json predictor_json(const PredictorSpec& p) {
    return json{{"mean_scale", p.mean_scale},         {"sigma_min", p.sigma_min},
                {"sigma_max", p.sigma_max},           {"embedding_dim", p.embedding_dim},
                {"coupling_scale", p.coupling_scale}, {"cond_scale", p.cond_scale}};
}

const char* merge_name(MergeMode m) { return m == MergeMode::Threshold ? "threshold" : "final_step"; }
const char* layout_name(PlanLayout l) { return l == PlanLayout::Global ? "global" : "fragmented"; }

void validate_mask(const MaskSpec& m, const std::string& key) {
    if (m.kind == "none") return;
    if (m.kind == "disk") {
        check(m.params.size() == 3 && m.params[2] > 0.0, key + ".params", "disk needs [cy, cx, radius > 0]");
    } else if (m.kind == "rect") {
        check(m.params.size() == 4, key + ".params", "rect needs [y0, x0, y1, x1]");
    } else if (m.kind == "file") {
        check(!m.path.empty(), key + ".path", "file mask needs a path");
    } else {
        config_error(key + ".kind", "unknown mask kind '" + m.kind + "'");
    }
}

SpatialMask build_mask(const MaskSpec& m, int side) {
    if (m.kind == "disk") return disk_mask(side, side, m.params[0], m.params[1], m.params[2]);
    if (m.kind == "rect") {
        return rect_mask(side, side, static_cast<int>(m.params[0]), static_cast<int>(m.params[1]),
                         static_cast<int>(m.params[2]), static_cast<int>(m.params[3]));
    }
    if (m.kind == "file") return resample_nearest(load_mask_file(m.path), side, side);
    return constant_mask(side, side, 0.0);
}

}  // namespace

void ExperimentConfig::validate() const {
    check(side >= 2 && side <= 64, "latent.side", "must lie in [2, 64]");
    check(steps >= 2, "plan.T", "must be >= 2");
    check(s1 <= s2, "plan.s1", "must not exceed plan.s2");
    check(s2 < steps, "plan.s2", "must be < plan.T");
    check(dpm_order == 1 || dpm_order == 2, "plan.dpm_order", "must be 1 or 2");
    check(lambda0 >= 0.0 && lambda0 <= 0.5, "align.lambda0", "must lie in [0, 0.5]");
    check(eta > 0.0, "align.eta", "must be > 0");
    check(merge_delta >= 0.0 && merge_delta <= 0.5, "align.delta", "must lie in [0, 0.5]");
    check(nulltext.iterations >= 0, "nulltext.iterations", "must be >= 0");
    check(nulltext.learning_rate > 0.0, "nulltext.learning_rate", "must be > 0");
    check(nulltext.early_stop >= 0.0, "nulltext.early_stop", "must be >= 0");
    check(null_init == "conditional" || null_init == "zero", "nulltext.init", "must be 'conditional' or 'zero'");
    check(i3_mix >= 0.0 && i3_mix <= 1.0, "gating.i3_mix", "must lie in [0, 1]");
    check(gating.w_hat >= 0.0 && gating.w_hat <= 1.0, "gating.w_hat", "must lie in [0, 1]");
    check(attention.tokens >= 1, "attention.tokens", "must be >= 1");
    check(attention.spatial_bandwidth > 0.0, "attention.spatial_bandwidth", "must be > 0");
    check(attention.value_bandwidth > 0.0, "attention.value_bandwidth", "must be > 0");
    try {
        gating.validate(attention.tokens);
    } catch (const Error& e) {
        config_error("gating.tokens", e.what());
    }
    validate_mask(mask1, "gating.mask1");
    validate_mask(mask2, "gating.mask2");
    validate_mask(blend_mask, "gating.blend_mask");
    if (gating_enabled) {
        for (const auto& l : gating.policy.layers) {
            const int ls = static_cast<int>(std::lround(std::sqrt(static_cast<double>(l.resolution))));
            check(ls * ls == l.resolution && side % ls == 0, "latent.side",
                  "must be a multiple of every gated layer side (layer " + l.tag + ")");
        }
    }
    for (const auto& [p, key] : {std::pair{&predictor1, "predictors[0]"}, std::pair{&predictor2, "predictors[1]"}}) {
        const std::string k = key;
        check(p->sigma_min > 0.0 && p->sigma_min <= p->sigma_max, k + ".sigma_min", "need 0 < sigma_min <= sigma_max");
        check(p->embedding_dim >= 0, k + ".embedding_dim", "must be >= 0");
        check(p->coupling_scale >= 0.0, k + ".coupling_scale", "must be >= 0");
    }
    if (convention == IndexConvention::FromNoise && layout == PlanLayout::Global) {
        try {
            hybrid_grid(steps, s1, s2, convention);
        } catch (const NonMonotoneSpliceError& e) {
            config_error("plan.convention", e.what());
        }
    }
}

ExperimentConfig default_config() {
    ExperimentConfig cfg;
    cfg.gating.tokens1 = {1, 2};
    cfg.gating.tokens2 = {5};
    return cfg;
}

ExperimentConfig config_from_json_text(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::Config, std::string("parse error: ") + e.what());
    }
    check_keys(root, "", {"latent", "plan", "align", "nulltext", "gating", "attention", "predictors", "seed"});
    ExperimentConfig cfg = default_config();
    if (root.contains("latent")) {
        const auto& j = root["latent"];
        check_keys(j, "latent", {"side"});
        read(j, "side", "latent", cfg.side);
    }
    if (root.contains("plan")) {
        const auto& j = root["plan"];
        check_keys(j, "plan", {"T", "s1", "s2", "convention", "layout", "dpm_order"});
        read(j, "T", "plan", cfg.steps);
        read(j, "s1", "plan", cfg.s1);
        read(j, "s2", "plan", cfg.s2);
        read(j, "dpm_order", "plan", cfg.dpm_order);
        std::string conv = to_string(cfg.convention);
        read(j, "convention", "plan", conv);
        try {
            cfg.convention = convention_from_string(conv);
        } catch (const Error&) {
            config_error("plan.convention", "expected FROM_DATA or FROM_NOISE");
        }
        std::string layout = layout_name(cfg.layout);
        read(j, "layout", "plan", layout);
        check(layout == "global" || layout == "fragmented", "plan.layout", "expected global or fragmented");
        cfg.layout = layout == "global" ? PlanLayout::Global : PlanLayout::Fragmented;
    }
    if (root.contains("align")) {
        const auto& j = root["align"];
        check_keys(j, "align", {"lambda0", "eta", "merge", "delta"});
        read(j, "lambda0", "align", cfg.lambda0);
        read(j, "eta", "align", cfg.eta);
        read(j, "delta", "align", cfg.merge_delta);
        std::string merge = merge_name(cfg.merge_mode);
        read(j, "merge", "align", merge);
        check(merge == "threshold" || merge == "final_step", "align.merge", "expected threshold or final_step");
        cfg.merge_mode = merge == "threshold" ? MergeMode::Threshold : MergeMode::FinalStepOnly;
    }
    if (root.contains("nulltext")) {
        const auto& j = root["nulltext"];
        check_keys(j, "nulltext", {"iterations", "learning_rate", "early_stop", "rule", "guidance", "init"});
        read(j, "iterations", "nulltext", cfg.nulltext.iterations);
        read(j, "learning_rate", "nulltext", cfg.nulltext.learning_rate);
        read(j, "early_stop", "nulltext", cfg.nulltext.early_stop);
        read(j, "guidance", "nulltext", cfg.nulltext.guidance);
        read(j, "init", "nulltext", cfg.null_init);
        std::string rule = to_string(cfg.nulltext.rule);
        read(j, "rule", "nulltext", rule);
        try {
            cfg.nulltext.rule = null_step_rule_from_string(rule);
        } catch (const Error&) {
            config_error("nulltext.rule", "expected fixed or exact_line_search");
        }
    }
    if (root.contains("gating")) {
        const auto& j = root["gating"];
        check_keys(j, "gating", {"enabled", "w_hat", "tokens1", "tokens2", "variant", "up_256_self", "mask1", "mask2",
                                 "blend_mask", "i3_mix"});
        read(j, "enabled", "gating", cfg.gating_enabled);
        read(j, "w_hat", "gating", cfg.gating.w_hat);
        read(j, "tokens1", "gating", cfg.gating.tokens1);
        read(j, "tokens2", "gating", cfg.gating.tokens2);
        read(j, "up_256_self", "gating", cfg.up_256_self);
        read(j, "i3_mix", "gating", cfg.i3_mix);
        std::string variant = to_string(cfg.gating.variant);
        read(j, "variant", "gating", variant);
        try {
            cfg.gating.variant = overlap_variant_from_string(variant);
        } catch (const Error&) {
            config_error("gating.variant", "expected verbatim or union");
        }
        if (j.contains("mask1")) cfg.mask1 = read_mask(j["mask1"], "gating.mask1");
        if (j.contains("mask2")) cfg.mask2 = read_mask(j["mask2"], "gating.mask2");
        if (j.contains("blend_mask")) cfg.blend_mask = read_mask(j["blend_mask"], "gating.blend_mask");
        cfg.gating.policy = default_layer_policy(cfg.up_256_self);
    }
    if (root.contains("attention")) {
        const auto& j = root["attention"];
        check_keys(j, "attention", {"tokens", "spatial_bandwidth", "value_bandwidth", "cross_weight", "seed"});
        read(j, "tokens", "attention", cfg.attention.tokens);
        read(j, "spatial_bandwidth", "attention", cfg.attention.spatial_bandwidth);
        read(j, "value_bandwidth", "attention", cfg.attention.value_bandwidth);
        read(j, "cross_weight", "attention", cfg.attention.cross_weight);
        read(j, "seed", "attention", cfg.attention.seed);
    }
    if (root.contains("predictors")) {
        const auto& j = root["predictors"];
        check(j.is_array() && j.size() == 2, "predictors", "expected an array of two predictor specs");
        cfg.predictor1 = read_predictor(j[0], "predictors[0]");
        cfg.predictor2 = read_predictor(j[1], "predictors[1]");
    }
    read(root, "seed", "", cfg.seed);
    cfg.attention.side = cfg.side;
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, path.string() + " not found");
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json_text(ss.str());
}

std::string config_to_json_text(const ExperimentConfig& cfg) {
    json root;
    root["latent"] = {{"side", cfg.side}};
    root["plan"] = {{"T", cfg.steps},
                    {"s1", cfg.s1},
                    {"s2", cfg.s2},
                    {"convention", to_string(cfg.convention)},
                    {"layout", layout_name(cfg.layout)},
                    {"dpm_order", cfg.dpm_order}};
    root["align"] = {{"lambda0", cfg.lambda0},
                     {"eta", cfg.eta},
                     {"merge", merge_name(cfg.merge_mode)},
                     {"delta", cfg.merge_delta}};
    root["nulltext"] = {{"iterations", cfg.nulltext.iterations},
                        {"learning_rate", cfg.nulltext.learning_rate},
                        {"early_stop", cfg.nulltext.early_stop},
                        {"rule", to_string(cfg.nulltext.rule)},
                        {"guidance", cfg.nulltext.guidance},
                        {"init", cfg.null_init}};
    root["gating"] = {{"enabled", cfg.gating_enabled},
                      {"w_hat", cfg.gating.w_hat},
                      {"tokens1", cfg.gating.tokens1},
                      {"tokens2", cfg.gating.tokens2},
                      {"variant", to_string(cfg.gating.variant)},
                      {"up_256_self", cfg.up_256_self},
                      {"mask1", mask_json(cfg.mask1)},
                      {"mask2", mask_json(cfg.mask2)},
                      {"blend_mask", mask_json(cfg.blend_mask)},
                      {"i3_mix", cfg.i3_mix}};
    root["attention"] = {{"tokens", cfg.attention.tokens},
                         {"spatial_bandwidth", cfg.attention.spatial_bandwidth},
                         {"value_bandwidth", cfg.attention.value_bandwidth},
                         {"cross_weight", cfg.attention.cross_weight},
                         {"seed", cfg.attention.seed}};
    root["predictors"] = json::array({predictor_json(cfg.predictor1), predictor_json(cfg.predictor2)});
    root["seed"] = cfg.seed;
    return root.dump(2) + "\n";
}

std::string config_hash(const ExperimentConfig& cfg) {
    const std::string text = config_to_json_text(cfg);
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, fnv1a(text.data(), text.size()));
    return buf;
}

void apply_seed_overrides(ExperimentConfig& cfg, std::optional<std::uint64_t> flag_seed) {
    if (const char* env = std::getenv("EDITEDID_SEED"); env != nullptr && *env != '\0') {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(env, &end, 10);
        if (end == env || *end != '\0') config_error("EDITEDID_SEED", "not an unsigned integer");
        cfg.seed = v;
    }
    if (flag_seed) cfg.seed = *flag_seed;
}

HybridPlan make_plan(const ExperimentConfig& cfg) {
    return cfg.layout == PlanLayout::Global ? hybrid_grid(cfg.steps, cfg.s1, cfg.s2, cfg.convention)
                                            : fragmented_plan(cfg.steps, cfg.s1, cfg.s2, cfg.convention);
}

Identity make_identity(const ExperimentConfig& cfg, const NoiseSchedule& schedule, int which) {
    require(which == 0 || which == 1, ErrorCode::InvalidRange, "make_identity: identity must be 0 or 1");
    const PredictorSpec& spec = which == 0 ? cfg.predictor1 : cfg.predictor2;
    const int d = cfg.latent_dim();
    const int m = spec.embedding_dim > 0 ? spec.embedding_dim : d;
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(which + 1)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> n01;
    std::uniform_real_distribution<double> uni(spec.sigma_min, spec.sigma_max);

    GaussianOracleConfig oc;
    oc.mu = Vector(d);
    oc.sigma_diag = Vector(d);
    for (int i = 0; i < d; ++i) oc.mu[i] = spec.mean_scale * n01(rng);
    for (int i = 0; i < d; ++i) oc.sigma_diag[i] = uni(rng);
    Eigen::MatrixXd gauss(d, m);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < m; ++j) gauss(i, j) = n01(rng);
    }
    // orthonormal columns keep the embedding-to-mean map well conditioned
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(gauss).householderQ() *
                              Eigen::MatrixXd::Identity(d, std::min(d, m));
    oc.coupling = Matrix::Zero(d, m);
    oc.coupling.leftCols(std::min(d, m)) = spec.coupling_scale * std::sqrt(static_cast<double>(d) / m) * q;

    Identity id;
    id.conditional.role = EmbeddingRole::Conditional;
    id.conditional.values = Vector(m);
    for (int j = 0; j < m; ++j) id.conditional.values[j] = spec.cond_scale * n01(rng);
    id.source = oc.effective_mean(id.conditional.values);
    for (int i = 0; i < d; ++i) id.source[i] += oc.sigma_diag[i] * n01(rng);
    id.predictor = std::make_shared<GaussianOracle>(std::move(oc), schedule);
    return id;
}

namespace {

class StageClock {
public:
    explicit StageClock(std::vector<StageTiming>& out) : out_(out) {}

    template <typename F>
    auto run(const std::string& stage, F&& f) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            if constexpr (std::is_void_v<decltype(f())>) {
                f();
                record(stage, t0);
            } else {
                auto r = f();
                record(stage, t0);
                return r;
            }
        } catch (const StageError&) {
            throw;
        } catch (const Error& e) {
            throw StageError(stage, e.code(), e.what());
        } catch (const std::exception& e) {
            throw StageError(stage, ErrorCode::Io, e.what());
        }
    }

private:
    void record(const std::string& stage, std::chrono::steady_clock::time_point t0) {
        const auto dt = std::chrono::steady_clock::now() - t0;
        out_.push_back({stage, std::chrono::duration<double, std::milli>(dt).count()});
    }

    std::vector<StageTiming>& out_;
};

// Reconstruction of the target path from the shared latent. It follows identity 1's
// predictor and null embeddings; gating adjusts its x0 estimate every step.
Trajectory entangle(const ExperimentConfig& cfg, const HybridPlan& plan, const NoiseSchedule& schedule,
                    const PredictorPtr& pred1, const PipelineResult& r, const Latent& blend_source) {
    const PredictorPtr eff = effective_predictor(pred1, r.null1);
    const ToyAttentionModel toy(cfg.attention);
    const SpatialMask m1 = build_mask(cfg.mask1, cfg.side);
    const SpatialMask m2 = build_mask(cfg.mask2, cfg.side);
    const std::optional<SpatialMask> blend =
        cfg.blend_mask.present() ? std::optional<SpatialMask>(build_mask(cfg.blend_mask, cfg.side)) : std::nullopt;
    std::mt19937_64 noise_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    std::normal_distribution<double> n01;

    Trajectory traj;
    traj.direction = Direction::Reconstruction;
    traj.plan = plan;
    Latent z = r.z_shared;
    Dpm2mState state;
    for (std::size_t p = 0; p < plan.size(); ++p) {
        const auto [from, to] = step_levels(plan, p, Direction::Reconstruction);
        const Embedding e =
            cfg.i3_mix == 0.0
                ? r.null1.nulls[p]
                : Embedding{(1.0 - cfg.i3_mix) * r.null1.nulls[p].values + cfg.i3_mix * r.null2.nulls[p].values};
        Latent eps = eff->eps(z, from, e);
        Latent x0 = predict_x0(schedule, z, from, eps);
        if (cfg.gating_enabled) {
            const std::vector<Latent> states{r.rec1.steps[p].latent_before, r.rec2.steps[p].latent_before, z};
            const std::vector<Latent> x0s{r.rec1.steps[p].x0_estimate, r.rec2.steps[p].x0_estimate, x0};
            Vector self_sum = Vector::Zero(z.size());
            Vector cross_sum = Vector::Zero(z.size());
            int n_self = 0;
            int n_cross = 0;
            for (std::size_t li = 0; li < cfg.gating.policy.layers.size(); ++li) {
                const LayerSpec& layer = cfg.gating.policy.layers[li];
                GatingConfig only = cfg.gating;
                if (layer.self_replace) {
                    only.policy.layers[li].cross_replace = false;
                    self_sum += toy.gated_delta(only, layer.tag, states, x0s, m1, m2);
                    ++n_self;
                }
                if (layer.cross_replace) {
                    only.policy.layers[li].self_replace = false;
                    only.policy.layers[li].cross_replace = true;
                    cross_sum += toy.gated_delta(only, layer.tag, states, x0s, m1, m2);
                    ++n_cross;
                }
            }
            if (n_self > 0) x0 += self_sum / n_self;
            if (n_cross > 0) x0 += cross_sum / n_cross;
            const double ab = schedule.alpha_bar(from);
            eps = (z - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab);
        }
        StepOutcome out = advance_with_estimate(plan, p, schedule, z, std::move(x0), std::move(eps), state,
                                                Direction::Reconstruction, cfg.nulltext.sampler);
        if (blend) {
            Latent noise(z.size());
            for (Eigen::Index i = 0; i < noise.size(); ++i) noise[i] = n01(noise_rng);
            out.latent = latent_blend(out.latent, blend_source, *blend, to, schedule, noise);
        }
        StepRecord rec;
        rec.step_index = p;
        rec.timestep = from;
        rec.target = to;
        rec.solver_tag = plan.solver_tags[p];
        rec.latent_before = std::move(z);
        rec.latent_after = out.latent;
        rec.x0_estimate = std::move(out.x0);
        traj.steps.push_back(std::move(rec));
        z = std::move(out.latent);
        state = std::move(out.state);
    }
    return traj;
}

}  // namespace

PipelineResult run_editedid(const ExperimentConfig& cfg_in) {
    PipelineResult r;
    StageClock clock(r.timings);
    ExperimentConfig cfg = cfg_in;
    clock.run("config", [&] {
        cfg.attention.side = cfg.side;
        cfg.nulltext.sampler.dpm_order = cfg.dpm_order;
        cfg.validate();
    });
    r.config_hash = config_hash(cfg);

    const NoiseSchedule schedule = clock.run("schedule", [] { return build_noise_schedule(); });
    const HybridPlan plan = clock.run("schedule", [&] { return make_plan(cfg); });
    const Identity id1 = clock.run("predictor", [&] { return make_identity(cfg, schedule, 0); });
    const Identity id2 = clock.run("predictor", [&] { return make_identity(cfg, schedule, 1); });
    r.source1 = id1.source;
    r.source2 = id2.source;

    clock.run("align", [&] {
        const std::vector<Embedding> e1(plan.size(), id1.conditional);
        const std::vector<Embedding> e2(plan.size(), id2.conditional);
        AlignOptions opt;
        opt.eta = cfg.eta;
        opt.merge_mode = cfg.merge_mode;
        opt.delta = cfg.merge_delta;
        opt.sampler = cfg.nulltext.sampler;
        r.aligned = align_inversion(plan, schedule, *id1.predictor, *id2.predictor, id1.source, id2.source, e1, e2,
                                    cfg.lambda0, opt);
        r.z_shared = r.aligned.z_shared;
        r.warnings.insert(r.warnings.end(), r.aligned.warnings.begin(), r.aligned.warnings.end());
    });

    clock.run("nulltext", [&] {
        const bool cond_init = cfg.null_init == "conditional";
        r.null1 = optimize_null_schedule(plan, schedule, id1.predictor, r.z_shared,
                                         recon_targets(r.aligned.traj_1, id1.source), id1.conditional,
                                         cond_init ? std::optional<Vector>(id1.conditional.values) : std::nullopt,
                                         cfg.nulltext);
        r.null2 = optimize_null_schedule(plan, schedule, id2.predictor, r.z_shared,
                                         recon_targets(r.aligned.traj_2, id2.source), id2.conditional,
                                         cond_init ? std::optional<Vector>(id2.conditional.values) : std::nullopt,
                                         cfg.nulltext);
        for (const auto* emb : {&r.null1, &r.null2}) {
            for (const auto& nc : emb->non_converged) {
                char buf[128];
                std::snprintf(buf, sizeof buf, "null-text identity %d step %zu residual %.6e", emb == &r.null1 ? 1 : 2,
                              nc.step, nc.residual);
                r.warnings.emplace_back(buf);
            }
        }
    });

    clock.run("reconstruct", [&] {
        r.rec1 = reconstruct_with_null(plan, schedule, id1.predictor, r.z_shared, r.null1);
        r.rec2 = reconstruct_with_null(plan, schedule, id2.predictor, r.z_shared, r.null2);
        r.recon1 = r.rec1.final_latent();
        r.recon2 = r.rec2.final_latent();
    });

    clock.run("entangle", [&] {
        r.rec3 = entangle(cfg, plan, schedule, id1.predictor, r, id1.source);
        r.target = r.rec3.final_latent();
    });

    clock.run("metrics", [&] {
        r.stability1 = stability_report(r.aligned.traj_1, r.rec1, r.source1);
        r.stability2 = stability_report(r.aligned.traj_2, r.rec2, r.source2);
        auto add = [&](const std::string& stage, const std::string& name, double v) {
            r.metrics.push_back({stage, name, v});
        };
        add("align", "merge_step", static_cast<double>(r.aligned.merge_step));
        add("align", "final_lambda", r.aligned.lambda_history.back());
        add("nulltext", "max_residual_1", *std::max_element(r.null1.residuals.begin(), r.null1.residuals.end()));
        add("nulltext", "max_residual_2", *std::max_element(r.null2.residuals.begin(), r.null2.residuals.end()));
        add("reconstruct", "psnr_1", r.stability1.psnr_db);
        add("reconstruct", "psnr_2", r.stability2.psnr_db);
        add("reconstruct", "max_jump_1", r.stability1.max_jump);
        add("reconstruct", "max_jump_2", r.stability2.max_jump);
        add("entangle", "psnr_target_vs_1", psnr_auto(r.recon1, r.target));
        add("entangle", "psnr_target_vs_2", psnr_auto(r.recon2, r.target));
        add("entangle", "cos_target_vs_1", cosine_sim(r.target, r.recon1));
        add("entangle", "cos_target_vs_2", cosine_sim(r.target, r.recon2));
    });
    return r;
}

namespace {

bool same_bits(const Vector& a, const Vector& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

bool same_bits(const Trajectory& a, const Trajectory& b) {
    if (a.steps.size() != b.steps.size()) return false;
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
        if (!same_bits(a.steps[i].latent_after, b.steps[i].latent_after)) return false;
    }
    return true;
}

bool same_bits(const EmbeddingSchedule& a, const EmbeddingSchedule& b) {
    if (a.nulls.size() != b.nulls.size() || a.residuals != b.residuals) return false;
    for (std::size_t i = 0; i < a.nulls.size(); ++i) {
        if (!same_bits(a.nulls[i].values, b.nulls[i].values)) return false;
    }
    return true;
}

}  // namespace

bool bitwise_equal(const PipelineResult& a, const PipelineResult& b) {
    if (!same_bits(a.z_shared, b.z_shared) || !same_bits(a.recon1, b.recon1) || !same_bits(a.recon2, b.recon2) ||
        !same_bits(a.target, b.target) || !same_bits(a.source1, b.source1) || !same_bits(a.source2, b.source2)) {
        return false;
    }
    if (!same_bits(a.null1, b.null1) || !same_bits(a.null2, b.null2)) return false;
    if (!same_bits(a.rec1, b.rec1) || !same_bits(a.rec2, b.rec2) || !same_bits(a.rec3, b.rec3)) return false;
    if (a.metrics.size() != b.metrics.size()) return false;
    for (std::size_t i = 0; i < a.metrics.size(); ++i) {
        const double x = a.metrics[i].value;
        const double y = b.metrics[i].value;
        if (std::memcmp(&x, &y, sizeof x) != 0) return false;
    }
    return a.config_hash == b.config_hash;
}

std::vector<BatchItem> run_parallel_batch(const std::vector<ExperimentConfig>& configs, int workers) {
    require(workers >= 1, ErrorCode::InvalidRange, "run_parallel_batch: workers must be >= 1");
    std::vector<BatchItem> out(configs.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < configs.size(); i = next++) {
            try {
                out[i].result = run_editedid(configs[i]);
            } catch (const StageError& e) {
                out[i].error_stage = e.stage();
                out[i].error = e.what();
            } catch (const std::exception& e) {
                out[i].error_stage = "batch";
                out[i].error = e.what();
            }
        }
    };
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(workers), configs.size());
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < n; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    return out;
}

void write_pipeline_outputs(const PipelineResult& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto open = [&](const char* name) {
        std::ofstream f(dir / name);
        require(static_cast<bool>(f), ErrorCode::Io, "cannot write " + (dir / name).string());
        return f;
    };
    {
        auto f = open("metrics.csv");
        f << "stage,metric,value\n";
        char buf[64];
        for (const auto& m : r.metrics) {
            if (std::isinf(m.value)) {
                std::snprintf(buf, sizeof buf, "inf");
            } else {
                std::snprintf(buf, sizeof buf, "%.17g", m.value);
            }
            f << m.stage << ',' << m.name << ',' << buf << '\n';
        }
    }
    {
        auto f = open("trajectory_inversion_1.csv");
        write_trajectory_csv(f, r.aligned.traj_1);
    }
    {
        auto f = open("trajectory_inversion_2.csv");
        write_trajectory_csv(f, r.aligned.traj_2);
    }
    {
        auto f = open("trajectory_reconstruction_1.csv");
        write_trajectory_csv(f, r.rec1);
    }
    {
        auto f = open("trajectory_reconstruction_2.csv");
        write_trajectory_csv(f, r.rec2);
    }
    {
        auto f = open("trajectory_target.csv");
        write_trajectory_csv(f, r.rec3);
    }
    {
        auto f = open("alignment.csv");
        write_alignment_csv(f, r.aligned);
    }
    {
        auto f = open("null_1.txt");
        write_embedding_schedule(f, r.null1);
    }
    {
        auto f = open("null_2.txt");
        write_embedding_schedule(f, r.null2);
    }
    {
        auto f = open("stability.csv");
        write_stability_csv_header(f);
        write_stability_csv_row(f, "identity_1", r.stability1);
        write_stability_csv_row(f, "identity_2", r.stability2);
    }
    {
        auto f = open("summary.txt");
        f << "config hash: " << r.config_hash << '\n';
        f << "merge step: " << r.aligned.merge_step << '\n';
        write_stability_summary(f, "identity_1", r.stability1);
        write_stability_summary(f, "identity_2", r.stability2);
        for (const auto& w : r.warnings) f << "warning: " << w << '\n';
    }
}

}  // namespace trajlab
