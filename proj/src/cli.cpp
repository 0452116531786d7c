// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "trajlab/cli.hpp"

#include "trajlab/pipeline.hpp"
#include "trajlab/plot.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace trajlab::cli {

namespace {

namespace fs = std::filesystem;

struct Failure {
    int code;
    std::string stage;
    std::string message;
};

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    bool force = false;
    bool resume = false;
    bool verbose = false;
};

std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<double> parse_list(const std::string& text, const std::string& flag) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        char* end = nullptr;
        const double v = std::strtod(item.c_str(), &end);
        if (item.empty() || *end != '\0') throw Failure{kUsage, "cli", flag + ": cannot parse '" + item + "'"};
        out.push_back(v);
    }
    if (out.empty()) throw Failure{kUsage, "cli", flag + ": empty list"};
    return out;
}

ExperimentConfig resolve_config(const Common& c) {
    ExperimentConfig cfg = c.config.empty() ? default_config() : load_config(c.config);
    apply_seed_overrides(cfg, c.seed);
    return cfg;
}

void finish_config(ExperimentConfig& cfg) {
    cfg.attention.side = cfg.side;
    cfg.nulltext.sampler.dpm_order = cfg.dpm_order;
    cfg.validate();
}

/// Creates the output directory. An existing non-empty directory needs --force
/// (overwrite files) or --resume (keep completed sweep rows).
fs::path prepare_out(const Common& c, const ExperimentConfig& cfg) {
    const fs::path dir(c.out);
    if (fs::exists(dir) && !fs::is_directory(dir)) {
        throw Failure{kValidation, "cli", "output path " + c.out + " is not a directory"};
    }
    if (fs::exists(dir) && !fs::is_empty(dir) && !c.force && !c.resume) {
        throw Failure{kValidation, "cli", "output directory " + c.out + " exists; pass --force or --resume"};
    }
    fs::create_directories(dir);
    std::ofstream f(dir / "config_resolved.json");
    f << config_to_json_text(cfg);
    if (!f) throw Failure{kRuntime, "io", "cannot write " + (dir / "config_resolved.json").string()};
    return dir;
}

std::ofstream open_out(const fs::path& path, bool append = false) {
    std::ofstream f(path, append ? std::ios::app : std::ios::trunc);
    if (!f) throw Failure{kRuntime, "io", "cannot write " + path.string()};
    return f;
}

void log_timings(std::ostream& err, const Common& c, const std::vector<StageTiming>& timings) {
    if (!c.verbose) return;
    for (const auto& t : timings) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "stage %-12s %9.3f ms\n", t.stage.c_str(), t.milliseconds);
        err << buf;
    }
}

/// Rows already present in a sweep CSV, keyed by the first `key_cols` columns.
std::map<std::string, std::string> completed_rows(const fs::path& csv, std::size_t key_cols, std::string& header) {
    std::map<std::string, std::string> rows;
    std::ifstream in(csv);
    if (!in) return rows;
    std::getline(in, header);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::size_t pos = 0;
        for (std::size_t k = 0; k < key_cols && pos != std::string::npos; ++k) {
            pos = line.find(',', pos == 0 ? 0 : pos + 1);
        }
        rows.emplace(line.substr(0, pos), line);
    }
    return rows;
}

std::vector<double> column(const std::map<std::string, std::string>& rows, const std::vector<std::string>& keys,
                           std::size_t col) {
    std::vector<double> out;
    for (const auto& k : keys) {
        std::stringstream ss(rows.at(k));
        std::string cell;
        for (std::size_t i = 0; i <= col; ++i) std::getline(ss, cell, ',');
        out.push_back(cell == "inf" ? HUGE_VAL : std::strtod(cell.c_str(), nullptr));
    }
    return out;
}

// ---- subcommands ----

int cmd_schedule(const Common& c, ExperimentConfig cfg, std::ostream& out) {
    finish_config(cfg);
    const HybridPlan plan = make_plan(cfg);
    if (c.out.empty()) {
        write_plan_csv(out, plan);
        return kOk;
    }
    const fs::path dir = prepare_out(c, cfg);
    auto f = open_out(dir / "plan.csv");
    write_plan_csv(f, plan);
    return kOk;
}

struct Identities {
    NoiseSchedule schedule = build_noise_schedule();
    HybridPlan plan;
    Identity id[2];
};

Identities build_identities(const ExperimentConfig& cfg) {
    Identities s;
    s.plan = make_plan(cfg);
    for (int k = 0; k < 2; ++k) s.id[k] = make_identity(cfg, s.schedule, k);
    return s;
}

int cmd_invert(const Common& c, ExperimentConfig cfg, bool reconstruct, std::ostream& out) {
    finish_config(cfg);
    const fs::path dir = prepare_out(c, cfg);
    const Identities s = build_identities(cfg);
    const SamplerOptions sopt = cfg.nulltext.sampler;
    auto stab = open_out(dir / "stability.csv");
    if (reconstruct) write_stability_csv_header(stab);
    for (int k = 0; k < 2; ++k) {
        const std::vector<Embedding> e(s.plan.size(), s.id[k].conditional);
        const auto inv = run_trajectory(s.plan, s.schedule, *s.id[k].predictor, s.id[k].source, e,
                                        Direction::Inversion, sopt);
        const std::string n = std::to_string(k + 1);
        auto f = open_out(dir / ("trajectory_inversion_" + n + ".csv"));
        write_trajectory_csv(f, inv);
        if (!reconstruct) continue;
        const auto rec = run_trajectory(s.plan, s.schedule, *s.id[k].predictor, inv.final_latent(), e,
                                        Direction::Reconstruction, sopt);
        auto g = open_out(dir / ("trajectory_reconstruction_" + n + ".csv"));
        write_trajectory_csv(g, rec);
        const auto rep = stability_report(inv, rec, s.id[k].source);
        write_stability_csv_row(stab, "identity_" + n, rep);
        write_stability_summary(out, "identity_" + n, rep);
    }
    stab.close();
    if (!reconstruct) fs::remove(dir / "stability.csv");
    return kOk;
}

AlignedPair run_align(const ExperimentConfig& cfg, const Identities& s) {
    const std::vector<Embedding> e1(s.plan.size(), s.id[0].conditional);
    const std::vector<Embedding> e2(s.plan.size(), s.id[1].conditional);
    AlignOptions opt;
    opt.eta = cfg.eta;
    opt.merge_mode = cfg.merge_mode;
    opt.delta = cfg.merge_delta;
    opt.sampler = cfg.nulltext.sampler;
    return align_inversion(s.plan, s.schedule, *s.id[0].predictor, *s.id[1].predictor, s.id[0].source,
                           s.id[1].source, e1, e2, cfg.lambda0, opt);
}

int cmd_align(const Common& c, ExperimentConfig cfg, std::ostream& out, std::ostream& err) {
    finish_config(cfg);
    const fs::path dir = prepare_out(c, cfg);
    const Identities s = build_identities(cfg);
    const AlignedPair pair = run_align(cfg, s);
    auto f = open_out(dir / "alignment.csv");
    write_alignment_csv(f, pair);
    auto t1 = open_out(dir / "trajectory_inversion_1.csv");
    write_trajectory_csv(t1, pair.traj_1);
    auto t2 = open_out(dir / "trajectory_inversion_2.csv");
    write_trajectory_csv(t2, pair.traj_2);
    out << "merge step: " << pair.merge_step << '\n';
    out << "loss non-increasing: " << (pair.loss_non_increasing() ? "yes" : "no") << '\n';
    for (const auto& w : pair.warnings) err << "warning: " << w << '\n';
    return kOk;
}

int cmd_nulltext(const Common& c, ExperimentConfig cfg, std::ostream& out) {
    finish_config(cfg);
    const fs::path dir = prepare_out(c, cfg);
    const Identities s = build_identities(cfg);
    const AlignedPair pair = run_align(cfg, s);
    auto f = open_out(dir / "nulltext.csv");
    f << "identity,step,iterations,residual\n";
    for (int k = 0; k < 2; ++k) {
        const auto& inv = k == 0 ? pair.traj_1 : pair.traj_2;
        const std::optional<Vector> init =
            cfg.null_init == "conditional" ? std::optional<Vector>(s.id[k].conditional.values) : std::nullopt;
        const auto emb = optimize_null_schedule(s.plan, s.schedule, s.id[k].predictor, pair.z_shared,
                                                recon_targets(inv, s.id[k].source), s.id[k].conditional, init,
                                                cfg.nulltext);
        for (std::size_t p = 0; p < emb.residuals.size(); ++p) {
            f << k + 1 << ',' << p << ',' << emb.iterations_used[p] << ',' << fmt(emb.residuals[p]) << '\n';
        }
        auto g = open_out(dir / ("null_" + std::to_string(k + 1) + ".txt"));
        write_embedding_schedule(g, emb);
        out << "identity " << k + 1 << ": max residual "
            << fmt(*std::max_element(emb.residuals.begin(), emb.residuals.end())) << ", "
            << emb.non_converged.size() << " non-converged steps\n";
    }
    return kOk;
}

int cmd_pipeline(const Common& c, ExperimentConfig cfg, bool full, std::ostream& out, std::ostream& err) {
    finish_config(cfg);
    const fs::path dir = prepare_out(c, cfg);
    const PipelineResult r = run_editedid(cfg);
    log_timings(err, c, r.timings);
    if (full) {
        write_pipeline_outputs(r, dir);
    } else {
        auto t = open_out(dir / "trajectory_target.csv");
        write_trajectory_csv(t, r.rec3);
        auto m = open_out(dir / "metrics.csv");
        m << "stage,metric,value\n";
        for (const auto& row : r.metrics) {
            if (row.stage == "entangle") m << row.stage << ',' << row.name << ',' << fmt(row.value) << '\n';
        }
    }
    for (const auto& row : r.metrics) {
        if (full || row.stage == "entangle") out << row.stage << ' ' << row.name << ' ' << fmt(row.value) << '\n';
    }
    for (const auto& w : r.warnings) err << "warning: " << w << '\n';
    return kOk;
}

int cmd_sweep_lambda(const Common& c, ExperimentConfig cfg, const std::string& values, std::ostream& out) {
    finish_config(cfg);
    const std::vector<double> lambdas = parse_list(values, "--values");
    for (double l : lambdas) {
        if (!(l >= 0.0 && l <= 0.5)) throw Failure{kValidation, "config", "--values: lambda0 must lie in [0, 0.5]"};
    }
    const fs::path dir = prepare_out(c, cfg);
    const fs::path csv = dir / "sweep_lambda.csv";
    const std::string want = "lambda0,psnr_1,psnr_2,merge_step";
    std::string header;
    auto rows = c.resume ? completed_rows(csv, 1, header) : std::map<std::string, std::string>{};
    if (!rows.empty() && header != want) throw Failure{kValidation, "cli", csv.string() + ": unexpected header"};
    const bool fresh = rows.empty();
    auto f = open_out(csv, !fresh);
    if (fresh) f << want << '\n';
    std::vector<std::string> keys;
    for (double l : lambdas) {
        const std::string key = fmt(l);
        keys.push_back(key);
        if (rows.count(key)) {
            out << "lambda0 " << key << " done, skipped\n";
            continue;
        }
        ExperimentConfig point = cfg;
        point.lambda0 = l;
        const PipelineResult r = run_editedid(point);
        const std::string line = key + ',' + fmt(r.stability1.psnr_db) + ',' + fmt(r.stability2.psnr_db) + ',' +
                                 std::to_string(r.aligned.merge_step);
        f << line << '\n';
        f.flush();
        rows.emplace(key, line);
        out << line << '\n';
    }
    std::vector<double> xs;
    for (const auto& k : keys) xs.push_back(std::strtod(k.c_str(), nullptr));
    emit_plot({{"identity 1", xs, column(rows, keys, 1)}, {"identity 2", xs, column(rows, keys, 2)}},
              {"Reconstruction PSNR vs initial mixing weight", "lambda0", "PSNR (dB)"}, dir / "sweep_lambda.svg");
    return kOk;
}

int cmd_sweep_dpm_range(const Common& c, ExperimentConfig cfg, const std::string& windows, std::ostream& out) {
    finish_config(cfg);
    std::vector<std::pair<std::size_t, std::size_t>> list;
    if (windows.empty()) {
        for (std::size_t a = 0; a < cfg.steps; ++a) {
            for (std::size_t b = a; b < cfg.steps; ++b) list.emplace_back(a, b);
        }
    } else {
        std::stringstream ss(windows);
        std::string item;
        while (std::getline(ss, item, ',')) {
            unsigned a = 0;
            unsigned b = 0;
            char colon = 0;
            std::istringstream is(item);
            if (!(is >> a >> colon >> b) || colon != ':') {
                throw Failure{kUsage, "cli", "--windows: expected s1:s2, got '" + item + "'"};
            }
            list.emplace_back(a, b);
        }
    }
    const fs::path dir = prepare_out(c, cfg);
    const fs::path csv = dir / "sweep_dpm_range.csv";
    const std::string want = "s1,s2,psnr_1,psnr_2,max_jump_1,max_jump_2";
    std::string header;
    auto rows = c.resume ? completed_rows(csv, 2, header) : std::map<std::string, std::string>{};
    if (!rows.empty() && header != want) throw Failure{kValidation, "cli", csv.string() + ": unexpected header"};
    const bool fresh = rows.empty();
    auto f = open_out(csv, !fresh);
    if (fresh) f << want << '\n';
    const NoiseSchedule schedule = build_noise_schedule();
    std::vector<std::string> keys;
    for (const auto& [a, b] : list) {
        const std::string key = std::to_string(a) + ',' + std::to_string(b);
        if (rows.count(key)) {
            keys.push_back(key);
            continue;
        }
        ExperimentConfig point = cfg;
        point.s1 = a;
        point.s2 = b;
        HybridPlan plan;
        try {
            point.validate();
            plan = make_plan(point);
        } catch (const Error& e) {
            out << "window " << a << ':' << b << " skipped: " << e.what() << '\n';
            continue;
        }
        keys.push_back(key);
        SamplerOptions sopt;
        sopt.dpm_order = point.dpm_order;
        std::string line = key;
        std::string jumps;
        for (int k = 0; k < 2; ++k) {
            const Identity id = make_identity(point, schedule, k);
            const std::vector<Embedding> e(plan.size(), id.conditional);
            const auto inv = run_trajectory(plan, schedule, *id.predictor, id.source, e, Direction::Inversion, sopt);
            const auto rec = run_trajectory(plan, schedule, *id.predictor, inv.final_latent(), e,
                                            Direction::Reconstruction, sopt);
            const auto rep = stability_report(inv, rec, id.source);
            line += ',' + fmt(rep.psnr_db);
            jumps += ',' + fmt(rep.max_jump);
        }
        line += jumps;
        f << line << '\n';
        f.flush();
        rows.emplace(key, line);
        out << line << '\n';
    }
    if (!keys.empty()) {
        std::vector<double> xs;
        for (std::size_t i = 0; i < keys.size(); ++i) xs.push_back(static_cast<double>(i));
        emit_plot({{"identity 1", xs, column(rows, keys, 2)}, {"identity 2", xs, column(rows, keys, 3)}},
                  {"Reconstruction PSNR per DPM window", "window index (see CSV)", "PSNR (dB)"},
                  dir / "sweep_dpm_range.svg");
    }
    return kOk;
}

int cmd_sweep_what(const Common& c, ExperimentConfig cfg, const std::string& values, const std::string& scenario,
                   std::ostream& out) {
    finish_config(cfg);
    std::vector<double> ws;
    if (values.empty()) {
        for (int i = 0; i <= 20; ++i) ws.push_back(i / 20.0);
    } else {
        ws = parse_list(values, "--values");
    }
    for (double w : ws) {
        if (!(w >= 0.0 && w <= 1.0)) throw Failure{kValidation, "config", "--values: w_hat must lie in [0, 1]"};
    }
    std::vector<OverlapScenario> scenarios;
    if (scenario == "coexistence" || scenario == "both") scenarios.push_back({"coexistence", 0.5, 0.5});
    if (scenario == "coverage" || scenario == "both") scenarios.push_back({"coverage", 0.3, 0.7});
    if (scenarios.empty()) throw Failure{kUsage, "cli", "--scenario: expected coexistence, coverage or both"};
    const fs::path dir = prepare_out(c, cfg);
    auto f = open_out(dir / "sweep_what.csv");
    f << "scenario,w_hat,share_1,share_2,score\n";
    std::vector<PlotSeries> series;
    for (const auto& sc : scenarios) {
        PlotSeries s{sc.name, {}, {}};
        const auto pts = what_sweep(sc, ws);
        const WhatSweepPoint* best = &pts.front();
        for (const auto& p : pts) {
            f << sc.name << ',' << fmt(p.w_hat) << ',' << fmt(p.share1) << ',' << fmt(p.share2) << ','
              << fmt(p.score) << '\n';
            s.x.push_back(p.w_hat);
            s.y.push_back(p.score);
            if (p.score > best->score) best = &p;
        }
        out << sc.name << " best w_hat " << fmt(best->w_hat) << " score " << fmt(best->score) << '\n';
        series.push_back(std::move(s));
    }
    emit_plot(series, {"Retention score vs overlap weight", "w_hat", "score"}, dir / "sweep_what.svg");
    return kOk;
}

HybridPlan open_interval_plan(std::size_t steps, Solver solver) {
    // `steps` steps between the first and last grid level, no final jump to 0
    HybridPlan plan = uniform_plan(steps + 1, solver);
    plan.timesteps.pop_back();
    plan.solver_tags.pop_back();
    plan.targets.pop_back();
    if (solver == Solver::Dpm) plan.s2 = steps - 1;
    return plan;
}

int cmd_bench_solver(const Common& c, ExperimentConfig cfg, const std::string& values, int repeats,
                     std::ostream& out) {
    finish_config(cfg);
    const std::vector<double> ts = parse_list(values, "--T-values");
    for (double t : ts) {
        if (!(t >= 2.0 && t == std::floor(t))) throw Failure{kValidation, "config", "--T-values: need integers >= 2"};
    }
    if (repeats < 1) throw Failure{kValidation, "config", "--repeats must be >= 1"};
    const fs::path dir = prepare_out(c, cfg);
    const NoiseSchedule schedule = build_noise_schedule();
    const Identity id = make_identity(cfg, schedule, 0);
    auto f = open_out(dir / "bench_solver.csv");
    f << "solver,T,error,order,microseconds\n";
    std::vector<PlotSeries> series;
    for (Solver solver : {Solver::Ddim, Solver::Dpm}) {
        PlotSeries s{to_string(solver), {}, {}};
        double prev_err = 0.0;
        double prev_t = 0.0;
        for (double tv : ts) {
            const auto T = static_cast<std::size_t>(tv);
            const HybridPlan plan = open_interval_plan(T, solver);
            const std::vector<Embedding> e(T, id.conditional);
            SamplerOptions sopt;
            sopt.dpm_order = cfg.dpm_order;
            const Latent z = id.predictor->exact_flow(id.source, 0.0, plan.timesteps.front(), id.conditional);
            Trajectory rec;
            const auto t0 = std::chrono::steady_clock::now();
            for (int r = 0; r < repeats; ++r) {
                rec = run_trajectory(plan, schedule, *id.predictor, z, e, Direction::Reconstruction, sopt);
            }
            const double us =
                std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - t0).count() / repeats;
            const Latent ref = id.predictor->exact_flow(z, plan.timesteps.front(), plan.targets.back(), id.conditional);
            const double err = (rec.final_latent() - ref).norm() / ref.norm();
            const double order = prev_err > 0.0 ? std::log(prev_err / err) / std::log(tv / prev_t) : NAN;
            f << to_string(solver) << ',' << T << ',' << fmt(err) << ',' << (std::isnan(order) ? "" : fmt(order))
              << ',' << fmt(us) << '\n';
            out << to_string(solver) << " T=" << T << " error " << fmt(err) << '\n';
            s.x.push_back(std::log2(tv));
            s.y.push_back(std::log10(err));
            prev_err = err;
            prev_t = tv;
        }
        series.push_back(std::move(s));
    }
    emit_plot(series, {"Solver error against the exact flow", "log2 T", "log10 relative error"},
              dir / "bench_solver.svg");
    return kOk;
}

int cmd_batch(const Common& c, ExperimentConfig cfg, const std::vector<std::string>& paths, int count, int workers,
              bool verify, std::ostream& out, std::ostream& err) {
    if (workers < 1) throw Failure{kValidation, "config", "--workers must be >= 1"};
    std::vector<ExperimentConfig> configs;
    std::vector<std::string> errors;
    if (!paths.empty()) {
        for (const auto& p : paths) {
            try {
                ExperimentConfig item = load_config(p);
                apply_seed_overrides(item, c.seed);
                configs.push_back(item);
                errors.emplace_back();
            } catch (const Error& e) {
                configs.push_back(cfg);
                errors.push_back(e.what());
            }
        }
    } else {
        if (count < 1) throw Failure{kValidation, "config", "--count must be >= 1"};
        for (int i = 0; i < count; ++i) {
            ExperimentConfig item = cfg;
            item.seed = cfg.seed + static_cast<std::uint64_t>(i);
            configs.push_back(item);
            errors.emplace_back();
        }
    }
    const fs::path dir = prepare_out(c, cfg);
    std::vector<ExperimentConfig> runnable;
    std::vector<std::size_t> index;
    for (std::size_t i = 0; i < configs.size(); ++i) {
        if (errors[i].empty()) {
            runnable.push_back(configs[i]);
            index.push_back(i);
        }
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto results = run_parallel_batch(runnable, workers);
    const double wall = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    auto f = open_out(dir / "batch.csv");
    f << "item,seed,status,stage,message\n";
    int failures = 0;
    std::vector<const BatchItem*> by_item(configs.size(), nullptr);
    for (std::size_t j = 0; j < index.size(); ++j) by_item[index[j]] = &results[j];
    for (std::size_t i = 0; i < configs.size(); ++i) {
        const BatchItem* b = by_item[i];
        std::string stage = b ? b->error_stage : "config";
        std::string msg = b ? b->error : errors[i];
        const bool ok = b && b->result.has_value();
        if (ok) {
            write_pipeline_outputs(*b->result, dir / ("item_" + std::to_string(i)));
        } else {
            ++failures;
            err << "ERROR " << stage << " item " << i << ": " << msg << '\n';
        }
        for (char& ch : msg) {
            if (ch == ',' || ch == '\n') ch = ';';
        }
        f << i << ',' << configs[i].seed << ',' << (ok ? "ok" : "error") << ',' << (ok ? "" : stage) << ','
          << (ok ? "" : msg) << '\n';
    }
    char buf[128];
    std::snprintf(buf, sizeof buf, "batch: %zu items, %d failed, %d workers, wall %.1f ms\n", configs.size(),
                  failures, workers, wall);
    out << buf;
    if (verify) {
        bool same = true;
        const auto s0 = std::chrono::steady_clock::now();
        for (std::size_t j = 0; j < runnable.size(); ++j) {
            if (!results[j].result) continue;
            same = same && bitwise_equal(*results[j].result, run_editedid(runnable[j]));
        }
        const double seq = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - s0).count();
        std::snprintf(buf, sizeof buf, "sequential: wall %.1f ms, parallel bitwise equal: %s\n", seq,
                      same ? "yes" : "no");
        out << buf;
        if (!same) throw Failure{kRuntime, "batch", "parallel results differ from sequential execution"};
    }
    return failures == 0 ? kOk : kRuntime;
}

void add_common(CLI::App* sub, Common& c, bool needs_out) {
    sub->add_option("-c,--config", c.config, "JSON experiment config");
    auto* o = sub->add_option("-o,--out", c.out, "Output directory");
    if (needs_out) o->required();
    sub->add_option("--seed", c.seed, "Seed override (beats EDITEDID_SEED and the config)");
    sub->add_flag("--force", c.force, "Write into an existing output directory");
    sub->add_flag("--resume", c.resume, "Continue a sweep, skipping completed points");
    sub->add_flag("-v,--verbose", c.verbose, "Report stage timings on stderr");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Diffusion trajectory lab: hybrid solvers, dual-source alignment, null-text schedules and gated "
                 "attention on analytic oracles",
                 "trajlab"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");
    Common c;

    std::optional<std::size_t> T;
    std::optional<std::size_t> s1;
    std::optional<std::size_t> s2;
    std::string convention;
    std::string layout;
    auto* schedule = app.add_subcommand("schedule", "Print or write the hybrid timestep plan");
    add_common(schedule, c, false);
    for (auto* sub : {schedule}) {
        sub->add_option("--T", T, "Number of steps");
        sub->add_option("--s1", s1, "First DPM step");
        sub->add_option("--s2", s2, "Last DPM step");
        sub->add_option("--convention", convention, "FROM_DATA or FROM_NOISE");
        sub->add_option("--layout", layout, "global or fragmented");
    }
    auto* invert = app.add_subcommand("invert", "Invert both source latents");
    add_common(invert, c, true);
    auto* reconstruct = app.add_subcommand("reconstruct", "Invert and reconstruct each source independently");
    add_common(reconstruct, c, true);
    auto* align = app.add_subcommand("align", "Dual inversion with adaptive mixing");
    add_common(align, c, true);
    auto* nulltext = app.add_subcommand("nulltext", "Align, then optimize per-step null embeddings");
    add_common(nulltext, c, true);
    auto* entangle = app.add_subcommand("entangle", "Full run, writing the gated target path");
    add_common(entangle, c, true);
    auto* pipeline = app.add_subcommand("pipeline", "Full run with every output");
    add_common(pipeline, c, true);

    std::string lambda_values = "0.02,0.04,0.06,0.08,0.1,0.3,0.5";
    auto* sweep_lambda = app.add_subcommand("sweep-lambda", "Reconstruction PSNR over initial mixing weights");
    add_common(sweep_lambda, c, true);
    sweep_lambda->add_option("--values", lambda_values, "Comma-separated lambda0 values");

    std::string windows;
    auto* sweep_dpm = app.add_subcommand("sweep-dpm-range", "Reconstruction quality per DPM window");
    add_common(sweep_dpm, c, true);
    sweep_dpm->add_option("--windows", windows, "Comma-separated s1:s2 pairs (default: all)");

    std::string what_values;
    std::string scenario = "both";
    auto* sweep_what = app.add_subcommand("sweep-what", "Overlap weight sweep on synthetic maps");
    add_common(sweep_what, c, true);
    sweep_what->add_option("--values", what_values, "Comma-separated w_hat values (default 0, 0.05, ..., 1)");
    sweep_what->add_option("--scenario", scenario, "coexistence, coverage or both");

    std::string t_values = "5,10,20,40";
    int repeats = 20;
    auto* bench = app.add_subcommand("bench-solver", "Error and cost of each solver against the exact flow");
    add_common(bench, c, true);
    bench->add_option("--T-values", t_values, "Comma-separated step counts");
    bench->add_option("--repeats", repeats, "Timing repetitions");

    std::vector<std::string> batch_configs;
    int count = 4;
    int workers = 1;
    bool verify = false;
    auto* batch = app.add_subcommand("batch", "Independent pipelines on a worker pool");
    add_common(batch, c, true);
    batch->add_option("--configs", batch_configs, "Config files, one item each")->delimiter(',');
    batch->add_option("--count", count, "Items derived from --config with seeds seed, seed+1, ...");
    batch->add_option("--workers", workers, "Worker threads");
    batch->add_flag("--verify", verify, "Re-run sequentially and compare bitwise");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        std::string msg = e.what();
        for (char& ch : msg) {
            if (ch == '\n') ch = ' ';
        }
        err << "ERROR cli " << msg << '\n';
        return kUsage;
    }
    for (auto* sub : app.get_subcommands()) {
        if (sub->get_help_ptr() != nullptr && sub->get_help_ptr()->count() > 0) {
            out << sub->help();
            return kOk;
        }
    }

    try {
        ExperimentConfig cfg;
        try {
            cfg = resolve_config(c);
            if (T) cfg.steps = *T;
            if (s1) cfg.s1 = *s1;
            if (s2) cfg.s2 = *s2;
            if (!convention.empty()) cfg.convention = convention_from_string(convention);
            if (!layout.empty()) {
                if (layout != "global" && layout != "fragmented") {
                    throw Error(ErrorCode::Config, "--layout: expected global or fragmented");
                }
                cfg.layout = layout == "global" ? PlanLayout::Global : PlanLayout::Fragmented;
            }
        } catch (const Error& e) {
            throw Failure{kValidation, "config", e.what()};
        }
        try {
            if (schedule->parsed()) {
                ExperimentConfig check = cfg;
                finish_config(check);
            } else if (!batch->parsed()) {
                ExperimentConfig check = cfg;
                finish_config(check);
            }
        } catch (const Error& e) {
            throw Failure{kValidation, "config", e.what()};
        }
        if (schedule->parsed()) return cmd_schedule(c, cfg, out);
        if (invert->parsed()) return cmd_invert(c, cfg, false, out);
        if (reconstruct->parsed()) return cmd_invert(c, cfg, true, out);
        if (align->parsed()) return cmd_align(c, cfg, out, err);
        if (nulltext->parsed()) return cmd_nulltext(c, cfg, out);
        if (entangle->parsed()) return cmd_pipeline(c, cfg, false, out, err);
        if (pipeline->parsed()) return cmd_pipeline(c, cfg, true, out, err);
        if (sweep_lambda->parsed()) return cmd_sweep_lambda(c, cfg, lambda_values, out);
        if (sweep_dpm->parsed()) return cmd_sweep_dpm_range(c, cfg, windows, out);
        if (sweep_what->parsed()) return cmd_sweep_what(c, cfg, what_values, scenario, out);
        if (bench->parsed()) return cmd_bench_solver(c, cfg, t_values, repeats, out);
        if (batch->parsed()) return cmd_batch(c, cfg, batch_configs, count, workers, verify, out, err);
        throw Failure{kUsage, "cli", "no subcommand"};
    } catch (const Failure& f) {
        err << "ERROR " << f.stage << ' ' << f.message << '\n';
        return f.code;
    } catch (const StageError& e) {
        err << "ERROR " << e.stage() << ' ' << e.what() << '\n';
        return e.code() == ErrorCode::Config ? kValidation : kRuntime;
    } catch (const Error& e) {
        err << "ERROR " << to_string(e.code()) << ' ' << e.what() << '\n';
        return e.code() == ErrorCode::Config ? kValidation : kRuntime;
    } catch (const std::exception& e) {
        err << "ERROR runtime " << e.what() << '\n';
        return kRuntime;
    }
}

}  // namespace trajlab::cli
