// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "trajlab/pipeline.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace trajlab;

namespace {

py::dict plan_dict(const HybridPlan& plan) {
    std::vector<std::string> tags;
    for (Solver s : plan.solver_tags) tags.emplace_back(to_string(s));
    py::dict d;
    d["timesteps"] = plan.timesteps;
    d["targets"] = plan.targets;
    d["solver_tags"] = tags;
    d["s1"] = plan.s1;
    d["s2"] = plan.s2;
    d["convention"] = to_string(plan.convention);
    d["layout"] = plan.layout == PlanLayout::Global ? "global" : "fragmented";
    return d;
}

SpatialMask as_mask(const Matrix& m) {
    SpatialMask out = constant_mask(static_cast<int>(m.rows()), static_cast<int>(m.cols()), 0.0);
    for (Eigen::Index y = 0; y < m.rows(); ++y) {
        for (Eigen::Index x = 0; x < m.cols(); ++x) out.values[y * m.cols() + x] = m(y, x);
    }
    return out;
}

Matrix trajectory_latents(const Trajectory& t) {
    Matrix out(static_cast<Eigen::Index>(t.steps.size()), t.steps.empty() ? 0 : t.steps.front().latent_after.size());
    for (std::size_t i = 0; i < t.steps.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = t.steps[i].latent_after;
    return out;
}

py::dict run_pipeline(const std::string& config_json) {
    const ExperimentConfig cfg = config_json.empty() ? default_config() : config_from_json_text(config_json);
    PipelineResult r;
    {
        py::gil_scoped_release release;
        r = run_editedid(cfg);
    }
    py::dict metrics;
    for (const auto& row : r.metrics) metrics[py::str(row.stage + "." + row.name)] = row.value;
    py::dict d;
    d["metrics"] = metrics;
    d["warnings"] = r.warnings;
    d["config_hash"] = r.config_hash;
    d["source1"] = r.source1;
    d["source2"] = r.source2;
    d["z_shared"] = r.z_shared;
    d["recon1"] = r.recon1;
    d["recon2"] = r.recon2;
    d["target"] = r.target;
    d["lambda_history"] = r.aligned.lambda_history;
    d["loss_history"] = r.aligned.loss_history;
    d["merge_step"] = r.aligned.merge_step;
    d["null_residuals_1"] = r.null1.residuals;
    d["null_residuals_2"] = r.null2.residuals;
    d["target_trajectory"] = trajectory_latents(r.rec3);
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Diffusion trajectory lab core";
    py::register_exception<Error>(m, "TrajlabError", PyExc_ValueError);

    m.def("alpha_bar", [](const std::vector<double>& t) {
        const NoiseSchedule s = build_noise_schedule();
        std::vector<double> out;
        for (double v : t) out.push_back(s.alpha_bar(v));
        return out;
    }, py::arg("t"), "Cumulative signal fraction at continuous levels t in [0, 1].");
    m.def("ddim_grid", [](std::size_t T) { return ddim_grid(T).values; }, py::arg("T"));
    m.def("dpm_grid", [](std::size_t T) { return dpm_grid(T).values; }, py::arg("T"));
    m.def(
        "hybrid_grid",
        [](std::size_t T, std::size_t s1, std::size_t s2, const std::string& convention, bool fragmented) {
            const IndexConvention c = convention_from_string(convention);
            return plan_dict(fragmented ? fragmented_plan(T, s1, s2, c) : hybrid_grid(T, s1, s2, c));
        },
        py::arg("T"), py::arg("s1"), py::arg("s2"), py::arg("convention") = "FROM_DATA", py::arg("fragmented") = false);

    m.def(
        "round_trip",
        [](const Vector& mu, const Vector& sigma, const Vector& x, std::size_t T, const std::string& solver) {
            const NoiseSchedule s = build_noise_schedule();
            GaussianOracle oracle({mu, sigma, Matrix()}, s);
            const HybridPlan plan = uniform_plan(T, solver_from_string(solver));
            const std::vector<Embedding> e(plan.size());
            const auto inv = run_trajectory(plan, s, oracle, x, e, Direction::Inversion);
            const auto rec = run_trajectory(plan, s, oracle, inv.final_latent(), e, Direction::Reconstruction);
            return py::make_tuple(Vector(inv.final_latent()), Vector(rec.final_latent()));
        },
        py::arg("mu"), py::arg("sigma"), py::arg("x"), py::arg("T"), py::arg("solver") = "DDIM",
        "Inverts x with a diagonal Gaussian oracle and reconstructs it; returns (noise latent, reconstruction).");

    m.def("psnr", [](const Vector& a, const Vector& b, double max_value) { return psnr(a, b, max_value); },
          py::arg("a"), py::arg("b"), py::arg("max_value"));
    m.def("cosine_sim", &cosine_sim, py::arg("a"), py::arg("b"));

    m.def(
        "fuse_self_attention",
        [](const Matrix& s1, const Matrix& s2, const Matrix& s3, const Matrix& m1, const Matrix& m2, double w_hat,
           const std::string& variant) {
            return fuse_self_attention(s1, s2, s3,
                                       compute_region_weights(as_mask(m1), as_mask(m2), w_hat,
                                                              overlap_variant_from_string(variant)));
        },
        py::arg("s1"), py::arg("s2"), py::arg("s3"), py::arg("mask1"), py::arg("mask2"), py::arg("w_hat") = 0.5,
        py::arg("variant") = "verbatim");
    m.def("replace_cross_attention", &replace_cross_attention, py::arg("a1"), py::arg("a2"), py::arg("a3"),
          py::arg("tokens1"), py::arg("tokens2"));
    m.def(
        "what_sweep",
        [](double demand1, double demand2, const std::vector<double>& w) {
            std::vector<std::pair<double, double>> out;
            for (const auto& p : what_sweep({"custom", demand1, demand2}, w)) out.emplace_back(p.w_hat, p.score);
            return out;
        },
        py::arg("demand1"), py::arg("demand2"), py::arg("w_values"));

    m.def("default_config_json", [] { return config_to_json_text(default_config()); });
    m.def("resolve_config_json", [](const std::string& text) { return config_to_json_text(config_from_json_text(text)); },
          py::arg("text"));
    m.def("run_pipeline", &run_pipeline, py::arg("config_json") = "",
          "Runs the full two-identity pipeline; an empty string uses the defaults.");
}
