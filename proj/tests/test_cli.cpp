// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "trajlab/cli.hpp"
#include "trajlab/common.hpp"
#include "trajlab/plot.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code = 0;
    std::string out;
    std::string err;
};

CliRun cli(std::vector<std::string> args) {
    args.insert(args.begin(), "trajlab");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out;
    std::ostringstream err;
    CliRun r;
    r.code = trajlab::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("trajlab_cli_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t count(const std::string& hay, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
    return n;
}

}  // namespace

TEST(Cli, NoSubcommandIsUsageError) {
    const CliRun r = cli({});
    EXPECT_EQ(r.code, trajlab::cli::kUsage);
    EXPECT_EQ(r.err.rfind("ERROR cli ", 0), 0u);
}

TEST(Cli, UnknownFlagIsUsageError) {
    EXPECT_EQ(cli({"schedule", "--bogus"}).code, trajlab::cli::kUsage);
}

TEST(Cli, HelpSucceeds) {
    const CliRun r = cli({"--help"});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("sweep-lambda"), std::string::npos);
}

TEST(Cli, ScheduleToStdout) {
    const CliRun r = cli({"schedule", "--T", "6", "--s1", "1", "--s2", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream in(r.out);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "step_index,timestep,solver_tag");
    std::vector<std::string> tags;
    while (std::getline(in, line)) tags.push_back(line.substr(line.rfind(',') + 1));
    // window counted from the data end
    EXPECT_EQ(tags, (std::vector<std::string>{"DDIM", "DDIM", "DPM", "DPM", "DPM", "DDIM"}));
}

TEST(Cli, InvalidWindowIsValidationError) {
    const CliRun r = cli({"schedule", "--T", "6", "--s1", "4", "--s2", "2"});
    EXPECT_EQ(r.code, trajlab::cli::kValidation);
    EXPECT_EQ(r.err.rfind("ERROR config ", 0), 0u) << r.err;
}

TEST(Cli, MissingConfigNamesPath) {
    const CliRun r = cli({"pipeline", "--config", "/nonexistent/x.json", "--out", scratch("missing").string()});
    EXPECT_EQ(r.code, trajlab::cli::kValidation);
    EXPECT_NE(r.err.find("ERROR config /nonexistent/x.json not found"), std::string::npos) << r.err;
}

TEST(Cli, BadConfigKeyIsNamed) {
    const fs::path dir = scratch("badkey");
    fs::create_directories(dir);
    std::ofstream(dir / "c.json") << R"({"align": {"lambda0": 0.9}})";
    const CliRun r = cli({"align", "--config", (dir / "c.json").string(), "--out", (dir / "o").string()});
    EXPECT_EQ(r.code, trajlab::cli::kValidation);
    EXPECT_NE(r.err.find("align.lambda0"), std::string::npos) << r.err;
    EXPECT_FALSE(fs::exists(dir / "o"));
}

TEST(Cli, OutIsRequired) {
    EXPECT_EQ(cli({"pipeline"}).code, trajlab::cli::kUsage);
}

TEST(Cli, PipelineWritesResolvedConfigAndOutputs) {
    const fs::path dir = scratch("pipeline");
    const CliRun r = cli({"pipeline", "--out", dir.string(), "--seed", "11"});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* f : {"config_resolved.json", "metrics.csv", "trajectory_target.csv", "alignment.csv",
                          "null_1.txt", "null_2.txt", "stability.csv", "summary.txt"}) {
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    }
    EXPECT_NE(slurp(dir / "config_resolved.json").find("\"seed\": 11"), std::string::npos);
}

TEST(Cli, RefusesNonEmptyOutputUnlessForced) {
    const fs::path dir = scratch("refuse");
    fs::create_directories(dir);
    std::ofstream(dir / "keep.txt") << "x";
    const CliRun refused = cli({"align", "--out", dir.string()});
    EXPECT_EQ(refused.code, trajlab::cli::kValidation);
    EXPECT_NE(refused.err.find("--force"), std::string::npos);
    EXPECT_FALSE(fs::exists(dir / "alignment.csv"));
    EXPECT_EQ(cli({"align", "--out", dir.string(), "--force"}).code, 0);
    EXPECT_TRUE(fs::exists(dir / "alignment.csv"));
    EXPECT_TRUE(fs::exists(dir / "config_resolved.json"));
}

TEST(Cli, SubcommandsProduceTheirFiles) {
    struct Case {
        std::vector<std::string> args;
        std::vector<std::string> files;
    };
    const std::vector<Case> cases{
        {{"invert"}, {"trajectory_inversion_1.csv", "trajectory_inversion_2.csv"}},
        {{"reconstruct"}, {"trajectory_reconstruction_1.csv", "stability.csv"}},
        {{"nulltext"}, {"nulltext.csv", "null_1.txt", "null_2.txt"}},
        {{"entangle"}, {"trajectory_target.csv", "metrics.csv"}},
        {{"sweep-what", "--values", "0,0.5,1"}, {"sweep_what.csv", "sweep_what.svg"}},
        {{"sweep-dpm-range", "--windows", "1:3,0:5"}, {"sweep_dpm_range.csv"}},
        {{"bench-solver", "--T-values", "5,10", "--repeats", "1"}, {"bench_solver.csv", "bench_solver.svg"}},
    };
    int i = 0;
    for (const auto& c : cases) {
        const fs::path dir = scratch("sub" + std::to_string(i++));
        auto args = c.args;
        args.insert(args.end(), {"--out", dir.string()});
        const CliRun r = cli(args);
        ASSERT_EQ(r.code, 0) << c.args[0] << ": " << r.err;
        for (const auto& f : c.files) EXPECT_TRUE(fs::exists(dir / f)) << c.args[0] << " " << f;
    }
}

TEST(Cli, SweepLambdaResumeSkipsCompletedPoints) {
    const fs::path dir = scratch("resume");
    const CliRun first = cli({"sweep-lambda", "--values", "0.02,0.1", "--out", dir.string()});
    ASSERT_EQ(first.code, 0) << first.err;
    const std::string before = slurp(dir / "sweep_lambda.csv");
    EXPECT_EQ(count(before, "\n"), 3u);

    const CliRun second = cli({"sweep-lambda", "--values", "0.02,0.1,0.3", "--out", dir.string(), "--resume"});
    ASSERT_EQ(second.code, 0) << second.err;
    EXPECT_EQ(count(second.out, "skipped"), 2u);
    const std::string after = slurp(dir / "sweep_lambda.csv");
    EXPECT_EQ(after.substr(0, before.size()), before);
    EXPECT_EQ(count(after, "\n"), 4u);

    const std::string svg = slurp(dir / "sweep_lambda.svg");
    EXPECT_EQ(count(svg, "class=\"marker\""), 6u);
}

TEST(Cli, SweepLambdaRejectsOutOfRangeValue) {
    const CliRun r = cli({"sweep-lambda", "--values", "0.7", "--out", scratch("lam").string()});
    EXPECT_EQ(r.code, trajlab::cli::kValidation);
}

TEST(Cli, BatchWritesPerItemDirectories) {
    const fs::path dir = scratch("batch");
    const CliRun r = cli({"batch", "--count", "2", "--workers", "2", "--verify", "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "item_0" / "metrics.csv"));
    EXPECT_TRUE(fs::exists(dir / "item_1" / "metrics.csv"));
    EXPECT_NE(r.out.find("bitwise equal: yes"), std::string::npos);
    EXPECT_EQ(count(slurp(dir / "batch.csv"), ",ok,"), 2u);
}

TEST(Cli, BatchIsolatesFailingItem) {
    const fs::path dir = scratch("batchfail");
    fs::create_directories(dir / "in");
    std::ofstream(dir / "in" / "good.json") << "{}";
    std::ofstream(dir / "in" / "bad.json") << R"({"align": {"lambda0": 0.9}})";
    const CliRun r = cli({"batch", "--configs", (dir / "in" / "good.json").string() + "," + (dir / "in" / "bad.json").string(),
                       "--out", (dir / "o").string()});
    EXPECT_EQ(r.code, trajlab::cli::kRuntime);
    EXPECT_NE(r.err.find("ERROR config item 1"), std::string::npos) << r.err;
    EXPECT_TRUE(fs::exists(dir / "o" / "item_0" / "metrics.csv"));
    EXPECT_FALSE(fs::exists(dir / "o" / "item_1"));
}

TEST(Plot, MarkersAndLegend) {
    const std::vector<double> x{0.02, 0.04, 0.06, 0.08, 0.1, 0.3, 0.5};
    const std::string svg = trajlab::render_plot({{"psnr", x, {20, 21, 22, 21.5, 21, 20, 19}},
                                                  {"other", {0.0, 1.0}, {1.0, 2.0}}},
                                                 {"t", "x", "y"});
    EXPECT_EQ(count(svg, "class=\"marker\""), 9u);
    EXPECT_EQ(count(svg, "class=\"legend\""), 2u);
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
}

TEST(Plot, SevenPointSeries) {
    const std::vector<double> x{0.02, 0.04, 0.06, 0.08, 0.1, 0.3, 0.5};
    const std::vector<double> y{1, 2, 3, 4, 5, 6, 7};
    const std::string svg = trajlab::render_plot({{"a", x, y}, {"b", x, y}}, {"t", "x", "y"});
    EXPECT_EQ(count(svg, "class=\"marker\""), 14u);
    EXPECT_EQ(count(svg, "class=\"legend\""), 2u);
}

TEST(Plot, EmptyDataErrorsWithoutWritingFile) {
    const fs::path dir = scratch("plot");
    fs::create_directories(dir);
    EXPECT_THROW(trajlab::emit_plot({}, {"t", "x", "y"}, dir / "a.svg"), trajlab::Error);
    EXPECT_THROW(trajlab::emit_plot({{"a", {}, {}}}, {"t", "x", "y"}, dir / "b.svg"), trajlab::Error);
    EXPECT_THROW(trajlab::emit_plot({{"a", {1.0}, {1.0, 2.0}}}, {"t", "x", "y"}, dir / "c.svg"), trajlab::Error);
    EXPECT_TRUE(fs::is_empty(dir));
}

TEST(Plot, ByteDeterministic) {
    const fs::path dir = scratch("plotdet");
    fs::create_directories(dir);
    const std::vector<trajlab::PlotSeries> s{{"a", {1, 2, 3}, {3, 1, 2}}};
    trajlab::emit_plot(s, {"t", "x", "y"}, dir / "a.svg");
    trajlab::emit_plot(s, {"t", "x", "y"}, dir / "b.svg");
    EXPECT_EQ(slurp(dir / "a.svg"), slurp(dir / "b.svg"));
}
