// Copyright (C) 2026 The trajlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace trajlab {

struct PlotSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

struct PlotLabels {
    std::string title;
    std::string x_label;
    std::string y_label;
};

/// SVG line plot with axes, tick labels and a legend. Output is a pure function
/// of the inputs. Non-finite points are left out of the drawing.
std::string render_plot(const std::vector<PlotSeries>& series, const PlotLabels& labels);

/// Renders first, so nothing is written when the input is rejected.
void emit_plot(const std::vector<PlotSeries>& series, const PlotLabels& labels, const std::filesystem::path& path);

}  // namespace trajlab
