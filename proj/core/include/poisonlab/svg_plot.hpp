#pragma once

#include <string>
#include <vector>

namespace poisonlab::plot {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

// Minimal dependency-free SVG charts for run reports.
std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<Series>& series);

std::string bar_chart(const std::string& title, const std::string& y_label,
                      const std::vector<std::string>& labels, const std::vector<double>& values);

void write_svg(const std::string& path, const std::string& svg);

}  // namespace poisonlab::plot
