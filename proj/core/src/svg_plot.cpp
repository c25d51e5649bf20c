#include "poisonlab/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "poisonlab/errors.hpp"

namespace poisonlab::plot {

namespace {

constexpr double kW = 640.0, kH = 420.0;
constexpr double kL = 70.0, kR = 20.0, kT = 50.0, kB = 60.0;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string esc(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

void header(std::ostringstream& os, const std::string& title) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
       << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << kW / 2 << "\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" "
          "font-size=\"16\">"
       << esc(title) << "</text>\n";
}

void axes(std::ostringstream& os, const std::string& x_label, const std::string& y_label,
          double y_min, double y_max) {
    os << "<line x1=\"" << kL << "\" y1=\"" << kH - kB << "\" x2=\"" << kW - kR << "\" y2=\""
       << kH - kB << "\" stroke=\"black\"/>\n"
       << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL << "\" y2=\"" << kH - kB
       << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        double frac = i / 4.0;
        double y = kH - kB - frac * (kH - kT - kB);
        double v = y_min + frac * (y_max - y_min);
        os << "<text x=\"" << kL - 8 << "\" y=\"" << y + 4
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(v)
           << "</text>\n";
        os << "<line x1=\"" << kL - 4 << "\" y1=\"" << y << "\" x2=\"" << kL << "\" y2=\"" << y
           << "\" stroke=\"black\"/>\n";
    }
    os << "<text x=\"" << (kL + kW - kR) / 2 << "\" y=\"" << kH - 12
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" << esc(x_label)
       << "</text>\n";
    os << "<text x=\"16\" y=\"" << (kT + kH - kB) / 2
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 16 "
       << (kT + kH - kB) / 2 << ")\">" << esc(y_label) << "</text>\n";
}

void span(const std::vector<double>& v, double& lo, double& hi) {
    for (double x : v) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
}

}  // namespace

std::string line_chart(const std::string& title, const std::string& x_label,
                       const std::string& y_label, const std::vector<Series>& series) {
    if (series.empty()) throw ConfigError("line_chart: no series");
    double x_lo = 1e300, x_hi = -1e300, y_lo = 1e300, y_hi = -1e300;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size() || s.x.empty())
            throw ConfigError("line_chart: malformed series " + s.label);
        span(s.x, x_lo, x_hi);
        span(s.y, y_lo, y_hi);
    }
    if (x_hi == x_lo) x_hi = x_lo + 1.0;
    if (y_hi == y_lo) y_hi = y_lo + 1.0;
    double pad = 0.05 * (y_hi - y_lo);
    y_lo -= pad;
    y_hi += pad;

    auto px = [&](double x) { return kL + (x - x_lo) / (x_hi - x_lo) * (kW - kL - kR); };
    auto py = [&](double y) { return kH - kB - (y - y_lo) / (y_hi - y_lo) * (kH - kT - kB); };

    std::ostringstream os;
    header(os, title);
    axes(os, x_label, y_label, y_lo, y_hi);
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = kPalette[si % 6];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            os << fmt(px(s.x[i])) << "," << fmt(py(s.y[i])) << " ";
        os << "\"/>\n";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            os << "<circle cx=\"" << fmt(px(s.x[i])) << "\" cy=\"" << fmt(py(s.y[i]))
               << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        os << "<text x=\"" << kW - kR - 6 << "\" y=\"" << kT + 16 + 16 * static_cast<double>(si)
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << color
           << "\">" << esc(s.label) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::string bar_chart(const std::string& title, const std::string& y_label,
                      const std::vector<std::string>& labels, const std::vector<double>& values) {
    if (labels.size() != values.size() || labels.empty())
        throw ConfigError("bar_chart: malformed input");
    double y_lo = std::min(0.0, *std::min_element(values.begin(), values.end()));
    double y_hi = std::max(0.0, *std::max_element(values.begin(), values.end()));
    if (y_hi == y_lo) y_hi = y_lo + 1.0;
    double pad = 0.05 * (y_hi - y_lo);
    if (y_lo < 0.0) y_lo -= pad;
    y_hi += pad;

    auto py = [&](double y) { return kH - kB - (y - y_lo) / (y_hi - y_lo) * (kH - kT - kB); };
    double slot = (kW - kL - kR) / static_cast<double>(labels.size());
    double bw = 0.6 * slot;

    std::ostringstream os;
    header(os, title);
    axes(os, "", y_label, y_lo, y_hi);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        double cx = kL + (static_cast<double>(i) + 0.5) * slot;
        double y0 = py(std::max(0.0, values[i]));
        double h = std::fabs(py(values[i]) - py(0.0));
        os << "<rect x=\"" << fmt(cx - bw / 2) << "\" y=\"" << fmt(y0) << "\" width=\"" << fmt(bw)
           << "\" height=\"" << fmt(h) << "\" fill=\"" << kPalette[0] << "\"/>\n";
        os << "<text x=\"" << fmt(cx) << "\" y=\"" << kH - kB + 16
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
           << esc(labels[i]) << "</text>\n";
        os << "<text x=\"" << fmt(cx) << "\" y=\"" << fmt(y0 - 4)
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
           << fmt(values[i]) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

void write_svg(const std::string& path, const std::string& svg) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << svg;
    if (!f) throw IoError("failed writing " + path);
}

}  // namespace poisonlab::plot
