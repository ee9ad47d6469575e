#include "dapper/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace dapper::report {

Image image_grid(const std::vector<Image>& tiles, int cols, float separator) {
    if (tiles.empty()) throw std::invalid_argument("image_grid: no tiles");
    const int h = tiles[0].height, w = tiles[0].width, c = tiles[0].channels;
    const int rows = (int(tiles.size()) + cols - 1) / cols;
    Image grid(rows * h + (rows - 1), cols * w + (cols - 1), c, separator);
    for (size_t i = 0; i < tiles.size(); ++i) {
        const int r = int(i) / cols, col = int(i) % cols;
        const int oy = r * (h + 1), ox = col * (w + 1);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int ch = 0; ch < c; ++ch)
                    grid.at(oy + y, ox + x, ch) = tiles[i].at(y, x, ch);
    }
    return grid;
}

namespace {

std::string fmt(double v, int precision = 2) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
    return buf;
}

const char* policy_color(const std::string& policy) {
    if (policy == "none") return "#555555";
    if (policy == "perturb") return "#c03030";
    if (policy == "traverse") return "#2060c0";
    if (policy == "affine") return "#2f8f4f";
    return "#999999";
}

}  // namespace

std::string sweep_curves_svg(const eval::SweepReport& report) {
    constexpr int W = 640, H = 420;
    constexpr int L = 70, R = 20, T = 30, B = 60;  // margins
    const double plot_w = W - L - R, plot_h = H - T - B;

    std::vector<float> fr = report.fractions;
    std::sort(fr.begin(), fr.end());

    // y range from observed accuracies with padding
    double lo = 1.0, hi = 0.0;
    for (const auto& r : report.rows) {
        if (r.failed) continue;
        lo = std::min(lo, r.accuracy);
        hi = std::max(hi, r.accuracy);
    }
    if (lo > hi) {
        lo = 0.0;
        hi = 1.0;
    }
    lo = std::max(0.0, lo - 0.05);
    hi = std::min(1.0, hi + 0.05);

    auto xpos = [&](double fraction) {
        const double f0 = fr.front(), f1 = fr.back();
        const double t = f1 > f0 ? (fraction - f0) / (f1 - f0) : 0.5;
        return L + t * plot_w;
    };
    auto ypos = [&](double acc) { return T + (1.0 - (acc - lo) / (hi - lo)) * plot_h; };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(W) + "\" height=\"" +
           std::to_string(H) + "\" viewBox=\"0 0 " + std::to_string(W) + " " + std::to_string(H) +
           "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + fmt(W / 2.0, 0) +
           "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">classifier accuracy vs real-data "
           "fraction</text>\n";

    // axes
    svg += "<line x1=\"" + fmt(L) + "\" y1=\"" + fmt(T) + "\" x2=\"" + fmt(L) + "\" y2=\"" +
           fmt(H - B) + "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + fmt(L) + "\" y1=\"" + fmt(H - B) + "\" x2=\"" + fmt(W - R) + "\" y2=\"" +
           fmt(H - B) + "\" stroke=\"black\"/>\n";
    for (float f : fr) {
        svg += "<text x=\"" + fmt(xpos(f)) + "\" y=\"" + fmt(H - B + 18.0) +
               "\" text-anchor=\"middle\" font-size=\"11\">" + fmt(f, 1) + "</text>\n";
    }
    for (int i = 0; i <= 4; ++i) {
        const double acc = lo + (hi - lo) * i / 4.0;
        svg += "<text x=\"" + fmt(L - 8.0) + "\" y=\"" + fmt(ypos(acc) + 4.0) +
               "\" text-anchor=\"end\" font-size=\"11\">" + fmt(acc) + "</text>\n";
        svg += "<line x1=\"" + fmt(L) + "\" y1=\"" + fmt(ypos(acc)) + "\" x2=\"" + fmt(W - R) +
               "\" y2=\"" + fmt(ypos(acc)) + "\" stroke=\"#dddddd\"/>\n";
    }
    svg += "<text x=\"" + fmt(W / 2.0, 0) + "\" y=\"" + fmt(H - 15.0) +
           "\" text-anchor=\"middle\" font-size=\"12\">fraction of real training data per "
           "class</text>\n";

    int legend_y = T + 10;
    for (const auto& policy : report.policies) {
        const char* color = policy_color(policy);
        std::string points;
        for (float f : fr) {
            bool have = false;
            for (const auto& r : report.rows)
                if (!r.failed && r.policy == policy && std::abs(r.fraction - f) < 1e-6) have = true;
            if (!have) continue;
            const double mean = report.cell_mean(f, policy);
            const double sd = report.cell_std(f, policy);
            points += fmt(xpos(f)) + "," + fmt(ypos(mean)) + " ";
            svg += "<line x1=\"" + fmt(xpos(f)) + "\" y1=\"" + fmt(ypos(mean - sd)) + "\" x2=\"" +
                   fmt(xpos(f)) + "\" y2=\"" + fmt(ypos(mean + sd)) + "\" stroke=\"" + color +
                   "\" stroke-width=\"1\" opacity=\"0.6\"/>\n";
            svg += "<circle cx=\"" + fmt(xpos(f)) + "\" cy=\"" + fmt(ypos(mean)) +
                   "\" r=\"3\" fill=\"" + color + "\"/>\n";
        }
        if (!points.empty())
            svg += "<polyline points=\"" + points + "\" fill=\"none\" stroke=\"" + color +
                   "\" stroke-width=\"2\"/>\n";
        svg += "<rect x=\"" + fmt(W - R - 150.0) + "\" y=\"" + fmt(legend_y - 9.0) +
               "\" width=\"12\" height=\"12\" fill=\"" + std::string(color) + "\"/>\n";
        svg += "<text x=\"" + fmt(W - R - 132.0) + "\" y=\"" + fmt(legend_y + 1.0) +
               "\" font-size=\"12\">" + policy + "</text>\n";
        legend_y += 18;
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace dapper::report
