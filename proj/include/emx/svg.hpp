/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "emx/segmenter.hpp"
#include "emx/trace.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace emx::svg {

struct PlotStyle {
    int width_px = 960;
    int height_px = 320;
    double stroke_width = 1.0;
    std::string title;
    std::string x_label = "sample";
    std::string y_label = "amplitude";
};

// Fixed-point formatting keeps the output byte-stable.
inline std::string num(double v, int decimals = 2) {
    if (!std::isfinite(v))
        v = 0.0;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    std::string s = buf;
    return s == "-0.00" || s == "-0.0" || s == "-0" ? s.substr(1) : s;
}

inline std::string escape(const std::string &s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

inline std::string header(int w, int h) {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(w) + "\" height=\"" +
           std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) + " " + std::to_string(h) +
           "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

inline std::string text(double x, double y, const std::string &s, const char *anchor = "middle",
                        const std::string &extra = {}) {
    return "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" text-anchor=\"" + anchor + "\"" + extra + ">" +
           escape(s) + "</text>\n";
}

/// Line plot of a trace. Long traces are reduced to a min/max pair per
/// pixel column so every excursion stays visible. Boundaries are drawn as
/// dashed red vertical lines.
inline std::string plot_trace(const Trace &trace, const PlotStyle &style = {},
                              const std::vector<seg::Boundary> &boundaries = {}) {
    const double left = 60, right = 20, top = 30, bottom = 45;
    const double pw = style.width_px - left - right, ph = style.height_px - top - bottom;
    const auto x = trace.view();
    const std::size_t n = x.size();
    auto [mn_it, mx_it] = std::minmax_element(x.begin(), x.end());
    double lo = *mn_it, hi = *mx_it;
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    auto px = [&](double i) { return left + (n > 1 ? i / static_cast<double>(n - 1) : 0.5) * pw; };
    auto py = [&](double v) { return top + (hi - v) / (hi - lo) * ph; };

    std::string points;
    const auto cols = static_cast<std::size_t>(std::max(1.0, pw));
    if (n <= 2 * cols) {
        for (std::size_t i = 0; i < n; ++i)
            points += num(px(static_cast<double>(i))) + "," + num(py(x[i])) + " ";
    } else {
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t b = c * n / cols, e = std::max(b + 1, (c + 1) * n / cols);
            auto [lo_it, hi_it] = std::minmax_element(x.begin() + static_cast<std::ptrdiff_t>(b),
                                                      x.begin() + static_cast<std::ptrdiff_t>(e));
            const bool low_first = lo_it < hi_it;
            const auto first = low_first ? lo_it : hi_it, second = low_first ? hi_it : lo_it;
            points += num(px(static_cast<double>(first - x.begin()))) + "," + num(py(*first)) + " ";
            points += num(px(static_cast<double>(second - x.begin()))) + "," + num(py(*second)) + " ";
        }
    }
    if (!points.empty())
        points.pop_back();

    std::string s = header(style.width_px, style.height_px);
    if (!style.title.empty())
        s += text(style.width_px / 2.0, 18, style.title, "middle", " font-size=\"14\"");
    s += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
         "\" fill=\"none\" stroke=\"#888\"/>\n";
    s += "<polyline fill=\"none\" stroke=\"#1f4e9c\" stroke-width=\"" + num(style.stroke_width) + "\" points=\"" +
         points + "\"/>\n";
    for (const auto &b : boundaries) {
        if (b.index >= n)
            continue;
        const double bx = px(static_cast<double>(b.index));
        s += "<line x1=\"" + num(bx) + "\" y1=\"" + num(top) + "\" x2=\"" + num(bx) + "\" y2=\"" + num(top + ph) +
             "\" stroke=\"#d62728\" stroke-width=\"1.00\" stroke-dasharray=\"5,4\"/>\n";
    }
    s += text(left, top + ph + 16, "0");
    s += text(left + pw, top + ph + 16, std::to_string(n - 1));
    s += text(left - 6, top + 4, num(hi, 4), "end");
    s += text(left - 6, top + ph, num(lo, 4), "end");
    s += text(left + pw / 2, style.height_px - 8.0, style.x_label);
    s += text(14, top + ph / 2, style.y_label, "middle",
              " transform=\"rotate(-90 14 " + num(top + ph / 2) + ")\"");
    return s + "</svg>\n";
}

/// White-to-dark-blue ramp for v in [0, 1].
inline std::string ramp(double v) {
    v = std::clamp(v, 0.0, 1.0);
    auto ch = [&](double from, double to) {
        return static_cast<int>(std::lround(from + (to - from) * v));
    };
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", ch(255, 8), ch(255, 48), ch(255, 107));
    return buf;
}

/// Matrix as a grid of shaded cells, one value label per cell.
inline std::string plot_matrix(const std::vector<std::vector<double>> &m, const std::vector<std::string> &row_labels,
                               const std::vector<std::string> &col_labels, const std::string &title,
                               int decimals = 2, int cell_px = 36) {
    const std::size_t rows = m.size(), cols = rows ? m[0].size() : 0;
    const double left = row_labels.empty() ? 20 : 130, top = col_labels.empty() ? 40 : 130;
    const int w = static_cast<int>(left + cols * cell_px + 20), h = static_cast<int>(top + rows * cell_px + 20);
    double hi = 0.0;
    for (const auto &r : m)
        for (double v : r)
            hi = std::max(hi, v);
    std::string s = header(w, h);
    s += text(w / 2.0, 20, title, "middle", " font-size=\"14\"");
    for (std::size_t c = 0; c < col_labels.size() && c < cols; ++c) {
        const double x = left + (c + 0.5) * cell_px, y = top - 6;
        s += text(x, y, col_labels[c], "start", " transform=\"rotate(-60 " + num(x) + " " + num(y) + ")\"");
    }
    for (std::size_t r = 0; r < rows; ++r) {
        if (r < row_labels.size())
            s += text(left - 6, top + (r + 0.5) * cell_px + 4, row_labels[r], "end");
        for (std::size_t c = 0; c < cols; ++c) {
            const double v = m[r][c], t = hi > 0 ? v / hi : 0.0;
            s += "<rect x=\"" + num(left + c * cell_px) + "\" y=\"" + num(top + r * cell_px) + "\" width=\"" +
                 std::to_string(cell_px) + "\" height=\"" + std::to_string(cell_px) + "\" fill=\"" + ramp(t) +
                 "\" stroke=\"#ccc\"/>\n";
            s += text(left + (c + 0.5) * cell_px, top + (r + 0.5) * cell_px + 4, num(v, decimals), "middle",
                      t > 0.5 ? " fill=\"white\" font-size=\"10\"" : " font-size=\"10\"");
        }
    }
    return s + "</svg>\n";
}

inline std::string plot_confusion(const std::vector<std::vector<std::size_t>> &confusion,
                                  const std::vector<std::string> &class_names, double accuracy) {
    std::vector<std::vector<double>> m;
    for (const auto &row : confusion)
        m.emplace_back(row.begin(), row.end());
    return plot_matrix(m, class_names, class_names, "confusion (accuracy " + num(accuracy, 4) + ")", 0);
}

} // namespace emx::svg
