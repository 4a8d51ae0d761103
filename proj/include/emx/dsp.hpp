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

#include "emx/error.hpp"
#include "emx/trace.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace emx::dsp {

enum class Normalize { none, zscore, maxabs };
enum class PadPolicy { zero_pad_right, truncate_right };

inline const char *normalize_name(Normalize n) {
    switch (n) {
    case Normalize::none: return "none";
    case Normalize::zscore: return "zscore";
    case Normalize::maxabs: return "maxabs";
    }
    return "?";
}

inline Normalize parse_normalize(const std::string &s) {
    if (s == "none") return Normalize::none;
    if (s == "zscore") return Normalize::zscore;
    if (s == "maxabs") return Normalize::maxabs;
    throw Error(Errc::invalid_argument, "unknown normalization '" + s + "'");
}

inline const char *pad_policy_name(PadPolicy p) {
    return p == PadPolicy::zero_pad_right ? "zero_pad_right" : "truncate_right";
}

inline PadPolicy parse_pad_policy(const std::string &s) {
    if (s == "zero_pad_right") return PadPolicy::zero_pad_right;
    if (s == "truncate_right") return PadPolicy::truncate_right;
    throw Error(Errc::invalid_argument, "unknown pad policy '" + s + "'");
}

struct PreprocessConfig {
    std::size_t window = 1000;
    Normalize normalize = Normalize::zscore;
    std::optional<std::size_t> target_len;
    PadPolicy pad_policy = PadPolicy::zero_pad_right;

    void validate() const {
        if (window < 1)
            throw Error(Errc::invalid_argument, "window must be >= 1");
        if (target_len && *target_len < 1)
            throw Error(Errc::invalid_argument, "target_len must be >= 1");
    }
};

inline std::string absavg_tag(std::size_t window) { return "absavg:" + std::to_string(window); }

/// Envelope extraction: mean of |x| over consecutive non-overlapping
/// windows. The last window may be shorter and is averaged over its actual
/// length. Output rate is the input rate divided by `window`.
inline Trace abs_window_average(const Trace &trace, std::size_t window) {
    if (window == 0)
        throw Error(Errc::invalid_argument, "window must be positive");
    const auto &x = trace.samples();
    const std::size_t n = x.size();
    const std::size_t out_len = (n + window - 1) / window;
    std::vector<float> out(out_len);
    for (std::size_t i = 0; i < out_len; ++i) {
        const std::size_t b = i * window;
        const std::size_t e = std::min(b + window, n);
        double acc = 0.0;
        for (std::size_t j = b; j < e; ++j)
            acc += std::fabs(static_cast<double>(x[j]));
        out[i] = static_cast<float>(acc / static_cast<double>(e - b));
    }
    Trace::Meta meta = trace.meta();
    meta["preproc"] = absavg_tag(window);
    return Trace(std::move(out), trace.sample_rate_hz() / static_cast<double>(window),
                 std::move(meta));
}

/// zscore uses the population standard deviation; a constant input maps to
/// all zeros. maxabs scales so that max |x| = 1 (all-zero input unchanged).
inline Trace normalize(const Trace &trace, Normalize scheme) {
    const auto &x = trace.samples();
    std::vector<float> out(x.begin(), x.end());
    if (scheme == Normalize::zscore) {
        double mean = 0.0;
        for (float v : x)
            mean += v;
        mean /= static_cast<double>(x.size());
        double var = 0.0;
        for (float v : x)
            var += (v - mean) * (v - mean);
        const double sd = std::sqrt(var / static_cast<double>(x.size()));
        for (std::size_t i = 0; i < x.size(); ++i)
            out[i] = sd > 0.0 ? static_cast<float>((x[i] - mean) / sd) : 0.0f;
    } else if (scheme == Normalize::maxabs) {
        double peak = 0.0;
        for (float v : x)
            peak = std::max(peak, std::fabs(static_cast<double>(v)));
        if (peak > 0.0)
            for (std::size_t i = 0; i < x.size(); ++i)
                out[i] = static_cast<float>(x[i] / peak);
    }
    return Trace(std::move(out), trace.sample_rate_hz(), trace.meta());
}

/// Brings a trace to exactly `target_len` samples. Longer inputs are cut on
/// the right under either policy; shorter inputs are zero-padded under
/// zero_pad_right and rejected under truncate_right.
inline Trace fit_length(const Trace &trace, std::size_t target_len, PadPolicy policy) {
    if (target_len == 0)
        throw Error(Errc::invalid_argument, "target_len must be positive");
    const auto &x = trace.samples();
    if (x.size() < target_len && policy == PadPolicy::truncate_right)
        throw Error(Errc::too_short, "trace has " + std::to_string(x.size()) +
                                         " samples, cannot truncate to " + std::to_string(target_len));
    std::vector<float> out(target_len, 0.0f);
    std::copy_n(x.begin(), std::min(target_len, x.size()), out.begin());
    return Trace(std::move(out), trace.sample_rate_hz(), trace.meta());
}

inline double total_duration_s(const Trace &trace) {
    return static_cast<double>(trace.size()) / trace.sample_rate_hz();
}

/// |X_k|^2 of the unnormalized DFT at bin k, via the Goertzel recursion.
inline double goertzel_power(std::span<const float> x, std::size_t k) {
    const double w = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(x.size());
    const double coeff = 2.0 * std::cos(w);
    double s1 = 0.0, s2 = 0.0;
    for (float v : x) {
        const double s = v + coeff * s1 - s2;
        s2 = s1;
        s1 = s;
    }
    return std::max(0.0, s1 * s1 + s2 * s2 - coeff * s1 * s2);
}

/// Inclusive DFT bin range covering [center - bw/2, center + bw/2], clipped
/// to [0, N/2]. Empty when no bin falls inside the band.
struct BinRange {
    std::size_t first = 1, last = 0;
    bool empty() const { return last < first; }
};

inline BinRange band_bins(std::size_t n, double rate, double center_hz, double bandwidth_hz) {
    const double df = rate / static_cast<double>(n);
    const double lo = std::max(0.0, center_hz - bandwidth_hz / 2.0);
    const double hi = std::min(rate / 2.0, center_hz + bandwidth_hz / 2.0);
    BinRange r;
    r.first = static_cast<std::size_t>(std::ceil(lo / df - 1e-9));
    const double last = std::floor(hi / df + 1e-9);
    r.last = last < 0 ? 0 : static_cast<std::size_t>(last);
    r.last = std::min(r.last, n / 2);
    if (r.last < r.first) {
        r.first = 1;
        r.last = 0;
    }
    return r;
}

/// Sum of squared DFT magnitudes over the bins inside the band.
inline double band_power(const Trace &trace, double center_hz, double bandwidth_hz) {
    const double nyquist = trace.sample_rate_hz() / 2.0;
    if (!(center_hz > 0.0) || !(center_hz < nyquist))
        throw Error(Errc::invalid_argument, "center frequency must lie in (0, Nyquist)");
    if (!(bandwidth_hz > 0.0))
        throw Error(Errc::invalid_argument, "bandwidth must be positive");
    const BinRange bins = band_bins(trace.size(), trace.sample_rate_hz(), center_hz, bandwidth_hz);
    double total = 0.0;
    for (std::size_t k = bins.first; !bins.empty() && k <= bins.last; ++k)
        total += goertzel_power(trace.view(), k);
    return total;
}

template <typename Grid>
std::vector<std::vector<double>> band_heatmap(const Grid &grid, double center_hz,
                                              double bandwidth_hz) {
    std::vector<std::vector<double>> out;
    out.reserve(grid.size());
    for (const auto &row : grid) {
        auto &dst = out.emplace_back();
        dst.reserve(row.size());
        for (const Trace &t : row)
            dst.push_back(band_power(t, center_hz, bandwidth_hz));
    }
    return out;
}

/// Full preprocessing chain used by the attack: envelope, normalization and
/// (when configured) length fitting. Traces already carrying the matching
/// "preproc" tag skip the envelope step.
inline Trace preprocess(const Trace &trace, const PreprocessConfig &cfg) {
    cfg.validate();
    Trace env = trace.meta_or("preproc") == absavg_tag(cfg.window)
                    ? trace
                    : abs_window_average(trace, cfg.window);
    Trace norm = normalize(env, cfg.normalize);
    if (cfg.target_len)
        return fit_length(norm, *cfg.target_len, cfg.pad_policy);
    return norm;
}

} // namespace emx::dsp
