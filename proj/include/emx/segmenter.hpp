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

#include "emx/dsp.hpp"
#include "emx/error.hpp"
#include "emx/parallel.hpp"
#include "emx/rng.hpp"
#include "emx/simulator.hpp"
#include "emx/trace.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace emx::seg {

enum class BoundaryKind { gap_detected, divergence };

inline const char *boundary_kind_name(BoundaryKind k) {
    return k == BoundaryKind::gap_detected ? "gap_detected" : "divergence";
}

inline BoundaryKind parse_boundary_kind(const std::string &s) {
    if (s == "gap_detected") return BoundaryKind::gap_detected;
    if (s == "divergence") return BoundaryKind::divergence;
    throw Error(Errc::parse_error, "unknown boundary kind '" + s + "'");
}

struct Boundary {
    std::size_t index;
    BoundaryKind kind;
    double confidence;
};

inline constexpr double kDefaultGapThresholdRel = 0.2;
inline constexpr std::size_t kDefaultDivergenceWindow = 5;

inline double median_abs(std::span<const float> x) {
    if (x.empty())
        return 0.0;
    std::vector<float> v(x.size());
    std::transform(x.begin(), x.end(), v.begin(), [](float s) { return std::abs(s); });
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    double m = v[mid];
    if (v.size() % 2 == 0) {
        const float lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
        m = (m + lower) / 2.0;
    }
    return m;
}

/// Half the inter-kernel gap, in samples of a trace preprocessed with `window`.
inline std::size_t default_min_gap_samples(const sim::EmModel &em, const sim::SimConfig &sim, std::size_t window) {
    const double gap = em.kernel_gap_s * sim.sample_rate_hz / static_cast<double>(window);
    return std::max<std::size_t>(1, static_cast<std::size_t>(gap / 2.0));
}

/// Boundaries at the midpoints of quiet runs: at least `min_gap_samples`
/// consecutive samples below gap_threshold_rel times the median amplitude.
/// Runs touching either end of the trace are idle time, not boundaries.
inline std::vector<Boundary> detect_boundaries(const Trace &envelope, double gap_threshold_rel = kDefaultGapThresholdRel,
                                               std::size_t min_gap_samples = 1) {
    const auto x = envelope.view();
    const double thr = gap_threshold_rel * median_abs(x);
    struct Run {
        std::size_t start, len;
    };
    std::vector<Run> runs;
    std::size_t i = 0;
    while (i < x.size()) {
        if (std::abs(x[i]) < thr) {
            std::size_t j = i;
            while (j < x.size() && std::abs(x[j]) < thr)
                ++j;
            if (i > 0 && j < x.size() && j - i >= std::max<std::size_t>(1, min_gap_samples))
                runs.push_back({i, j - i});
            i = j;
        } else {
            ++i;
        }
    }
    std::size_t longest = 0;
    for (const auto &r : runs)
        longest = std::max(longest, r.len);
    std::vector<Boundary> out;
    for (const auto &r : runs)
        out.push_back({r.start + r.len / 2, BoundaryKind::gap_detected,
                       static_cast<double>(r.len) / static_cast<double>(longest)});
    return out;
}

struct Divergence {
    std::size_t index;
    bool found; // false: the traces agree over the whole shorter trace
};

/// First index where the mean absolute difference of the two envelopes over
/// [i, i + window) exceeds threshold_rel times the median of `longer`.
/// Windows are clipped at the end of the shorter trace.
inline Divergence divergence_point(const Trace &shorter, const Trace &longer,
                                   std::size_t window = kDefaultDivergenceWindow,
                                   double threshold_rel = kDefaultGapThresholdRel) {
    if (window == 0)
        throw Error(Errc::invalid_argument, "divergence window must be positive");
    const auto a = shorter.view();
    const auto b = longer.view();
    const std::size_t n = std::min(a.size(), b.size());
    const double thr = threshold_rel * median_abs(b);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t end = std::min(n, i + window);
        double sum = 0.0;
        for (std::size_t k = i; k < end; ++k)
            sum += std::abs(static_cast<double>(a[k]) - static_cast<double>(b[k]));
        if (sum / static_cast<double>(end - i) > thr)
            return {i, true};
    }
    return {shorter.size(), false};
}

/// Simulated and preprocessed trace of the first k layers of `d`.
inline Trace prefix_envelope(const sim::ArchitectureDescriptor &d, std::size_t k, const sim::EmModel &em,
                             const sim::SimConfig &sim, const dsp::PreprocessConfig &pre) {
    const std::uint64_t model_seed = derive_seed({sim.rng_seed, 0x504dULL});
    const std::uint64_t trace_seed = derive_seed({sim.rng_seed, 0x5054ULL});
    Trace raw = sim::simulate_trace(sim::prefix_descriptor(d, k), em, sim, model_seed, trace_seed);
    return dsp::abs_window_average(raw, pre.window);
}

/// Localizes layer boundaries by running growing prefixes of the network:
/// prefix k and prefix k+1 agree until layer k ends, after which the longer
/// one goes quiet and then starts layer k+1. The boundary is the middle of
/// that quiet stretch (or the divergence point itself when there is none).
/// Returns L - 1 boundaries on the envelope of the full network.
inline std::vector<Boundary> profile_by_prefixes(const sim::ArchitectureDescriptor &d, const sim::EmModel &em,
                                                 const sim::SimConfig &sim, const dsp::PreprocessConfig &pre,
                                                 std::size_t window = kDefaultDivergenceWindow,
                                                 double threshold_rel = kDefaultGapThresholdRel, unsigned threads = 0) {
    const std::size_t layers = d.layers.size();
    if (layers == 0)
        throw Error(Errc::invalid_argument, "descriptor '" + d.name + "' has no layers");
    std::vector<std::optional<Trace>> env(layers);
    parallel_for(layers, [&](std::size_t k) { env[k] = prefix_envelope(d, k + 1, em, sim, pre); }, threads);

    std::vector<Boundary> out;
    std::size_t prev = 0;
    for (std::size_t k = 0; k + 1 < layers; ++k) {
        const Trace &shorter = *env[k];
        const Trace &longer = *env[k + 1];
        const Divergence div = divergence_point(shorter, longer, window, threshold_rel);
        const auto y = longer.view();
        const double thr = threshold_rel * median_abs(y);
        std::size_t i = std::min(div.index, y.size());
        while (i < y.size() && y[i] >= thr) // tail of layer k
            ++i;
        const std::size_t gap_start = i;
        while (i < y.size() && y[i] < thr)
            ++i;
        const bool gap_seen = i > gap_start && i < y.size();
        std::size_t idx = gap_seen ? gap_start + (i - gap_start) / 2 : div.index;
        if (!out.empty() && idx <= prev)
            idx = prev + 1;
        prev = idx;
        out.push_back({idx, BoundaryKind::divergence, gap_seen ? 1.0 : 0.5});
    }
    return out;
}

inline nlohmann::json to_json(const std::vector<Boundary> &bs) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto &b : bs)
        j.push_back({{"index", b.index}, {"kind", boundary_kind_name(b.kind)}, {"confidence", b.confidence}});
    return j;
}

inline std::vector<Boundary> boundaries_from_json(const nlohmann::json &j) {
    try {
        const auto &arr = j.is_object() ? j.at("boundaries") : j;
        std::vector<Boundary> out;
        for (const auto &b : arr)
            out.push_back({b.at("index").get<std::size_t>(), parse_boundary_kind(b.value("kind", "gap_detected")),
                           b.value("confidence", 1.0)});
        return out;
    } catch (const nlohmann::json::exception &e) {
        throw Error(Errc::parse_error, std::string("boundaries: ") + e.what());
    }
}

} // namespace emx::seg
