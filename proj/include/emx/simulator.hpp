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
#include "emx/parallel.hpp"
#include "emx/rng.hpp"
#include "emx/trace.hpp"

#include <boost/random/normal_distribution.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace emx::sim {

// ------------------------------------------------------------- layers ----

enum class LayerKind {
    conv2d,
    dwconv2d,
    pwconv2d,
    dense,
    maxpool,
    avgpool,
    global_pool,
    relu,
    swish,
    softmax,
    batchnorm,
    se_block,
    add,
    concat,
};

inline constexpr std::size_t kLayerKindCount = 14;

inline constexpr std::array<const char *, kLayerKindCount> kLayerKindNames = {
    "conv2d", "dwconv2d", "pwconv2d", "dense",     "maxpool",  "avgpool", "global_pool",
    "relu",   "swish",    "softmax",  "batchnorm", "se_block", "add",     "concat"};

inline const char *kind_name(LayerKind k) { return kLayerKindNames[static_cast<std::size_t>(k)]; }

inline LayerKind parse_kind(const std::string &s) {
    for (std::size_t i = 0; i < kLayerKindCount; ++i)
        if (s == kLayerKindNames[i])
            return static_cast<LayerKind>(i);
    throw Error(Errc::parse_error, "unknown layer kind '" + s + "'");
}

struct Shape3 {
    std::uint32_t h = 1, w = 1, c = 1;

    std::uint64_t elements() const { return std::uint64_t{h} * w * c; }
    friend bool operator==(const Shape3 &, const Shape3 &) = default;
    friend auto operator<=>(const Shape3 &, const Shape3 &) = default;
};

inline std::string to_string(const Shape3 &s) {
    return "(" + std::to_string(s.h) + "," + std::to_string(s.w) + "," + std::to_string(s.c) + ")";
}

/// One kernel of the serial timeline. Spatial layers use same padding, so
/// the output extent is ceil(in / stride). `branch` marks a layer whose
/// input is an earlier tensor rather than the previous layer's output.
struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::string name;
    Shape3 in;
    std::uint32_t out_channels = 0;
    std::array<std::uint32_t, 2> kernel{1, 1};
    std::array<std::uint32_t, 2> stride{1, 1};
    bool bias = true;
    bool branch = false;
};

inline std::uint32_t ceil_div(std::uint32_t a, std::uint32_t b) { return (a + b - 1) / b; }

inline Shape3 output_shape(const LayerSpec &l) {
    const auto sh = ceil_div(l.in.h, l.stride[0]);
    const auto sw = ceil_div(l.in.w, l.stride[1]);
    switch (l.kind) {
    case LayerKind::conv2d:
    case LayerKind::pwconv2d: return {sh, sw, l.out_channels};
    case LayerKind::dwconv2d:
    case LayerKind::maxpool:
    case LayerKind::avgpool: return {sh, sw, l.in.c};
    case LayerKind::dense: return {1, 1, l.out_channels};
    case LayerKind::global_pool: return {1, 1, l.in.c};
    case LayerKind::concat: return {l.in.h, l.in.w, l.out_channels};
    default: return l.in;
    }
}

inline bool uses_out_channels(LayerKind k) {
    return k == LayerKind::conv2d || k == LayerKind::pwconv2d || k == LayerKind::dense ||
           k == LayerKind::se_block || k == LayerKind::concat;
}

inline void validate_layer(const LayerSpec &l) {
    auto fail = [&](const std::string &why) {
        throw Error(Errc::shape_mismatch, "layer '" + l.name + "': " + why);
    };
    if (l.in.h == 0 || l.in.w == 0 || l.in.c == 0)
        fail("input shape must be positive");
    if (l.kernel[0] == 0 || l.kernel[1] == 0 || l.stride[0] == 0 || l.stride[1] == 0)
        fail("kernel and stride must be positive");
    if (uses_out_channels(l.kind) && l.out_channels == 0)
        fail("out_channels must be positive");
    if (l.kind == LayerKind::concat && l.out_channels < l.in.c)
        fail("concat output has fewer channels than its input");
}

/// Multiply-accumulate count of one layer.
inline std::uint64_t count_macs(const LayerSpec &l) {
    const Shape3 out = output_shape(l);
    const std::uint64_t hw_out = std::uint64_t{out.h} * out.w;
    const std::uint64_t kk = std::uint64_t{l.kernel[0]} * l.kernel[1];
    switch (l.kind) {
    case LayerKind::conv2d:
    case LayerKind::pwconv2d: return hw_out * out.c * kk * l.in.c;
    case LayerKind::dwconv2d: return hw_out * l.in.c * kk;
    case LayerKind::dense: return l.in.elements() * l.out_channels;
    case LayerKind::maxpool:
    case LayerKind::avgpool: return out.elements() * kk;
    case LayerKind::global_pool: return l.in.elements();
    // squeeze (pool), two 1x1 convolutions, then channel rescaling
    case LayerKind::se_block: return 2 * std::uint64_t{l.in.c} * l.out_channels + l.in.elements();
    default: return out.elements();
    }
}

inline std::uint64_t count_params(const LayerSpec &l) {
    const std::uint64_t kk = std::uint64_t{l.kernel[0]} * l.kernel[1];
    const std::uint64_t cin = l.in.c;
    const std::uint64_t cout = l.out_channels;
    switch (l.kind) {
    case LayerKind::conv2d:
    case LayerKind::pwconv2d: return kk * cin * cout + (l.bias ? cout : 0);
    case LayerKind::dwconv2d: return kk * cin + (l.bias ? cin : 0);
    case LayerKind::dense: return l.in.elements() * cout + (l.bias ? cout : 0);
    case LayerKind::batchnorm: return 2 * cin;
    case LayerKind::se_block: return cin * cout + cout + cout * cin + cin;
    default: return 0;
    }
}

// --------------------------------------------------------- descriptors ----

struct ArchitectureDescriptor {
    std::string name;
    Shape3 input_shape{32, 32, 3};
    std::vector<LayerSpec> layers;
    std::optional<std::uint64_t> declared_params;
};

inline std::uint64_t count_params(const ArchitectureDescriptor &d) {
    std::uint64_t total = 0;
    for (const auto &l : d.layers)
        total += count_params(l);
    return total;
}

inline std::uint64_t total_macs(const ArchitectureDescriptor &d) {
    std::uint64_t total = 0;
    for (const auto &l : d.layers)
        total += count_macs(l);
    return total;
}

/// Checks per-layer sanity and shape chaining: a layer consumes the previous
/// layer's output, or, when flagged `branch`, some tensor produced earlier
/// (including the network input).
inline void validate_descriptor(const ArchitectureDescriptor &d) {
    if (d.layers.empty())
        throw Error(Errc::shape_mismatch, "descriptor '" + d.name + "' has no layers");
    std::set<Shape3> produced{d.input_shape};
    Shape3 prev = d.input_shape;
    for (const auto &l : d.layers) {
        validate_layer(l);
        if (l.branch) {
            if (!produced.count(l.in))
                throw Error(Errc::shape_mismatch, "descriptor '" + d.name + "' layer '" + l.name +
                                                      "': branch input " + to_string(l.in) +
                                                      " matches no earlier tensor");
        } else if (!(l.in == prev)) {
            throw Error(Errc::shape_mismatch, "descriptor '" + d.name + "' layer '" + l.name +
                                                  "': input " + to_string(l.in) +
                                                  " does not chain from " + to_string(prev));
        }
        prev = output_shape(l);
        produced.insert(prev);
    }
}

/// First k layers of `d`, named "<name>#prefix<k>".
inline ArchitectureDescriptor prefix_descriptor(const ArchitectureDescriptor &d, std::size_t k) {
    if (k < 1 || k > d.layers.size())
        throw Error(Errc::invalid_argument, "prefix length " + std::to_string(k) +
                                                " outside [1, " + std::to_string(d.layers.size()) + "]");
    ArchitectureDescriptor p;
    p.name = d.name + "#prefix" + std::to_string(k);
    p.input_shape = d.input_shape;
    p.layers.assign(d.layers.begin(), d.layers.begin() + static_cast<std::ptrdiff_t>(k));
    return p;
}

/// Fully connected network: dense layers of the given widths, each followed
/// by a separate relu kernel when requested.
inline ArchitectureDescriptor make_mlp(std::uint32_t input_size, const std::vector<std::uint32_t> &widths,
                                       const std::vector<bool> &relu_after) {
    ArchitectureDescriptor d;
    d.name = "MLP";
    d.input_shape = {1, 1, input_size};
    Shape3 cur = d.input_shape;
    for (std::size_t i = 0; i < widths.size(); ++i) {
        LayerSpec fc;
        fc.kind = LayerKind::dense;
        fc.name = "fc" + std::to_string(i + 1);
        fc.in = cur;
        fc.out_channels = widths[i];
        d.layers.push_back(fc);
        cur = output_shape(fc);
        d.name += "-" + std::to_string(widths[i]);
        if (i < relu_after.size() && relu_after[i]) {
            LayerSpec act;
            act.kind = LayerKind::relu;
            act.name = "relu" + std::to_string(i + 1);
            act.in = cur;
            d.layers.push_back(act);
            d.name += "r";
        }
    }
    return d;
}

// ------------------------------------------------------------- EM model ----

struct EmModel {
    std::array<double, kLayerKindCount> base_amplitude{};
    double amplitude_per_log_mac = 0.008;
    double kernel_gap_s = 5e-6;
    double throughput_macs_per_s = 1e10;
    double min_kernel_s = 15e-6;
    /// Launches making up one layer; the duration floor is launches * min_kernel_s.
    std::array<std::uint32_t, kLayerKindCount> kernel_launches{};
    double noise_sigma = 0.003;
    double timing_jitter_rel = 0.02;
    double weight_effect_rel = 0.01;

    static EmModel defaults() {
        EmModel m;
        m.base_amplitude = {
            0.030, // conv2d
            0.022, // dwconv2d
            0.026, // pwconv2d
            0.028, // dense
            0.016, // maxpool
            0.016, // avgpool
            0.014, // global_pool
            0.018, // relu
            0.020, // swish
            0.015, // softmax
            0.017, // batchnorm
            0.019, // se_block
            0.016, // add
            0.015, // concat
        };
        m.kernel_launches.fill(1);
        m.kernel_launches[static_cast<std::size_t>(LayerKind::se_block)] = 5;
        return m;
    }

    double base(LayerKind k) const { return base_amplitude[static_cast<std::size_t>(k)]; }
    std::uint32_t launches(LayerKind k) const { return kernel_launches[static_cast<std::size_t>(k)]; }

    void validate() const {
        auto nonneg = [](double v, const char *what) {
            if (!(v >= 0.0) || !std::isfinite(v))
                throw Error(Errc::invalid_argument, std::string(what) + " must be >= 0");
        };
        for (double a : base_amplitude)
            nonneg(a, "base_amplitude");
        nonneg(amplitude_per_log_mac, "amplitude_per_log_mac");
        nonneg(kernel_gap_s, "kernel_gap_s");
        nonneg(min_kernel_s, "min_kernel_s");
        nonneg(noise_sigma, "noise_sigma");
        nonneg(timing_jitter_rel, "timing_jitter_rel");
        nonneg(weight_effect_rel, "weight_effect_rel");
        if (!(throughput_macs_per_s > 0.0))
            throw Error(Errc::invalid_argument, "throughput_macs_per_s must be > 0");
        for (auto n : kernel_launches)
            if (n == 0)
                throw Error(Errc::invalid_argument, "kernel_launches must be >= 1");
    }
};

struct SimConfig {
    double sample_rate_hz = 1e9;
    double gpu_clock_hz = 76e6;
    double clock_tone_amplitude = 0.001;
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (!(sample_rate_hz > 0.0))
            throw Error(Errc::invalid_argument, "sample_rate_hz must be > 0");
        if (!(gpu_clock_hz >= 0.0))
            throw Error(Errc::invalid_argument, "gpu_clock_hz must be >= 0");
        if (!(clock_tone_amplitude >= 0.0))
            throw Error(Errc::invalid_argument, "clock_tone_amplitude must be >= 0");
    }
};

// ------------------------------------------------------------- timeline ----

struct KernelSegment {
    std::size_t layer;
    double start_s;
    double duration_s;
    double amplitude;

    double end_s() const { return start_s + duration_s; }
};

struct Timeline {
    std::vector<KernelSegment> kernels;
    double total_s = 0.0;
};

inline double nominal_duration(const LayerSpec &l, const EmModel &em) {
    const double floor_s = em.launches(l.kind) * em.min_kernel_s;
    return std::max(floor_s, static_cast<double>(count_macs(l)) / em.throughput_macs_per_s);
}

/// Noiseless duration: sum of nominal kernel durations plus the inter-kernel gaps.
inline double nominal_total_s(const ArchitectureDescriptor &d, const EmModel &em) {
    double t = 0.0;
    for (const auto &l : d.layers)
        t += nominal_duration(l, em);
    return t + static_cast<double>(d.layers.size() - 1) * em.kernel_gap_s;
}

/// Kernel schedule for one inference. Jitter comes from the trace_seed
/// stream, weight-dependent amplitude perturbation from the model_seed
/// stream; both are drawn layer by layer, so a prefix network reproduces the
/// schedule of its parent exactly.
inline Timeline simulate_timeline(const ArchitectureDescriptor &d, const EmModel &em,
                                  std::uint64_t model_seed, std::uint64_t trace_seed) {
    Rng jitter_rng = make_rng({trace_seed, 0x6a177e4ULL});
    Rng weight_rng = make_rng({model_seed, 0x3e16475ULL});
    std::normal_distribution<double> gauss(0.0, 1.0);

    Timeline tl;
    double t = 0.0;
    for (std::size_t k = 0; k < d.layers.size(); ++k) {
        const auto &l = d.layers[k];
        const double zj = gauss(jitter_rng);
        const double zw = gauss(weight_rng);
        const double dur = nominal_duration(l, em) * std::max(0.05, 1.0 + em.timing_jitter_rel * zj);
        const double amp = (em.base(l.kind) +
                            em.amplitude_per_log_mac * std::log10(1.0 + static_cast<double>(count_macs(l)))) *
                           std::max(0.0, 1.0 + em.weight_effect_rel * zw);
        tl.kernels.push_back({k, t, dur, amp});
        t += dur;
        if (k + 1 < d.layers.size())
            t += em.kernel_gap_s;
    }
    tl.total_s = t;
    return tl;
}

inline std::size_t to_sample(double t_s, double rate) {
    return static_cast<std::size_t>(std::llround(t_s * rate));
}

/// Synthesizes the EM trace of one inference: the kernel amplitude envelope
/// (near zero inside gaps) plus a constant clock leakage term, modulating a
/// carrier at the GPU clock, plus white Gaussian noise.
inline Trace simulate_trace(const ArchitectureDescriptor &d, const EmModel &em, const SimConfig &sim,
                            std::uint64_t model_seed, std::uint64_t trace_seed) {
    if (d.layers.empty())
        throw Error(Errc::invalid_argument, "descriptor '" + d.name + "' has no layers");
    em.validate();
    sim.validate();

    const Timeline tl = simulate_timeline(d, em, model_seed, trace_seed);
    const double fs = sim.sample_rate_hz;
    const std::size_t n = std::max<std::size_t>(1, to_sample(tl.total_s, fs));

    // Piecewise-constant envelope: kernel amplitude inside segments, zero in gaps.
    std::vector<std::size_t> edges;
    std::vector<float> levels;
    edges.reserve(2 * tl.kernels.size() + 1);
    for (const auto &seg : tl.kernels) {
        edges.push_back(std::min(n, to_sample(seg.start_s, fs)));
        levels.push_back(0.0f);
        edges.push_back(std::min(n, to_sample(seg.end_s(), fs)));
        levels.push_back(static_cast<float>(seg.amplitude));
    }
    edges.push_back(n);
    levels.push_back(0.0f);

    Rng phase_rng = make_rng({trace_seed, 0x9a5eULL});
    const double phase0 = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(phase_rng);
    const double omega = 2.0 * std::numbers::pi * sim.gpu_clock_hz / fs;
    const double cw = std::cos(omega), sw = std::sin(omega);

    std::vector<float> out(n);
    const float tone = static_cast<float>(sim.clock_tone_amplitude);
    // Carrier by rotation, resynchronized from the exact phase every block.
    constexpr std::size_t kResync = 1024;
    std::size_t region = 0;
    for (std::size_t b = 0; b < n; b += kResync) {
        const std::size_t e = std::min(n, b + kResync);
        const double theta = std::fmod(phase0 + omega * static_cast<double>(b), 2.0 * std::numbers::pi);
        double c = std::cos(theta), s = std::sin(theta);
        for (std::size_t i = b; i < e; ++i) {
            while (edges[region] <= i)
                ++region;
            out[i] = (levels[region] + tone) * static_cast<float>(s);
            const double c2 = c * cw - s * sw;
            s = s * cw + c * sw;
            c = c2;
        }
    }
    if (em.noise_sigma > 0.0) {
        SplitMix64 noise_rng(derive_seed({trace_seed, 0x4e015eULL}));
        boost::random::normal_distribution<float> noise(0.0f, static_cast<float>(em.noise_sigma));
        for (auto &v : out)
            v += noise(noise_rng);
    }

    Trace::Meta meta{{"arch", d.name},
                     {"model_seed", std::to_string(model_seed)},
                     {"trace_seed", std::to_string(trace_seed)},
                     {"seed", std::to_string(trace_seed)},
                     {"model_id", d.name + "/" + std::to_string(model_seed)}};
    return Trace(std::move(out), fs, std::move(meta));
}

// -------------------------------------------------------------- datasets ----

struct Protocol {
    std::size_t n_train_models = 2;
    std::size_t n_test_models = 1;
    std::size_t traces_per_train_model = 20;
    std::size_t traces_per_test_model = 10;

    static Protocol full() { return {5, 3, 200, 20}; }
    static Protocol desk() { return {2, 1, 20, 10}; }

    std::size_t traces_per_class() const {
        return n_train_models * traces_per_train_model + n_test_models * traces_per_test_model;
    }
    std::size_t test_per_class() const { return n_test_models * traces_per_test_model; }
};

struct PlannedTrace {
    std::string id;
    std::size_t label;
    std::size_t model_index;
    bool test_model;
    std::uint64_t model_seed;
    std::uint64_t trace_seed;
};

/// Enumerates every trace of a protocol run: n + t distinct models per
/// class (models 0..n-1 feed train/val, n..n+t-1 the test set), each with its
/// own trace seeds. Seeds are unique across the whole plan.
inline std::vector<PlannedTrace> plan_dataset(const std::vector<std::string> &class_names,
                                              const Protocol &p, std::uint64_t seed) {
    std::vector<PlannedTrace> plan;
    plan.reserve(class_names.size() * p.traces_per_class());
    std::set<std::uint64_t> used;
    auto unique = [&used](std::uint64_t s) {
        while (!used.insert(s).second)
            s = mix64(s);
        return s;
    };
    for (std::size_t a = 0; a < class_names.size(); ++a) {
        const std::size_t models = p.n_train_models + p.n_test_models;
        for (std::size_t i = 0; i < models; ++i) {
            const bool test = i >= p.n_train_models;
            const std::uint64_t model_seed = unique(derive_seed({seed, 0x4d, a, i}));
            const std::size_t count = test ? p.traces_per_test_model : p.traces_per_train_model;
            for (std::size_t j = 0; j < count; ++j) {
                const std::uint64_t trace_seed = unique(derive_seed({seed, 0x54, a, i, j}));
                plan.push_back({class_names[a] + "-m" + std::to_string(i) + "-t" + std::to_string(j), a, i,
                                test, model_seed, trace_seed});
            }
        }
    }
    return plan;
}

using TraceTransform = std::function<Trace(Trace)>;

/// Generates a labeled dataset (label = descriptor index). Test-model traces
/// are tagged test; all other traces are tagged train and form the pool that
/// is later split into train/val. `transform`, when given, is applied to each
/// trace right after synthesis (e.g. envelope extraction, so full-rate traces
/// never need to be held at once).
inline Dataset simulate_dataset(const std::vector<ArchitectureDescriptor> &corpus, const Protocol &protocol,
                                const EmModel &em, const SimConfig &sim, const TraceTransform &transform = {},
                                unsigned threads = 0) {
    std::vector<std::string> names;
    for (const auto &d : corpus)
        names.push_back(d.name);
    const auto plan = plan_dataset(names, protocol, sim.rng_seed);

    std::vector<std::optional<Trace>> traces(plan.size());
    parallel_for(
        plan.size(),
        [&](std::size_t i) {
            const auto &pt = plan[i];
            Trace t = simulate_trace(corpus[pt.label], em, sim, pt.model_seed, pt.trace_seed);
            t.set_meta("model_index", std::to_string(pt.model_index));
            t.set_meta("pool", pt.test_model ? "test" : "train");
            traces[i] = transform ? transform(std::move(t)) : std::move(t);
        },
        threads);

    Dataset ds;
    ds.class_names = names;
    ds.entries.reserve(plan.size());
    for (std::size_t i = 0; i < plan.size(); ++i)
        ds.entries.push_back({plan[i].id, std::move(*traces[i]), plan[i].label,
                              plan[i].test_model ? Split::test : Split::train});
    ds.provenance = {{"generator", "emx-sim"},
                     {"seed", sim.rng_seed},
                     {"protocol",
                      {{"n_train_models", protocol.n_train_models},
                       {"n_test_models", protocol.n_test_models},
                       {"traces_per_train_model", protocol.traces_per_train_model},
                       {"traces_per_test_model", protocol.traces_per_test_model}}}};
    ds.validate();
    return ds;
}

} // namespace emx::sim
