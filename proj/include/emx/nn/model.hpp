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
#include "emx/nn/layers.hpp"
#include "emx/nn/tensor.hpp"
#include "emx/parallel.hpp"
#include "emx/rng.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace emx::nn {

enum class Activation { none, relu, softmax };

inline const char *activation_name(Activation a) {
    switch (a) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::softmax: return "softmax";
    }
    return "?";
}

inline Activation parse_activation(const std::string &s) {
    if (s == "none") return Activation::none;
    if (s == "relu") return Activation::relu;
    if (s == "softmax") return Activation::softmax;
    throw Error(Errc::parse_error, "unknown activation '" + s + "'");
}

struct Conv1DConfig {
    std::size_t filters, kernel, stride;
    Activation activation = Activation::relu;
};
struct MaxPool1DConfig {
    std::size_t pool, stride;
};
struct FlattenConfig {};
struct DenseConfig {
    std::size_t units;
    Activation activation = Activation::none;
};
struct DropoutConfig {
    double rate;
};

using LayerConfig = std::variant<Conv1DConfig, MaxPool1DConfig, FlattenConfig, DenseConfig, DropoutConfig>;

/// The fingerprinting classifier: two strided valid convolutions, max
/// pooling, one hidden dense layer with dropout, and a softmax head.
inline std::vector<LayerConfig> classifier_spec(std::size_t num_classes) {
    return {Conv1DConfig{32, 500, 50, Activation::relu},
            Conv1DConfig{32, 300, 10, Activation::relu},
            MaxPool1DConfig{10, 5},
            FlattenConfig{},
            DenseConfig{32, Activation::relu},
            DropoutConfig{0.2},
            DenseConfig{num_classes, Activation::softmax}};
}

/// Smallest input length for which every windowed layer of `spec` still
/// produces at least one output position.
inline std::size_t min_input_len(const std::vector<LayerConfig> &spec) {
    std::size_t need = 1;
    for (auto it = spec.rbegin(); it != spec.rend(); ++it) {
        if (auto *c = std::get_if<Conv1DConfig>(&*it))
            need = (need - 1) * c->stride + c->kernel;
        else if (auto *p = std::get_if<MaxPool1DConfig>(&*it))
            need = (need - 1) * p->stride + p->pool;
        else if (std::holds_alternative<FlattenConfig>(*it))
            need = 1;
    }
    return need;
}

inline constexpr std::size_t kClassifierMinInputLen = 19950;

inline nlohmann::json layer_to_json(const LayerConfig &l) {
    return std::visit(
        [](const auto &c) -> nlohmann::json {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, Conv1DConfig>)
                return {{"type", "conv1d"}, {"filters", c.filters}, {"kernel", c.kernel},
                        {"stride", c.stride}, {"activation", activation_name(c.activation)}};
            else if constexpr (std::is_same_v<T, MaxPool1DConfig>)
                return {{"type", "maxpool1d"}, {"pool", c.pool}, {"stride", c.stride}};
            else if constexpr (std::is_same_v<T, FlattenConfig>)
                return {{"type", "flatten"}};
            else if constexpr (std::is_same_v<T, DenseConfig>)
                return {{"type", "dense"}, {"units", c.units}, {"activation", activation_name(c.activation)}};
            else
                return {{"type", "dropout"}, {"rate", c.rate}};
        },
        l);
}

inline LayerConfig layer_from_json(const nlohmann::json &j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "conv1d")
        return Conv1DConfig{j.at("filters").get<std::size_t>(), j.at("kernel").get<std::size_t>(),
                            j.at("stride").get<std::size_t>(), parse_activation(j.at("activation"))};
    if (type == "maxpool1d")
        return MaxPool1DConfig{j.at("pool").get<std::size_t>(), j.at("stride").get<std::size_t>()};
    if (type == "flatten")
        return FlattenConfig{};
    if (type == "dense")
        return DenseConfig{j.at("units").get<std::size_t>(), parse_activation(j.at("activation"))};
    if (type == "dropout")
        return DropoutConfig{j.at("rate").get<double>()};
    throw Error(Errc::parse_error, "unknown layer type '" + type + "'");
}

/// Activation shape between layers: `len` positions of `channels` values.
struct ActShape {
    std::size_t len, channels;
    std::size_t size() const { return len * channels; }
    friend bool operator==(const ActShape &, const ActShape &) = default;
};

struct LayerState {
    LayerConfig config;
    ActShape in, out;
    Tensor weights, bias; // empty for parameter-free layers

    bool has_params() const { return !weights.data.empty(); }
};

/// Per-layer gradient buffers mirroring a model's parameters.
struct Gradients {
    std::vector<std::vector<double>> weights, bias;

    void add(const Gradients &o) {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            for (std::size_t i = 0; i < weights[l].size(); ++i)
                weights[l][i] += o.weights[l][i];
            for (std::size_t i = 0; i < bias[l].size(); ++i)
                bias[l][i] += o.bias[l][i];
        }
    }
};

/// Activations kept from a forward pass for the backward pass.
struct ForwardCache {
    std::vector<std::vector<double>> acts; // acts[l] is the input of layer l; back() holds logits
    std::vector<std::vector<std::size_t>> argmax;
    std::vector<std::vector<double>> masks;
};

/// Sequential 1D network over single-channel inputs of fixed length. The
/// final layer is a dense softmax head; forward() returns its logits.
class Model {
  public:
    Model(std::vector<LayerConfig> spec, std::size_t input_len, std::uint64_t seed)
        : spec_(std::move(spec)), input_len_(input_len), seed_(seed) {
        if (spec_.empty())
            throw Error(Errc::invalid_argument, "model needs at least one layer");
        auto *head = std::get_if<DenseConfig>(&spec_.back());
        if (!head || head->activation != Activation::softmax)
            throw Error(Errc::invalid_argument, "the last layer must be a dense softmax head");
        if (head->units < 2)
            throw Error(Errc::invalid_argument, "a classifier needs at least 2 classes");
        const std::size_t need = min_input_len(spec_);
        if (input_len_ < need)
            throw Error(Errc::too_short, "input length " + std::to_string(input_len_) +
                                             " is too short for the layer stack; minimum is " +
                                             std::to_string(need));
        ActShape cur{input_len_, 1};
        for (std::size_t l = 0; l < spec_.size(); ++l) {
            LayerState st{spec_[l], cur, cur, {}, {}};
            std::visit(
                [&](const auto &c) {
                    using T = std::decay_t<decltype(c)>;
                    if constexpr (std::is_same_v<T, Conv1DConfig>) {
                        if (c.activation == Activation::softmax)
                            throw Error(Errc::invalid_argument, "softmax is only allowed on the head");
                        st.out = {conv_out_len(cur.len, c.kernel, c.stride), c.filters};
                        st.weights = Tensor({c.kernel, cur.channels, c.filters});
                        st.bias = Tensor({c.filters});
                    } else if constexpr (std::is_same_v<T, MaxPool1DConfig>) {
                        st.out = {conv_out_len(cur.len, c.pool, c.stride), cur.channels};
                    } else if constexpr (std::is_same_v<T, FlattenConfig>) {
                        st.out = {1, cur.size()};
                    } else if constexpr (std::is_same_v<T, DenseConfig>) {
                        if (c.activation == Activation::softmax && l + 1 != spec_.size())
                            throw Error(Errc::invalid_argument, "softmax is only allowed on the head");
                        st.out = {1, c.units};
                        st.weights = Tensor({cur.size(), c.units});
                        st.bias = Tensor({c.units});
                    } else {
                        if (!(c.rate >= 0.0 && c.rate < 1.0))
                            throw Error(Errc::invalid_argument, "dropout rate must lie in [0, 1)");
                    }
                },
                spec_[l]);
            cur = st.out;
            layers_.push_back(std::move(st));
        }
        init_weights();
    }

    const std::vector<LayerConfig> &spec() const { return spec_; }
    std::size_t input_len() const { return input_len_; }
    std::size_t num_classes() const { return layers_.back().out.channels; }
    std::uint64_t seed() const { return seed_; }
    std::vector<LayerState> &layers() { return layers_; }
    const std::vector<LayerState> &layers() const { return layers_; }

    /// Free-form metadata stored with checkpoints (class names, preprocessing).
    nlohmann::json info = nlohmann::json::object();

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto &l : layers_)
            n += l.weights.data.size() + l.bias.data.size();
        return n;
    }

    std::vector<std::string> summary() const {
        std::vector<std::string> rows;
        for (const auto &l : layers_)
            rows.push_back(layer_to_json(l.config).at("type").get<std::string>() + " -> (" +
                           std::to_string(l.out.len) + ", " + std::to_string(l.out.channels) + ")");
        return rows;
    }

    Gradients zero_gradients() const {
        Gradients g;
        for (const auto &l : layers_) {
            g.weights.emplace_back(l.weights.data.size(), 0.0);
            g.bias.emplace_back(l.bias.data.size(), 0.0);
        }
        return g;
    }

    /// One-sample forward pass. Dropout is active only when `training`; its
    /// mask stream is seeded by `dropout_seed`.
    std::vector<double> forward(std::span<const double> x, bool training, std::uint64_t dropout_seed,
                                ForwardCache &cache) const {
        if (x.size() != input_len_)
            throw Error(Errc::shape_mismatch, "model expects " + std::to_string(input_len_) +
                                                  " input samples, got " + std::to_string(x.size()));
        const std::size_t n = layers_.size();
        cache.acts.resize(n + 1);
        cache.argmax.resize(n);
        cache.masks.resize(n);
        cache.acts[0].assign(x.begin(), x.end());
        for (std::size_t l = 0; l < n; ++l) {
            const LayerState &st = layers_[l];
            const auto &in = cache.acts[l];
            auto &out = cache.acts[l + 1];
            out.resize(st.out.size());
            std::visit(
                [&](const auto &c) {
                    using T = std::decay_t<decltype(c)>;
                    if constexpr (std::is_same_v<T, Conv1DConfig>) {
                        kernel::conv1d_fwd(in.data(), st.in.len, st.in.channels, st.weights.data.data(),
                                           c.kernel, c.filters, st.bias.data.data(), c.stride, out.data());
                        if (c.activation == Activation::relu)
                            for (auto &v : out)
                                v = v > 0.0 ? v : 0.0;
                    } else if constexpr (std::is_same_v<T, MaxPool1DConfig>) {
                        cache.argmax[l].resize(st.out.size());
                        kernel::maxpool1d_fwd(in.data(), st.in.len, st.in.channels, c.pool, c.stride, out.data(),
                                              cache.argmax[l].data());
                    } else if constexpr (std::is_same_v<T, FlattenConfig>) {
                        out = in;
                    } else if constexpr (std::is_same_v<T, DenseConfig>) {
                        kernel::dense_fwd(in.data(), st.in.size(), st.weights.data.data(), c.units,
                                          st.bias.data.data(), out.data());
                        if (c.activation == Activation::relu)
                            for (auto &v : out)
                                v = v > 0.0 ? v : 0.0;
                    } else {
                        out = in;
                        cache.masks[l].clear();
                        if (training && c.rate > 0.0) {
                            Rng rng = make_rng({dropout_seed, l});
                            std::bernoulli_distribution coin(1.0 - c.rate);
                            cache.masks[l].resize(out.size());
                            for (std::size_t i = 0; i < out.size(); ++i) {
                                cache.masks[l][i] = coin(rng) ? 1.0 / (1.0 - c.rate) : 0.0;
                                out[i] *= cache.masks[l][i];
                            }
                        }
                    }
                },
                st.config);
        }
        return cache.acts[n];
    }

    /// Accumulates d loss / d params into `grads`, given d loss / d logits.
    /// The gradient with respect to the network input is never formed.
    void backward(const ForwardCache &cache, std::vector<double> grad, Gradients &grads) const {
        std::vector<double> next;
        for (std::size_t l = layers_.size(); l-- > 0;) {
            const LayerState &st = layers_[l];
            const auto &in = cache.acts[l];
            const auto &out = cache.acts[l + 1];
            const bool need_input_grad = l > 0;
            std::visit(
                [&](const auto &c) {
                    using T = std::decay_t<decltype(c)>;
                    if constexpr (std::is_same_v<T, Conv1DConfig>) {
                        if (c.activation == Activation::relu)
                            for (std::size_t i = 0; i < grad.size(); ++i)
                                if (!(out[i] > 0.0))
                                    grad[i] = 0.0;
                        next.assign(need_input_grad ? st.in.size() : 0, 0.0);
                        kernel::conv1d_bwd(in.data(), st.in.len, st.in.channels, st.weights.data.data(), c.kernel,
                                           c.filters, c.stride, grad.data(), need_input_grad ? next.data() : nullptr,
                                           grads.weights[l].data(), grads.bias[l].data());
                    } else if constexpr (std::is_same_v<T, MaxPool1DConfig>) {
                        next.assign(st.in.size(), 0.0);
                        kernel::maxpool1d_bwd(grad.data(), cache.argmax[l].data(), grad.size(), next.data(),
                                              next.size());
                    } else if constexpr (std::is_same_v<T, FlattenConfig>) {
                        next = grad;
                    } else if constexpr (std::is_same_v<T, DenseConfig>) {
                        if (c.activation == Activation::relu)
                            for (std::size_t i = 0; i < grad.size(); ++i)
                                if (!(out[i] > 0.0))
                                    grad[i] = 0.0;
                        next.assign(need_input_grad ? st.in.size() : 0, 0.0);
                        kernel::dense_bwd(in.data(), st.in.size(), st.weights.data.data(), c.units, grad.data(),
                                          need_input_grad ? next.data() : nullptr, grads.weights[l].data(),
                                          grads.bias[l].data());
                    } else {
                        next = grad;
                        if (!cache.masks[l].empty())
                            for (std::size_t i = 0; i < next.size(); ++i)
                                next[i] *= cache.masks[l][i];
                    }
                },
                st.config);
            grad.swap(next);
        }
    }

    std::vector<double> logits(std::span<const float> x) const {
        std::vector<double> xd(x.begin(), x.end());
        ForwardCache cache;
        return forward(xd, false, 0, cache);
    }

    /// Class probabilities for one input (inference mode).
    std::vector<double> predict(std::span<const float> x) const { return softmax(logits(x)); }

  private:
    void init_weights() {
        // He-uniform: U(-sqrt(6 / fan_in), +sqrt(6 / fan_in)); biases start at zero.
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            auto &st = layers_[l];
            if (!st.has_params())
                continue;
            const std::size_t fan_in = st.weights.size() / st.bias.size();
            const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
            Rng rng = make_rng({seed_, 0x1417ULL, l});
            std::uniform_real_distribution<double> u(-limit, limit);
            for (auto &w : st.weights.data)
                w = u(rng);
            std::fill(st.bias.data.begin(), st.bias.data.end(), 0.0);
        }
    }

    std::vector<LayerConfig> spec_;
    std::size_t input_len_;
    std::uint64_t seed_;
    std::vector<LayerState> layers_;
};

/// The reference classifier for `input_len`-sample inputs and `num_classes` classes.
inline Model build_classifier(std::size_t input_len, std::size_t num_classes, std::uint64_t seed) {
    if (num_classes < 2)
        throw Error(Errc::invalid_argument, "a classifier needs at least 2 classes");
    return Model(classifier_spec(num_classes), input_len, seed);
}

/// Cross-entropy loss of one sample in inference mode.
inline double sample_loss(const Model &m, std::span<const double> x, std::size_t label) {
    ForwardCache cache;
    return softmax_cross_entropy(m.forward(x, false, 0, cache), label).loss;
}

namespace detail {
// Which relu units are active and which element won each pool window. Two
// points with the same pattern lie on the same smooth piece of the loss.
inline std::vector<std::size_t> kink_pattern(const Model &m, const ForwardCache &cache) {
    std::vector<std::size_t> pat;
    for (std::size_t l = 0; l < m.layers().size(); ++l) {
        const auto &cfg = m.layers()[l].config;
        Activation act = Activation::none;
        if (auto *c = std::get_if<Conv1DConfig>(&cfg))
            act = c->activation;
        else if (auto *d = std::get_if<DenseConfig>(&cfg))
            act = d->activation;
        if (act == Activation::relu)
            for (double v : cache.acts[l + 1])
                pat.push_back(v > 0.0);
        pat.insert(pat.end(), cache.argmax[l].begin(), cache.argmax[l].end());
    }
    return pat;
}
} // namespace detail

/// Compares analytic parameter gradients of the loss of (x, label) against
/// central finite differences on up to `coords_per_tensor` randomly chosen
/// coordinates of every parameter tensor. Returns the largest relative error.
/// Skipped coordinates: those whose +-h stencil crosses a relu or max-pool
/// kink (the quotient measures nothing there), and those where both gradients
/// sit below 1e5 ulps of the loss over 2h, under which rounding of the loss
/// alone can exceed a 1e-5 relative error. `checked` (if given) receives the
/// number of coordinates actually compared.
inline double gradient_check(Model &m, std::span<const double> x, std::size_t label, double h = 1e-5,
                             std::size_t coords_per_tensor = 16, std::uint64_t seed = 0,
                             std::size_t *checked = nullptr) {
    ForwardCache cache;
    auto lg = softmax_cross_entropy(m.forward(x, false, 0, cache), label);
    Gradients g = m.zero_gradients();
    m.backward(cache, lg.grad, g);
    const auto base = detail::kink_pattern(m, cache);
    std::size_t compared = 0;
    const double loss0 = std::abs(lg.loss);
    const double resolvable =
        1e5 * (std::nextafter(loss0, std::numeric_limits<double>::infinity()) - loss0) / (2.0 * h);
    ForwardCache probe;
    auto loss_at = [&](bool &smooth) {
        const double l = softmax_cross_entropy(m.forward(x, false, 0, probe), label).loss;
        smooth = smooth && detail::kink_pattern(m, probe) == base;
        return l;
    };

    Rng rng = make_rng({seed, 0x6cULL});
    double worst = 0.0;
    auto check = [&](std::vector<double> &param, const std::vector<double> &analytic) {
        if (param.empty())
            return;
        std::uniform_int_distribution<std::size_t> pick(0, param.size() - 1);
        const std::size_t n = std::min(coords_per_tensor, param.size());
        for (std::size_t t = 0; t < n; ++t) {
            const std::size_t i = n == param.size() ? t : pick(rng);
            const double saved = param[i];
            bool smooth = true;
            param[i] = saved + h;
            const double up = loss_at(smooth);
            param[i] = saved - h;
            const double down = loss_at(smooth);
            param[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            if (!smooth || std::max(std::abs(numeric), std::abs(analytic[i])) < resolvable)
                continue;
            ++compared;
            const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-8});
            worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
        }
    };
    for (std::size_t l = 0; l < m.layers().size(); ++l) {
        check(m.layers()[l].weights.data, g.weights[l]);
        check(m.layers()[l].bias.data, g.bias[l]);
    }
    if (checked)
        *checked = compared;
    return worst;
}

} // namespace emx::nn
