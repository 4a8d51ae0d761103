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
#include "emx/nn/model.hpp"
#include "emx/parallel.hpp"
#include "emx/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace emx::nn {

enum class Optimizer { sgd, adam };

inline const char *optimizer_name(Optimizer o) { return o == Optimizer::sgd ? "sgd" : "adam"; }

inline Optimizer parse_optimizer(const std::string &s) {
    if (s == "sgd") return Optimizer::sgd;
    if (s == "adam") return Optimizer::adam;
    throw Error(Errc::parse_error, "unknown optimizer '" + s + "'");
}

struct TrainConfig {
    std::size_t max_epochs = 200;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    Optimizer optimizer = Optimizer::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t early_stop_patience = 10;
    std::string early_stop_metric = "val_loss";
    std::uint64_t rng_seed = 0;
    unsigned threads = 0;

    void validate() const {
        if (max_epochs == 0 || batch_size == 0)
            throw Error(Errc::invalid_argument, "max_epochs and batch_size must be positive");
        if (!(learning_rate > 0.0))
            throw Error(Errc::invalid_argument, "learning_rate must be positive");
        if (early_stop_patience == 0)
            throw Error(Errc::invalid_argument, "early_stop_patience must be positive");
        if (early_stop_metric != "val_loss")
            throw Error(Errc::invalid_argument, "only val_loss is supported as early-stop metric");
    }
};

/// A training example: a borrowed input sequence and its class index.
struct Sample {
    std::span<const float> x;
    std::size_t label;
};

struct EpochStats {
    std::size_t epoch;
    double train_loss, train_accuracy, val_loss, val_accuracy;
};

struct TrainResult {
    std::vector<EpochStats> history;
    std::size_t best_epoch = 0;
    bool stopped_early = false;
};

struct LossAccuracy {
    double loss = 0.0, accuracy = 0.0;
};

inline std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Mean cross-entropy and accuracy in inference mode.
inline LossAccuracy evaluate_samples(const Model &m, const std::vector<Sample> &samples, unsigned threads = 0) {
    std::vector<double> loss(samples.size());
    std::vector<char> hit(samples.size());
    parallel_for(
        samples.size(),
        [&](std::size_t i) {
            const auto z = m.logits(samples[i].x);
            loss[i] = softmax_cross_entropy(z, samples[i].label).loss;
            hit[i] = argmax(z) == samples[i].label;
        },
        threads);
    LossAccuracy r;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        r.loss += loss[i];
        r.accuracy += hit[i];
    }
    if (!samples.empty()) {
        r.loss /= static_cast<double>(samples.size());
        r.accuracy /= static_cast<double>(samples.size());
    }
    return r;
}

/// Sums buffers[0..n) into buffers[0] by pairwise halving, so the floating
/// point reduction order depends only on n.
inline void tree_sum(std::vector<Gradients> &buffers, std::size_t n) {
    for (std::size_t step = 1; step < n; step *= 2)
        for (std::size_t i = 0; i + step < n; i += 2 * step)
            buffers[i].add(buffers[i + step]);
}

class AdamState {
  public:
    AdamState(const Model &m, const TrainConfig &cfg) : cfg_(cfg), m_(m.zero_gradients()), v_(m.zero_gradients()) {}

    void step(Model &model, const Gradients &g, double scale) {
        ++t_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        auto update = [&](std::vector<double> &w, const std::vector<double> &gw, std::vector<double> &m,
                          std::vector<double> &v) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double gi = gw[i] * scale;
                if (cfg_.optimizer == Optimizer::sgd) {
                    w[i] -= cfg_.learning_rate * gi;
                    continue;
                }
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
                w[i] -= cfg_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
            }
        };
        for (std::size_t l = 0; l < model.layers().size(); ++l) {
            update(model.layers()[l].weights.data, g.weights[l], m_.weights[l], v_.weights[l]);
            update(model.layers()[l].bias.data, g.bias[l], m_.bias[l], v_.bias[l]);
        }
    }

  private:
    TrainConfig cfg_;
    Gradients m_, v_;
    std::uint64_t t_ = 0;
};

using EpochCallback = std::function<void(const EpochStats &)>;

/// Mini-batch training with early stopping on validation loss. The model
/// ends up holding the weights of the best validation epoch. Shuffling and
/// dropout masks derive from cfg.rng_seed, and per-sample gradients are
/// reduced in a fixed order, so results do not depend on the thread count.
inline TrainResult train(Model &model, const std::vector<Sample> &train_set, const std::vector<Sample> &val_set,
                         const TrainConfig &cfg, const EpochCallback &on_epoch = {}) {
    cfg.validate();
    if (train_set.empty())
        throw Error(Errc::empty_split, "training split is empty");
    if (val_set.empty())
        throw Error(Errc::empty_split, "validation split is empty");
    for (const auto *set : {&train_set, &val_set})
        for (const auto &s : *set) {
            if (s.x.size() != model.input_len())
                throw Error(Errc::shape_mismatch, "sample length " + std::to_string(s.x.size()) +
                                                      " differs from model input " +
                                                      std::to_string(model.input_len()));
            if (s.label >= model.num_classes())
                throw Error(Errc::label_out_of_range, "label " + std::to_string(s.label));
        }

    AdamState opt(model, cfg);
    const std::size_t bs = std::min(cfg.batch_size, train_set.size());
    std::vector<Gradients> buffers(bs, model.zero_gradients());
    std::vector<double> batch_loss(bs);
    std::vector<char> batch_hit(bs);

    TrainResult result;
    double best_loss = std::numeric_limits<double>::infinity();
    std::vector<LayerState> best_layers = model.layers();
    std::size_t since_best = 0;

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng = make_rng({cfg.rng_seed, 0x5348ULL, epoch});
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0, hit_sum = 0.0;
        for (std::size_t start = 0, batch = 0; start < order.size(); start += bs, ++batch) {
            const std::size_t n = std::min(bs, order.size() - start);
            parallel_for(
                n,
                [&](std::size_t i) {
                    const Sample &s = train_set[order[start + i]];
                    Gradients &g = buffers[i];
                    for (auto &w : g.weights)
                        std::fill(w.begin(), w.end(), 0.0);
                    for (auto &b : g.bias)
                        std::fill(b.begin(), b.end(), 0.0);
                    std::vector<double> x(s.x.begin(), s.x.end());
                    ForwardCache cache;
                    const auto z =
                        model.forward(x, true, derive_seed({cfg.rng_seed, 0x4452ULL, epoch, batch, i}), cache);
                    auto lg = softmax_cross_entropy(z, s.label);
                    batch_loss[i] = lg.loss;
                    batch_hit[i] = argmax(z) == s.label;
                    model.backward(cache, std::move(lg.grad), g);
                },
                cfg.threads);
            tree_sum(buffers, n);
            opt.step(model, buffers[0], 1.0 / static_cast<double>(n));
            for (std::size_t i = 0; i < n; ++i) {
                loss_sum += batch_loss[i];
                hit_sum += batch_hit[i];
            }
        }

        const LossAccuracy val = evaluate_samples(model, val_set, cfg.threads);
        const double count = static_cast<double>(train_set.size());
        EpochStats st{epoch + 1, loss_sum / count, hit_sum / count, val.loss, val.accuracy};
        result.history.push_back(st);
        if (on_epoch)
            on_epoch(st);

        if (val.loss < best_loss) {
            best_loss = val.loss;
            best_layers = model.layers();
            result.best_epoch = epoch + 1;
            since_best = 0;
        } else if (++since_best >= cfg.early_stop_patience) {
            result.stopped_early = true;
            break;
        }
    }
    model.layers() = best_layers;
    return result;
}

} // namespace emx::nn
