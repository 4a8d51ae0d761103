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

#include "emx/config.hpp"
#include "emx/dsp.hpp"
#include "emx/error.hpp"
#include "emx/nn/model.hpp"
#include "emx/nn/train.hpp"
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

namespace emx::pipeline {

inline constexpr double kDefaultSplitRatio = 0.70;

struct AttackReport {
    std::vector<std::string> class_names;
    double accuracy = 0.0;
    std::vector<std::vector<std::size_t>> confusion; // rows: true class, columns: predicted
    std::vector<double> per_class_accuracy;
    std::size_t train_count = 0, val_count = 0, test_count = 0;

    std::size_t total() const {
        std::size_t n = 0;
        for (const auto &row : confusion)
            for (auto v : row)
                n += v;
        return n;
    }

    nlohmann::json to_json() const {
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t c = 0; c < class_names.size(); ++c)
            rows.push_back({{"class", class_names[c]},
                            {"accuracy", per_class_accuracy[c]},
                            {"counts", confusion[c]}});
        return {{"accuracy", accuracy},
                {"class_names", class_names},
                {"confusion", confusion},
                {"per_class", rows},
                {"trace_count", {{"train", train_count}, {"val", val_count}, {"test", test_count}}}};
    }
};

/// Splits each class's train-tagged traces into train and val, keeping
/// round(ratio * n) for training. Test-tagged traces are left alone.
inline void stratified_split(Dataset &ds, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0))
        throw Error(Errc::invalid_argument, "split ratio must lie in (0, 1)");
    for (std::size_t c = 0; c < ds.num_classes(); ++c) {
        std::vector<std::size_t> pool;
        for (std::size_t i = 0; i < ds.entries.size(); ++i)
            if (ds.entries[i].label == c && ds.entries[i].split != Split::test)
                pool.push_back(i);
        Rng rng = make_rng({seed, 0x5631ULL, c});
        std::shuffle(pool.begin(), pool.end(), rng);
        const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(pool.size())));
        for (std::size_t k = 0; k < pool.size(); ++k)
            ds.entries[pool[k]].split = k < n_train ? Split::train : Split::val;
    }
}

inline void require_all_classes(const Dataset &ds) {
    for (Split s : {Split::train, Split::val, Split::test}) {
        std::vector<bool> seen(ds.num_classes(), false);
        for (const auto &e : ds.entries)
            if (e.split == s)
                seen[e.label] = true;
        for (std::size_t c = 0; c < seen.size(); ++c)
            if (!seen[c])
                throw Error(Errc::empty_split, "class '" + ds.class_names[c] + "' has no " + split_name(s) + " traces");
    }
}

/// Preprocesses every trace (envelope, normalization, fixed length) and
/// assigns the train/val split. Without an explicit target length the
/// traces are fitted to the longest (zero padding) or shortest (truncation)
/// preprocessed train-pool trace; zero padding never goes below the
/// classifier's minimum input length.
inline Dataset build_attack_dataset(const Dataset &raw, const dsp::PreprocessConfig &cfg,
                                    double split_ratio = kDefaultSplitRatio, std::uint64_t seed = 0,
                                    unsigned threads = 0) {
    cfg.validate();
    raw.validate();
    dsp::PreprocessConfig unfitted = cfg;
    unfitted.target_len.reset();
    std::vector<std::optional<Trace>> pre(raw.entries.size());
    parallel_for(
        raw.entries.size(), [&](std::size_t i) { pre[i] = dsp::preprocess(raw.entries[i].trace, unfitted); },
        threads);

    std::size_t target = 0;
    if (cfg.target_len) {
        target = *cfg.target_len;
    } else {
        std::optional<std::size_t> lo, hi;
        for (std::size_t i = 0; i < pre.size(); ++i) {
            if (raw.entries[i].split == Split::test)
                continue;
            const std::size_t n = pre[i]->size();
            lo = lo ? std::min(*lo, n) : n;
            hi = hi ? std::max(*hi, n) : n;
        }
        if (!hi)
            throw Error(Errc::empty_split, "dataset has no train-pool traces");
        target = cfg.pad_policy == dsp::PadPolicy::zero_pad_right ? std::max(*hi, nn::kClassifierMinInputLen) : *lo;
    }

    Dataset out;
    out.class_names = raw.class_names;
    out.entries.reserve(raw.entries.size());
    for (std::size_t i = 0; i < raw.entries.size(); ++i) {
        const auto &e = raw.entries[i];
        out.entries.push_back(
            {e.id, dsp::fit_length(*pre[i], target, cfg.pad_policy), e.label, e.split == Split::test ? Split::test : Split::train});
        pre[i].reset();
    }
    stratified_split(out, split_ratio, seed);
    require_all_classes(out);

    dsp::PreprocessConfig applied = cfg;
    applied.target_len = target;
    out.provenance = raw.provenance;
    out.provenance["preprocess"] = to_json(applied);
    out.provenance["split_ratio"] = split_ratio;
    out.provenance["split_seed"] = seed;
    return out;
}

inline std::vector<nn::Sample> samples_of(const Dataset &ds, Split s) {
    std::vector<nn::Sample> out;
    for (const auto &e : ds.entries)
        if (e.split == s)
            out.push_back({e.trace.view(), e.label});
    return out;
}

/// The preprocessing a model was trained with, as recorded in its metadata.
inline dsp::PreprocessConfig model_preprocess(const nn::Model &m) {
    if (m.info.contains("preprocess"))
        return preprocess_from_json(m.info.at("preprocess"));
    dsp::PreprocessConfig cfg;
    cfg.target_len = m.input_len();
    return cfg;
}

inline std::vector<std::string> model_class_names(const nn::Model &m) {
    if (m.info.contains("class_names"))
        return m.info.at("class_names").get<std::vector<std::string>>();
    std::vector<std::string> names;
    for (std::size_t c = 0; c < m.num_classes(); ++c)
        names.push_back("class" + std::to_string(c));
    return names;
}

struct TrainedModel {
    nn::Model model;
    nn::TrainResult result;
};

/// Builds the fingerprinting classifier for an attack dataset and trains it
/// on the train/val splits.
inline TrainedModel train_attack_model(const Dataset &ds, const nn::TrainConfig &cfg,
                                       const nn::EpochCallback &on_epoch = {}) {
    const auto train_set = samples_of(ds, Split::train);
    const auto val_set = samples_of(ds, Split::val);
    if (train_set.empty() || val_set.empty())
        throw Error(Errc::empty_split, "attack dataset needs non-empty train and val splits");
    nn::Model model = nn::build_classifier(train_set.front().x.size(), ds.num_classes(), cfg.rng_seed);
    model.info["class_names"] = ds.class_names;
    if (ds.provenance.contains("preprocess"))
        model.info["preprocess"] = ds.provenance.at("preprocess");
    auto result = nn::train(model, train_set, val_set, cfg, on_epoch);
    return {std::move(model), std::move(result)};
}

/// Classifies every test trace (argmax, ties to the lower class index).
inline AttackReport evaluate(const nn::Model &model, const Dataset &ds, unsigned threads = 0) {
    if (ds.num_classes() != model.num_classes())
        throw Error(Errc::shape_mismatch, "dataset has " + std::to_string(ds.num_classes()) +
                                              " classes, model has " + std::to_string(model.num_classes()));
    const auto test = ds.indices(Split::test);
    if (test.empty())
        throw Error(Errc::empty_split, "dataset has no test traces");
    std::vector<std::size_t> predicted(test.size());
    parallel_for(
        test.size(),
        [&](std::size_t i) { predicted[i] = nn::argmax(model.logits(ds.entries[test[i]].trace.view())); }, threads);

    const std::size_t c = ds.num_classes();
    AttackReport r;
    r.class_names = ds.class_names;
    r.confusion.assign(c, std::vector<std::size_t>(c, 0));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const std::size_t truth = ds.entries[test[i]].label;
        ++r.confusion[truth][predicted[i]];
        correct += truth == predicted[i];
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
    for (std::size_t k = 0; k < c; ++k) {
        std::size_t row = 0;
        for (auto v : r.confusion[k])
            row += v;
        r.per_class_accuracy.push_back(row ? static_cast<double>(r.confusion[k][k]) / static_cast<double>(row) : 0.0);
    }
    r.train_count = ds.count(Split::train);
    r.val_count = ds.count(Split::val);
    r.test_count = test.size();
    return r;
}

struct Identification {
    std::string class_name;
    std::size_t class_index;
    std::vector<double> probabilities;
    bool low_confidence; // max probability below 2 / C
};

/// Single-trace attack: preprocess like the training data, then classify.
inline Identification identify(const nn::Model &model, const Trace &trace,
                               std::optional<dsp::PreprocessConfig> preprocess = std::nullopt) {
    dsp::PreprocessConfig cfg = preprocess.value_or(model_preprocess(model));
    // A single trace has no dataset to agree with: pad or cut it to the model input.
    cfg.target_len = model.input_len();
    cfg.pad_policy = dsp::PadPolicy::zero_pad_right;
    const Trace x = dsp::preprocess(trace, cfg);
    Identification id;
    id.probabilities = model.predict(x.view());
    id.class_index = nn::argmax(id.probabilities);
    id.class_name = model_class_names(model).at(id.class_index);
    const double top = id.probabilities[id.class_index];
    id.low_confidence = top < 2.0 / static_cast<double>(model.num_classes());
    return id;
}

struct AttackRun {
    AttackReport report;
    nn::Model model;
    nn::TrainResult training;
};

/// Simulate, preprocess, train and evaluate. Simulated traces are reduced to
/// their envelopes as they are produced so full-rate traces are never held
/// all at once.
inline AttackRun run_attack(const std::vector<sim::ArchitectureDescriptor> &corpus, const sim::Protocol &protocol,
                            const sim::EmModel &em, const sim::SimConfig &sim_cfg,
                            const dsp::PreprocessConfig &preprocess, const nn::TrainConfig &train_cfg,
                            unsigned threads = 0, const nn::EpochCallback &on_epoch = {}) {
    preprocess.validate();
    const std::size_t window = preprocess.window;
    Dataset raw = sim::simulate_dataset(
        corpus, protocol, em, sim_cfg, [window](Trace t) { return dsp::abs_window_average(t, window); }, threads);
    Dataset ds = build_attack_dataset(raw, preprocess, kDefaultSplitRatio, sim_cfg.rng_seed, threads);
    raw.entries.clear();
    nn::TrainConfig tc = train_cfg;
    tc.threads = threads;
    auto trained = train_attack_model(ds, tc, on_epoch);
    AttackReport report = evaluate(trained.model, ds, threads);
    return {std::move(report), std::move(trained.model), std::move(trained.result)};
}

} // namespace emx::pipeline
