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
#include "emx/io.hpp"
#include "emx/nn/train.hpp"
#include "emx/simulator.hpp"

#include "json.hpp"

#include <filesystem>
#include <set>
#include <string>

namespace emx {

// JSON mapping of the configuration structs. Keys mirror the field names;
// absent keys keep their defaults, unknown keys are rejected.

namespace detail {

inline void reject_unknown(const nlohmann::json &j, const std::set<std::string> &known, const char *section) {
    if (!j.is_object())
        throw Error(Errc::parse_error, std::string(section) + " must be an object");
    for (const auto &[k, v] : j.items())
        if (!known.count(k))
            throw Error(Errc::parse_error, std::string(section) + ": unknown key '" + k + "'");
}

template <typename T> void read(const nlohmann::json &j, const char *key, T &dst) {
    if (j.contains(key))
        dst = j.at(key).get<T>();
}

template <typename T, std::size_t N>
void read_per_kind(const nlohmann::json &j, const char *key, std::array<T, N> &dst) {
    if (!j.contains(key))
        return;
    const auto &m = j.at(key);
    if (!m.is_object())
        throw Error(Errc::parse_error, std::string(key) + " must map layer kinds to values");
    for (const auto &[kind, v] : m.items())
        dst[static_cast<std::size_t>(sim::parse_kind(kind))] = v.template get<T>();
}

template <typename T, std::size_t N> nlohmann::json per_kind(const std::array<T, N> &a) {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < N; ++i)
        j[sim::kLayerKindNames[i]] = a[i];
    return j;
}

} // namespace detail

inline nlohmann::json to_json(const sim::EmModel &m) {
    return {{"base_amplitude", detail::per_kind(m.base_amplitude)},
            {"amplitude_per_log_mac", m.amplitude_per_log_mac},
            {"kernel_gap_s", m.kernel_gap_s},
            {"throughput_macs_per_s", m.throughput_macs_per_s},
            {"min_kernel_s", m.min_kernel_s},
            {"kernel_launches", detail::per_kind(m.kernel_launches)},
            {"noise_sigma", m.noise_sigma},
            {"timing_jitter_rel", m.timing_jitter_rel},
            {"weight_effect_rel", m.weight_effect_rel}};
}

inline sim::EmModel em_model_from_json(const nlohmann::json &j, sim::EmModel m = sim::EmModel::defaults()) {
    detail::reject_unknown(j,
                           {"base_amplitude", "amplitude_per_log_mac", "kernel_gap_s", "throughput_macs_per_s",
                            "min_kernel_s", "kernel_launches", "noise_sigma", "timing_jitter_rel",
                            "weight_effect_rel"},
                           "em_model");
    detail::read_per_kind(j, "base_amplitude", m.base_amplitude);
    detail::read(j, "amplitude_per_log_mac", m.amplitude_per_log_mac);
    detail::read(j, "kernel_gap_s", m.kernel_gap_s);
    detail::read(j, "throughput_macs_per_s", m.throughput_macs_per_s);
    detail::read(j, "min_kernel_s", m.min_kernel_s);
    detail::read_per_kind(j, "kernel_launches", m.kernel_launches);
    detail::read(j, "noise_sigma", m.noise_sigma);
    detail::read(j, "timing_jitter_rel", m.timing_jitter_rel);
    detail::read(j, "weight_effect_rel", m.weight_effect_rel);
    m.validate();
    return m;
}

inline nlohmann::json to_json(const sim::SimConfig &c) {
    return {{"sample_rate_hz", c.sample_rate_hz},
            {"gpu_clock_hz", c.gpu_clock_hz},
            {"clock_tone_amplitude", c.clock_tone_amplitude},
            {"rng_seed", c.rng_seed}};
}

inline sim::SimConfig sim_config_from_json(const nlohmann::json &j, sim::SimConfig c = {}) {
    detail::reject_unknown(j, {"sample_rate_hz", "gpu_clock_hz", "clock_tone_amplitude", "rng_seed"}, "sim_config");
    detail::read(j, "sample_rate_hz", c.sample_rate_hz);
    detail::read(j, "gpu_clock_hz", c.gpu_clock_hz);
    detail::read(j, "clock_tone_amplitude", c.clock_tone_amplitude);
    detail::read(j, "rng_seed", c.rng_seed);
    c.validate();
    return c;
}

inline nlohmann::json to_json(const nn::TrainConfig &c) {
    return {{"max_epochs", c.max_epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"optimizer", nn::optimizer_name(c.optimizer)},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"epsilon", c.epsilon},
            {"early_stop_patience", c.early_stop_patience},
            {"early_stop_metric", c.early_stop_metric},
            {"rng_seed", c.rng_seed}};
}

inline nn::TrainConfig train_config_from_json(const nlohmann::json &j, nn::TrainConfig c = {}) {
    detail::reject_unknown(j,
                           {"max_epochs", "batch_size", "learning_rate", "optimizer", "beta1", "beta2", "epsilon",
                            "early_stop_patience", "early_stop_metric", "rng_seed"},
                           "train_config");
    detail::read(j, "max_epochs", c.max_epochs);
    detail::read(j, "batch_size", c.batch_size);
    detail::read(j, "learning_rate", c.learning_rate);
    if (j.contains("optimizer"))
        c.optimizer = nn::parse_optimizer(j.at("optimizer").get<std::string>());
    detail::read(j, "beta1", c.beta1);
    detail::read(j, "beta2", c.beta2);
    detail::read(j, "epsilon", c.epsilon);
    detail::read(j, "early_stop_patience", c.early_stop_patience);
    detail::read(j, "early_stop_metric", c.early_stop_metric);
    detail::read(j, "rng_seed", c.rng_seed);
    c.validate();
    return c;
}

inline nlohmann::json to_json(const dsp::PreprocessConfig &c) {
    nlohmann::json j = {{"window", c.window},
                        {"normalize", dsp::normalize_name(c.normalize)},
                        {"pad_policy", dsp::pad_policy_name(c.pad_policy)}};
    j["target_len"] = c.target_len ? nlohmann::json(*c.target_len) : nlohmann::json(nullptr);
    return j;
}

inline dsp::PreprocessConfig preprocess_from_json(const nlohmann::json &j, dsp::PreprocessConfig c = {}) {
    detail::reject_unknown(j, {"window", "normalize", "target_len", "pad_policy"}, "preprocess");
    detail::read(j, "window", c.window);
    if (j.contains("normalize"))
        c.normalize = dsp::parse_normalize(j.at("normalize").get<std::string>());
    if (j.contains("target_len"))
        c.target_len = j.at("target_len").is_null() ? std::nullopt
                                                     : std::optional(j.at("target_len").get<std::size_t>());
    if (j.contains("pad_policy"))
        c.pad_policy = dsp::parse_pad_policy(j.at("pad_policy").get<std::string>());
    c.validate();
    return c;
}

inline nlohmann::json to_json(const sim::Protocol &p) {
    return {{"n_train_models", p.n_train_models},
            {"n_test_models", p.n_test_models},
            {"traces_per_train_model", p.traces_per_train_model},
            {"traces_per_test_model", p.traces_per_test_model}};
}

inline sim::Protocol protocol_from_json(const nlohmann::json &j, sim::Protocol p = {}) {
    detail::reject_unknown(
        j, {"n_train_models", "n_test_models", "traces_per_train_model", "traces_per_test_model"}, "protocol");
    detail::read(j, "n_train_models", p.n_train_models);
    detail::read(j, "n_test_models", p.n_test_models);
    detail::read(j, "traces_per_train_model", p.traces_per_train_model);
    detail::read(j, "traces_per_test_model", p.traces_per_test_model);
    return p;
}

/// Everything a run can be configured with; loaded from one JSON document
/// with optional sections em_model, sim_config, train_config, preprocess.
struct RunConfig {
    sim::EmModel em_model = sim::EmModel::defaults();
    sim::SimConfig sim_config;
    nn::TrainConfig train_config;
    dsp::PreprocessConfig preprocess;
};

inline RunConfig run_config_from_json(const nlohmann::json &j) {
    try {
        detail::reject_unknown(j, {"em_model", "sim_config", "train_config", "preprocess"}, "config");
        RunConfig c;
        if (j.contains("em_model"))
            c.em_model = em_model_from_json(j.at("em_model"));
        if (j.contains("sim_config"))
            c.sim_config = sim_config_from_json(j.at("sim_config"));
        if (j.contains("train_config"))
            c.train_config = train_config_from_json(j.at("train_config"));
        if (j.contains("preprocess"))
            c.preprocess = preprocess_from_json(j.at("preprocess"));
        return c;
    } catch (const nlohmann::json::exception &e) {
        throw Error(Errc::parse_error, std::string("config: ") + e.what());
    }
}

inline RunConfig load_run_config(const std::filesystem::path &path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_text_file(path));
    } catch (const nlohmann::json::exception &e) {
        throw Error(Errc::parse_error, path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

inline nlohmann::json to_json(const RunConfig &c) {
    return {{"em_model", to_json(c.em_model)},
            {"sim_config", to_json(c.sim_config)},
            {"train_config", to_json(c.train_config)},
            {"preprocess", to_json(c.preprocess)}};
}

} // namespace emx
