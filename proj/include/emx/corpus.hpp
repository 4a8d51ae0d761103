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
#include "emx/io.hpp"
#include "emx/simulator.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace emx::sim {

/// Relative tolerance of the declared-vs-counted parameter check.
inline constexpr double kParamTolerance = 0.05;

inline Shape3 shape_from_json(const nlohmann::json &j, const std::string &what) {
    if (!j.is_array() || j.size() != 3)
        throw Error(Errc::parse_error, what + ": expected [H, W, C]");
    return {j[0].get<std::uint32_t>(), j[1].get<std::uint32_t>(), j[2].get<std::uint32_t>()};
}

inline std::array<std::uint32_t, 2> pair_from_json(const nlohmann::json &j, const std::string &what) {
    if (j.is_number_unsigned())
        return {j.get<std::uint32_t>(), j.get<std::uint32_t>()};
    if (!j.is_array() || j.size() != 2)
        throw Error(Errc::parse_error, what + ": expected [a, b]");
    return {j[0].get<std::uint32_t>(), j[1].get<std::uint32_t>()};
}

inline LayerSpec layer_from_json(const nlohmann::json &j, std::size_t index) {
    const std::string where = "layer " + std::to_string(index);
    if (!j.is_object() || !j.contains("kind") || !j.contains("in"))
        throw Error(Errc::parse_error, where + ": needs 'kind' and 'in'");
    LayerSpec l;
    l.kind = parse_kind(j.at("kind").get<std::string>());
    l.name = j.value("name", std::string(kind_name(l.kind)) + "_" + std::to_string(index + 1));
    l.in = shape_from_json(j.at("in"), where + " 'in'");
    l.out_channels = j.value("out_channels", 0u);
    if (j.contains("kernel"))
        l.kernel = pair_from_json(j.at("kernel"), where + " 'kernel'");
    if (j.contains("stride"))
        l.stride = pair_from_json(j.at("stride"), where + " 'stride'");
    l.bias = j.value("bias", true);
    l.branch = j.value("branch", false);
    return l;
}

inline nlohmann::json layer_to_json(const LayerSpec &l) {
    nlohmann::json j = {{"name", l.name}, {"kind", kind_name(l.kind)}, {"in", {l.in.h, l.in.w, l.in.c}}};
    if (uses_out_channels(l.kind))
        j["out_channels"] = l.out_channels;
    j["kernel"] = l.kernel;
    j["stride"] = l.stride;
    j["bias"] = l.bias;
    if (l.branch)
        j["branch"] = true;
    return j;
}

inline ArchitectureDescriptor descriptor_from_json(const nlohmann::json &j) {
    try {
        ArchitectureDescriptor d;
        d.name = j.at("name").get<std::string>();
        if (d.name.empty())
            throw Error(Errc::parse_error, "descriptor name is empty");
        if (j.contains("input_shape"))
            d.input_shape = shape_from_json(j.at("input_shape"), "input_shape");
        if (j.contains("declared_params") && !j.at("declared_params").is_null())
            d.declared_params = j.at("declared_params").get<std::uint64_t>();
        const auto &layers = j.at("layers");
        for (std::size_t i = 0; i < layers.size(); ++i)
            d.layers.push_back(layer_from_json(layers[i], i));
        return d;
    } catch (const nlohmann::json::exception &e) {
        throw Error(Errc::parse_error, std::string("descriptor: ") + e.what());
    }
}

inline nlohmann::json descriptor_to_json(const ArchitectureDescriptor &d) {
    nlohmann::json j = {{"name", d.name}, {"input_shape", {d.input_shape.h, d.input_shape.w, d.input_shape.c}}};
    j["declared_params"] = d.declared_params ? nlohmann::json(*d.declared_params) : nlohmann::json(nullptr);
    j["layers"] = nlohmann::json::array();
    for (const auto &l : d.layers)
        j["layers"].push_back(layer_to_json(l));
    return j;
}

/// Throws param_mismatch when the counted parameters miss the declared
/// figure by more than kParamTolerance.
inline void check_declared_params(const ArchitectureDescriptor &d) {
    if (!d.declared_params)
        return;
    const double counted = static_cast<double>(count_params(d));
    const double declared = static_cast<double>(*d.declared_params);
    if (declared <= 0.0 || std::abs(counted - declared) > kParamTolerance * declared)
        throw Error(Errc::param_mismatch, "descriptor '" + d.name + "': " + std::to_string(count_params(d)) +
                                              " parameters counted, " + std::to_string(*d.declared_params) +
                                              " declared");
}

inline ArchitectureDescriptor load_descriptor(const std::filesystem::path &file) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_text_file(file));
    } catch (const nlohmann::json::exception &e) {
        throw Error(Errc::parse_error, file.string() + ": " + e.what());
    }
    auto d = descriptor_from_json(j);
    validate_descriptor(d);
    check_declared_params(d);
    return d;
}

/// Loads a single descriptor file or every *.json file of a directory, in
/// file-name order. Descriptor names must be unique.
inline std::vector<ArchitectureDescriptor> load_corpus(const std::filesystem::path &path) {
    namespace fs = std::filesystem;
    if (!fs::exists(path))
        throw Error(Errc::missing_file, "corpus path '" + path.string() + "' does not exist");
    std::vector<fs::path> files;
    if (fs::is_directory(path)) {
        for (const auto &e : fs::directory_iterator(path))
            if (e.is_regular_file() && e.path().extension() == ".json")
                files.push_back(e.path());
        std::sort(files.begin(), files.end());
    } else {
        files.push_back(path);
    }
    if (files.empty())
        throw Error(Errc::missing_file, "no descriptor files under '" + path.string() + "'");
    std::vector<ArchitectureDescriptor> corpus;
    std::set<std::string> names;
    for (const auto &f : files) {
        corpus.push_back(load_descriptor(f));
        if (!names.insert(corpus.back().name).second)
            throw Error(Errc::duplicate_id, "duplicate architecture name '" + corpus.back().name + "'");
    }
    return corpus;
}

inline const ArchitectureDescriptor &find_architecture(const std::vector<ArchitectureDescriptor> &corpus,
                                                       const std::string &name) {
    for (const auto &d : corpus)
        if (d.name == name)
            return d;
    throw Error(Errc::invalid_argument, "architecture '" + name + "' not in corpus");
}

} // namespace emx::sim
