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
#include "emx/nn/model.hpp"

#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace emx::nn {

// Layout (little-endian): magic "EMXC" | version u32 | header_len u32 |
// UTF-8 JSON header (layers, input_len, num_classes, seed, info) | for each
// parameterized layer in order: weights f64[], bias f64[].

inline constexpr char kCheckpointMagic[4] = {'E', 'M', 'X', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline nlohmann::json checkpoint_header(const Model &m) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto &l : m.spec())
        layers.push_back(layer_to_json(l));
    return {{"layers", layers},
            {"input_len", m.input_len()},
            {"num_classes", m.num_classes()},
            {"seed", m.seed()},
            {"info", m.info}};
}

inline void write_checkpoint(const Model &m, std::ostream &os) {
    const std::string header = checkpoint_header(m).dump();
    os.write(kCheckpointMagic, 4);
    io::put<std::uint32_t>(os, kCheckpointVersion);
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(header.size()));
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto &l : m.layers()) {
        for (double w : l.weights.data)
            io::put<double>(os, w);
        for (double b : l.bias.data)
            io::put<double>(os, b);
    }
    if (!os)
        throw Error(Errc::io_error, "failed writing checkpoint");
}

inline Model read_checkpoint(std::istream &is) {
    const std::string magic = io::get_bytes(is, 4, "checkpoint magic");
    if (magic != std::string(kCheckpointMagic, 4))
        throw Error(Errc::bad_magic, "not a checkpoint file");
    const auto version = io::get<std::uint32_t>(is, "checkpoint version");
    if (version != kCheckpointVersion)
        throw Error(Errc::unsupported_version, "checkpoint version " + std::to_string(version));
    const auto header_len = io::get<std::uint32_t>(is, "checkpoint header length");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(io::get_bytes(is, header_len, "checkpoint header"));
    } catch (const nlohmann::json::exception &e) {
        throw Error(Errc::parse_error, std::string("checkpoint header: ") + e.what());
    }
    std::vector<LayerConfig> spec;
    for (const auto &l : header.at("layers"))
        spec.push_back(layer_from_json(l));
    Model m(std::move(spec), header.at("input_len").get<std::size_t>(), header.at("seed").get<std::uint64_t>());
    if (m.num_classes() != header.at("num_classes").get<std::size_t>())
        throw Error(Errc::shape_mismatch, "checkpoint num_classes disagrees with its layers");
    m.info = header.value("info", nlohmann::json::object());
    for (auto &l : m.layers()) {
        for (double &w : l.weights.data)
            w = io::get<double>(is, "checkpoint weights");
        for (double &b : l.bias.data)
            b = io::get<double>(is, "checkpoint bias");
    }
    return m;
}

inline void save_checkpoint(const std::filesystem::path &path, const Model &m) {
    io::write_file_atomic(path, [&](std::ostream &os) { write_checkpoint(m, os); });
}

inline Model load_checkpoint(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(Errc::missing_file, "cannot open checkpoint '" + path.string() + "'");
    return read_checkpoint(in);
}

} // namespace emx::nn
