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

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace emx {

/// One EM measurement: a finite, non-empty f32 sample sequence (volts) at a
/// positive sample rate, plus free-form string metadata.
class Trace {
  public:
    using Meta = std::map<std::string, std::string>;

    Trace(std::vector<float> samples, double sample_rate_hz, Meta meta = {})
        : samples_(std::move(samples)), rate_(sample_rate_hz), meta_(std::move(meta)) {
        if (samples_.empty())
            throw Error(Errc::invalid_argument, "trace must contain at least one sample");
        if (!(rate_ > 0.0) || !std::isfinite(rate_))
            throw Error(Errc::invalid_argument, "sample rate must be positive and finite");
        for (std::size_t i = 0; i < samples_.size(); ++i)
            if (!std::isfinite(samples_[i]))
                throw Error(Errc::non_finite, "sample " + std::to_string(i) + " is not finite");
    }

    const std::vector<float> &samples() const noexcept { return samples_; }
    std::span<const float> view() const noexcept { return samples_; }
    std::size_t size() const noexcept { return samples_.size(); }
    double sample_rate_hz() const noexcept { return rate_; }

    const Meta &meta() const noexcept { return meta_; }
    void set_meta(const std::string &key, std::string value) { meta_[key] = std::move(value); }
    std::string meta_or(const std::string &key, const std::string &fallback = {}) const {
        auto it = meta_.find(key);
        return it == meta_.end() ? fallback : it->second;
    }

    /// Bit-exact equality: samples are compared as raw 32-bit patterns.
    friend bool operator==(const Trace &a, const Trace &b) {
        if (a.samples_.size() != b.samples_.size() || a.meta_ != b.meta_)
            return false;
        if (std::memcmp(&a.rate_, &b.rate_, sizeof(double)) != 0)
            return false;
        return std::memcmp(a.samples_.data(), b.samples_.data(),
                           a.samples_.size() * sizeof(float)) == 0;
    }

  private:
    std::vector<float> samples_;
    double rate_;
    Meta meta_;
};

// ---------------------------------------------------------------- EMT1 ----
//
// Little-endian layout:
//   magic "EMT1" | version u16 (=1) | meta_count u16 | sample_rate_hz f64 |
//   sample_count u64 | meta entries (key_len u16, key, val_len u16, val) |
//   samples f32[sample_count]
// Fixed header is 24 bytes; total = 24 + meta bytes + 4 * N.

inline constexpr char kEmt1Magic[4] = {'E', 'M', 'T', '1'};
inline constexpr std::uint16_t kEmt1Version = 1;
inline constexpr std::size_t kEmt1HeaderBytes = 24;
inline constexpr std::size_t kMaxMetaBytes = 0xFFFF;

inline std::uint64_t emt1_size(const Trace &t) {
    std::uint64_t n = kEmt1HeaderBytes;
    for (const auto &[k, v] : t.meta())
        n += 4 + k.size() + v.size();
    return n + 4 * static_cast<std::uint64_t>(t.size());
}

inline std::uint64_t write_trace(const Trace &trace, std::ostream &sink) {
    if (trace.meta().size() > 0xFFFF)
        throw Error(Errc::invalid_argument, "too many metadata entries");
    for (const auto &[k, v] : trace.meta())
        if (k.size() > kMaxMetaBytes || v.size() > kMaxMetaBytes)
            throw Error(Errc::invalid_argument, "metadata key/value exceeds 64 KiB: " + k.substr(0, 32));

    sink.write(kEmt1Magic, 4);
    io::put<std::uint16_t>(sink, kEmt1Version);
    io::put<std::uint16_t>(sink, static_cast<std::uint16_t>(trace.meta().size()));
    io::put<double>(sink, trace.sample_rate_hz());
    io::put<std::uint64_t>(sink, trace.size());
    for (const auto &[k, v] : trace.meta()) {
        io::put<std::uint16_t>(sink, static_cast<std::uint16_t>(k.size()));
        sink.write(k.data(), static_cast<std::streamsize>(k.size()));
        io::put<std::uint16_t>(sink, static_cast<std::uint16_t>(v.size()));
        sink.write(v.data(), static_cast<std::streamsize>(v.size()));
    }
    if constexpr (std::endian::native == std::endian::little) {
        sink.write(reinterpret_cast<const char *>(trace.samples().data()),
                   static_cast<std::streamsize>(trace.size() * sizeof(float)));
    } else {
        for (float s : trace.samples())
            io::put<float>(sink, s);
    }
    if (!sink)
        throw Error(Errc::io_error, "failed writing trace");
    return emt1_size(trace);
}

inline Trace read_trace(std::istream &source) {
    char magic[4] = {};
    source.read(magic, 4);
    if (source.gcount() != 4 || std::memcmp(magic, kEmt1Magic, 4) != 0)
        throw Error(Errc::bad_magic, "not an EMT1 trace");
    const auto version = io::get<std::uint16_t>(source, "version");
    if (version != kEmt1Version)
        throw Error(Errc::unsupported_version, "EMT1 version " + std::to_string(version));
    const auto meta_count = io::get<std::uint16_t>(source, "meta_count");
    const auto rate = io::get<double>(source, "sample_rate_hz");
    const auto count = io::get<std::uint64_t>(source, "sample_count");

    Trace::Meta meta;
    for (std::uint16_t i = 0; i < meta_count; ++i) {
        const auto klen = io::get<std::uint16_t>(source, "meta key length");
        std::string key = io::get_bytes(source, klen, "meta key");
        const auto vlen = io::get<std::uint16_t>(source, "meta value length");
        meta[std::move(key)] = io::get_bytes(source, vlen, "meta value");
    }

    // Read in bounded chunks so a corrupt count cannot trigger a huge allocation.
    std::vector<float> samples;
    constexpr std::uint64_t chunk = 1 << 20;
    for (std::uint64_t done = 0; done < count;) {
        const std::uint64_t n = std::min(chunk, count - done);
        const std::size_t old = samples.size();
        samples.resize(old + n);
        source.read(reinterpret_cast<char *>(samples.data() + old),
                    static_cast<std::streamsize>(n * sizeof(float)));
        if (source.gcount() != static_cast<std::streamsize>(n * sizeof(float)))
            throw Error(Errc::truncated, "payload ends after " + std::to_string(done) + " samples");
        done += n;
    }
    if constexpr (std::endian::native == std::endian::big)
        for (auto &s : samples)
            s = io::to_little(s);
    return Trace(std::move(samples), rate, std::move(meta));
}

inline void save_trace(const std::filesystem::path &path, const Trace &trace) {
    io::write_file_atomic(path, [&](std::ostream &os) { write_trace(trace, os); });
}

inline Trace load_trace(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(Errc::missing_file, "cannot open trace " + path.string());
    return read_trace(in);
}

// ---------------------------------------------------------------- CSV -----

/// Oscilloscope CSV export: one value per line, the first line may be a
/// header. Blank lines are ignored.
inline Trace import_csv(std::istream &text, double sample_rate_hz) {
    std::vector<float> samples;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(text, line)) {
        ++lineno;
        std::string_view v(line);
        while (!v.empty() && std::isspace(static_cast<unsigned char>(v.front())))
            v.remove_prefix(1);
        while (!v.empty() && std::isspace(static_cast<unsigned char>(v.back())))
            v.remove_suffix(1);
        if (v.empty())
            continue;
        if (!v.empty() && v.front() == '+')
            v.remove_prefix(1);
        double x = 0.0;
        auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
        const bool ok = ec == std::errc() && ptr == v.data() + v.size() && std::isfinite(x);
        if (!ok) {
            if (lineno == 1)
                continue; // header
            throw ParseError(lineno, "not a finite number: '" + std::string(v) + "'");
        }
        samples.push_back(static_cast<float>(x));
    }
    if (samples.empty())
        throw Error(Errc::parse_error, "CSV contains no samples");
    return Trace(std::move(samples), sample_rate_hz);
}

// ---------------------------------------------------------------- Dataset -

enum class Split { train, val, test };

inline const char *split_name(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "?";
}

inline Split parse_split(const std::string &s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw Error(Errc::bad_split, "unknown split tag '" + s + "'");
}

struct DatasetEntry {
    std::string id;
    Trace trace;
    std::size_t label;
    Split split;
};

struct Dataset {
    std::vector<std::string> class_names;
    std::vector<DatasetEntry> entries;
    nlohmann::json provenance = nlohmann::json::object();

    std::size_t num_classes() const { return class_names.size(); }

    std::size_t count(Split s) const {
        return static_cast<std::size_t>(std::count_if(
            entries.begin(), entries.end(), [s](const DatasetEntry &e) { return e.split == s; }));
    }

    std::vector<std::size_t> indices(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < entries.size(); ++i)
            if (entries[i].split == s)
                out.push_back(i);
        return out;
    }

    void validate() const {
        std::set<std::string> names;
        for (const auto &n : class_names)
            if (!names.insert(n).second)
                throw Error(Errc::duplicate_id, "duplicate class name '" + n + "'");
        std::set<std::string> ids;
        for (const auto &e : entries) {
            if (e.label >= class_names.size())
                throw Error(Errc::label_out_of_range,
                            "trace '" + e.id + "' has label " + std::to_string(e.label) +
                                " but only " + std::to_string(class_names.size()) + " classes");
            if (!ids.insert(e.id).second)
                throw Error(Errc::duplicate_id, "duplicate trace id '" + e.id + "'");
        }
    }
};

inline constexpr const char *kManifestName = "manifest.json";

/// Writes `dir/manifest.json` and one EMT1 file per trace under `dir/traces`.
/// The directory is assembled under a temporary name and renamed into place.
inline void dataset_save(const Dataset &ds, const std::filesystem::path &dir) {
    namespace fs = std::filesystem;
    ds.validate();
    if (fs::exists(dir) && !fs::is_empty(dir))
        throw Error(Errc::io_error, "output directory exists and is not empty: " + dir.string());

    const fs::path tmp = dir.string() + ".partial";
    fs::remove_all(tmp);
    try {
        fs::create_directories(tmp / "traces");
        nlohmann::json records = nlohmann::json::array();
        for (std::size_t i = 0; i < ds.entries.size(); ++i) {
            const auto &e = ds.entries[i];
            char name[32];
            std::snprintf(name, sizeof name, "%06zu.emt", i);
            const fs::path rel = fs::path("traces") / name;
            std::ofstream out(tmp / rel, std::ios::binary);
            if (!out)
                throw Error(Errc::io_error, "cannot create " + (tmp / rel).string());
            write_trace(e.trace, out);
            records.push_back({{"id", e.id},
                               {"file", rel.generic_string()},
                               {"label", e.label},
                               {"split", split_name(e.split)},
                               {"meta", e.trace.meta()}});
        }
        nlohmann::json doc = {{"format", "emx-dataset"},
                              {"version", 1},
                              {"class_names", ds.class_names},
                              {"provenance", ds.provenance},
                              {"traces", std::move(records)}};
        std::ofstream(tmp / kManifestName) << doc.dump(1) << '\n';
        if (fs::exists(dir))
            fs::remove(dir);
        fs::rename(tmp, dir);
    } catch (...) {
        std::error_code ec;
        fs::remove_all(tmp, ec);
        throw;
    }
}

/// Loads a dataset from a manifest file or a directory containing one, and
/// validates every invariant (labels, unique ids and class names, split tags,
/// referenced files).
inline Dataset dataset_load(const std::filesystem::path &path) {
    namespace fs = std::filesystem;
    const fs::path manifest = fs::is_directory(path) ? path / kManifestName : path;
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(io::read_text_file(manifest));
    } catch (const nlohmann::json::exception &e) {
        throw Error(Errc::parse_error, manifest.string() + ": " + e.what());
    }
    const fs::path base = manifest.parent_path();

    Dataset ds;
    try {
        ds.class_names = doc.at("class_names").get<std::vector<std::string>>();
        if (doc.contains("provenance"))
            ds.provenance = doc["provenance"];
        // Validate the whole manifest before touching any trace file.
        std::set<std::string> ids;
        for (const auto &r : doc.at("traces")) {
            const auto id = r.at("id").get<std::string>();
            if (!ids.insert(id).second)
                throw Error(Errc::duplicate_id, "duplicate trace id '" + id + "'");
            const auto label = r.at("label").get<std::int64_t>();
            if (label < 0 || static_cast<std::size_t>(label) >= ds.class_names.size())
                throw Error(Errc::label_out_of_range,
                            "trace '" + id + "' label " + std::to_string(label));
            parse_split(r.at("split").get<std::string>());
        }
        for (const auto &r : doc.at("traces")) {
            const fs::path file = base / r.at("file").get<std::string>();
            if (!fs::exists(file))
                throw Error(Errc::missing_file, "missing trace file " + file.string());
            Trace t = load_trace(file);
            if (r.contains("meta"))
                for (const auto &[k, v] : r["meta"].items())
                    if (!t.meta().count(k))
                        t.set_meta(k, v.get<std::string>());
            ds.entries.push_back({r.at("id").get<std::string>(), std::move(t),
                                  r.at("label").get<std::size_t>(),
                                  parse_split(r.at("split").get<std::string>())});
        }
    } catch (const nlohmann::json::exception &e) {
        throw Error(Errc::parse_error, manifest.string() + ": " + e.what());
    }
    ds.validate();
    return ds;
}

} // namespace emx
