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

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <type_traits>

namespace emx::io {

template <typename T> T to_little(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char buf[sizeof(T)];
        std::memcpy(buf, &v, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
            std::swap(buf[i], buf[sizeof(T) - 1 - i]);
        std::memcpy(&v, buf, sizeof(T));
    }
    return v;
}

template <typename T> void put(std::ostream &os, T v) {
    v = to_little(v);
    os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <typename T> T get(std::istream &is, const char *what) {
    T v;
    is.read(reinterpret_cast<char *>(&v), sizeof(T));
    if (is.gcount() != static_cast<std::streamsize>(sizeof(T)))
        throw Error(Errc::truncated, std::string("unexpected end of data reading ") + what);
    return to_little(v);
}

inline std::string get_bytes(std::istream &is, std::size_t n, const char *what) {
    std::string s(n, '\0');
    if (n) {
        is.read(s.data(), static_cast<std::streamsize>(n));
        if (is.gcount() != static_cast<std::streamsize>(n))
            throw Error(Errc::truncated, std::string("unexpected end of data reading ") + what);
    }
    return s;
}

inline std::string read_text_file(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(Errc::missing_file, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes through `fill` into a sibling temp file, then renames it over
/// `path`. A failure leaves no file at `path`.
inline void write_file_atomic(const std::filesystem::path &path,
                              const std::function<void(std::ostream &)> &fill) {
    namespace fs = std::filesystem;
    std::random_device rd;
    const fs::path tmp = path.string() + ".tmp" + std::to_string(rd() % 1000000);
    try {
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out)
                throw Error(Errc::io_error, "cannot create " + tmp.string());
            fill(out);
            out.flush();
            if (!out)
                throw Error(Errc::io_error, "write failed for " + tmp.string());
        }
        fs::rename(tmp, path);
    } catch (...) {
        std::error_code ec;
        fs::remove(tmp, ec);
        throw;
    }
}

inline void write_text_atomic(const std::filesystem::path &path, const std::string &text) {
    write_file_atomic(path, [&](std::ostream &os) { os << text; });
}

} // namespace emx::io
