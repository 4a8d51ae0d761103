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

#include <stdexcept>
#include <string>

namespace emx {

enum class Errc {
    invalid_argument,
    io_error,
    bad_magic,
    unsupported_version,
    truncated,
    non_finite,
    parse_error,
    missing_file,
    label_out_of_range,
    duplicate_id,
    bad_split,
    shape_mismatch,
    param_mismatch,
    too_short,
    empty_split,
    runtime,
};

inline const char *errc_name(Errc c) {
    switch (c) {
    case Errc::invalid_argument: return "InvalidArgument";
    case Errc::io_error: return "IoError";
    case Errc::bad_magic: return "BadMagic";
    case Errc::unsupported_version: return "UnsupportedVersion";
    case Errc::truncated: return "Truncated";
    case Errc::non_finite: return "NonFinite";
    case Errc::parse_error: return "ParseError";
    case Errc::missing_file: return "MissingFile";
    case Errc::label_out_of_range: return "LabelOutOfRange";
    case Errc::duplicate_id: return "DuplicateId";
    case Errc::bad_split: return "BadSplit";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::param_mismatch: return "ParamMismatch";
    case Errc::too_short: return "TooShort";
    case Errc::empty_split: return "EmptySplit";
    case Errc::runtime: return "Runtime";
    }
    return "Unknown";
}

/// Library error. The code distinguishes data/format problems (bad files,
/// inconsistent manifests) from misuse and from runtime failures; the CLI
/// maps them onto its exit codes.
class Error : public std::runtime_error {
  public:
    Error(Errc code, const std::string &what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what),
          code_(code) {}

    Errc code() const noexcept { return code_; }

    bool is_data_error() const noexcept {
        return code_ != Errc::invalid_argument && code_ != Errc::runtime;
    }

  private:
    Errc code_;
};

/// ParseError carries the 1-based line number of the offending input line.
class ParseError : public Error {
  public:
    ParseError(std::size_t line, const std::string &what)
        : Error(Errc::parse_error, "line " + std::to_string(line) + ": " + what),
          line_(line) {}

    std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

} // namespace emx
