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

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace emx::nn {

/// Dense row-major f64 array.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shp) : shape(std::move(shp)), data(volume(shape), 0.0) {}

    Tensor(std::vector<std::size_t> shp, std::vector<double> values)
        : shape(std::move(shp)), data(std::move(values)) {
        if (data.size() != volume(shape))
            throw Error(Errc::shape_mismatch, "tensor data length " + std::to_string(data.size()) +
                                                  " does not match shape volume " +
                                                  std::to_string(volume(shape)));
    }

    static std::size_t volume(const std::vector<std::size_t> &shp) {
        for (auto d : shp)
            if (d == 0)
                throw Error(Errc::shape_mismatch, "tensor dimensions must be positive");
        return std::accumulate(shp.begin(), shp.end(), std::size_t{1}, std::multiplies<>());
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }

    double &operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    friend bool operator==(const Tensor &, const Tensor &) = default;
};

inline std::string shape_string(const std::vector<std::size_t> &shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i)
        s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
}

inline void require_rank(const Tensor &t, std::size_t rank, const char *what) {
    if (t.rank() != rank)
        throw Error(Errc::shape_mismatch, std::string(what) + " must have rank " + std::to_string(rank) +
                                              ", got " + shape_string(t.shape));
}

} // namespace emx::nn
