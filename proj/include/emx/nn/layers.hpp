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
#include "emx/nn/tensor.hpp"
#include "emx/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <span>
#include <vector>

namespace emx::nn {

inline std::size_t conv_out_len(std::size_t len, std::size_t kernel, std::size_t stride) {
    if (kernel == 0 || stride == 0)
        throw Error(Errc::invalid_argument, "kernel and stride must be positive");
    if (len < kernel)
        throw Error(Errc::too_short, "input length " + std::to_string(len) + " is shorter than window " +
                                         std::to_string(kernel));
    return (len - kernel) / stride + 1;
}

// Single-sample kernels on raw row-major buffers. x is [len, c_in], w is
// [kernel, c_in, c_out], y is [len_out, c_out].

namespace kernel {

namespace detail {

// CO is the output channel count when known at compile time (0 = runtime
// `c_out`), which lets the accumulators live in registers.
template <std::size_t CO>
inline void conv1d_fwd(const double *x, std::size_t len, std::size_t c_in, const double *w, std::size_t k,
                       std::size_t c_out, const double *b, std::size_t stride, double *y) {
    const std::size_t co = CO ? CO : c_out;
    const std::size_t len_out = conv_out_len(len, k, stride);
    const std::size_t row = k * c_in; // window is contiguous in x
    std::vector<double> heap(CO ? 0 : co);
    double stack[CO ? CO : 1];
    double *acc = CO ? stack : heap.data();
    for (std::size_t i = 0; i < len_out; ++i) {
        for (std::size_t o = 0; o < co; ++o)
            acc[o] = b[o];
        const double *xi = x + i * stride * c_in;
        for (std::size_t r = 0; r < row; ++r) {
            const double xv = xi[r];
            const double *wr = w + r * co;
            for (std::size_t o = 0; o < co; ++o)
                acc[o] += xv * wr[o];
        }
        std::copy(acc, acc + co, y + i * co);
    }
}

template <std::size_t CO>
inline void conv1d_bwd(const double *x, std::size_t len, std::size_t c_in, const double *w, std::size_t k,
                       std::size_t c_out, std::size_t stride, const double *gy, double *gx, double *gw,
                       double *gb) {
    const std::size_t co = CO ? CO : c_out;
    const std::size_t len_out = conv_out_len(len, k, stride);
    const std::size_t row = k * c_in;
    for (std::size_t i = 0; i < len_out; ++i)
        for (std::size_t o = 0; o < co; ++o)
            gb[o] += gy[i * co + o];
    std::vector<double> heap(CO ? 0 : co);
    double stack[CO ? CO : 1];
    double *acc = CO ? stack : heap.data();
    // one pass over the weight gradient, summing over output positions inside
    for (std::size_t r = 0; r < row; ++r) {
        std::fill(acc, acc + co, 0.0);
        for (std::size_t i = 0; i < len_out; ++i) {
            const double xv = x[i * stride * c_in + r];
            const double *gi = gy + i * co;
            for (std::size_t o = 0; o < co; ++o)
                acc[o] += xv * gi[o];
        }
        double *gwr = gw + r * co;
        for (std::size_t o = 0; o < co; ++o)
            gwr[o] += acc[o];
    }
    if (gx) {
        std::fill(gx, gx + len * c_in, 0.0);
        for (std::size_t i = 0; i < len_out; ++i) {
            const double *gi = gy + i * co;
            double *gxi = gx + i * stride * c_in;
            for (std::size_t r = 0; r < row; ++r) {
                const double *wr = w + r * co;
                double s = 0.0;
                for (std::size_t o = 0; o < co; ++o)
                    s += wr[o] * gi[o];
                gxi[r] += s;
            }
        }
    }
}

} // namespace detail

inline void conv1d_fwd(const double *x, std::size_t len, std::size_t c_in, const double *w, std::size_t k,
                       std::size_t c_out, const double *b, std::size_t stride, double *y) {
    if (c_out == 32)
        detail::conv1d_fwd<32>(x, len, c_in, w, k, c_out, b, stride, y);
    else
        detail::conv1d_fwd<0>(x, len, c_in, w, k, c_out, b, stride, y);
}

/// Accumulates into gw and gb; overwrites gx when non-null.
inline void conv1d_bwd(const double *x, std::size_t len, std::size_t c_in, const double *w, std::size_t k,
                       std::size_t c_out, std::size_t stride, const double *gy, double *gx, double *gw,
                       double *gb) {
    if (c_out == 32)
        detail::conv1d_bwd<32>(x, len, c_in, w, k, c_out, stride, gy, gx, gw, gb);
    else
        detail::conv1d_bwd<0>(x, len, c_in, w, k, c_out, stride, gy, gx, gw, gb);
}

/// Window max per channel; the first occurrence wins ties.
inline void maxpool1d_fwd(const double *x, std::size_t len, std::size_t ch, std::size_t pool,
                          std::size_t stride, double *y, std::size_t *arg) {
    const std::size_t len_out = conv_out_len(len, pool, stride);
    for (std::size_t i = 0; i < len_out; ++i)
        for (std::size_t c = 0; c < ch; ++c) {
            std::size_t best = i * stride * ch + c;
            for (std::size_t p = 1; p < pool; ++p) {
                const std::size_t idx = (i * stride + p) * ch + c;
                if (x[idx] > x[best])
                    best = idx;
            }
            y[i * ch + c] = x[best];
            arg[i * ch + c] = best;
        }
}

inline void maxpool1d_bwd(const double *gy, const std::size_t *arg, std::size_t n_out, double *gx,
                          std::size_t n_in) {
    std::fill(gx, gx + n_in, 0.0);
    for (std::size_t j = 0; j < n_out; ++j)
        gx[arg[j]] += gy[j];
}

/// y = x W + b with W stored [in, out].
inline void dense_fwd(const double *x, std::size_t in, const double *w, std::size_t out, const double *b,
                      double *y) {
    std::copy(b, b + out, y);
    for (std::size_t i = 0; i < in; ++i) {
        const double xv = x[i];
        const double *wi = w + i * out;
        for (std::size_t o = 0; o < out; ++o)
            y[o] += xv * wi[o];
    }
}

inline void dense_bwd(const double *x, std::size_t in, const double *w, std::size_t out, const double *gy,
                      double *gx, double *gw, double *gb) {
    for (std::size_t o = 0; o < out; ++o)
        gb[o] += gy[o];
    for (std::size_t i = 0; i < in; ++i) {
        const double xv = x[i];
        double *gwi = gw + i * out;
        const double *wi = w + i * out;
        double acc = 0.0;
        for (std::size_t o = 0; o < out; ++o) {
            gwi[o] += xv * gy[o];
            acc += wi[o] * gy[o];
        }
        if (gx)
            gx[i] = acc;
    }
}

} // namespace kernel

// ----------------------------------------------------------- batch API ----

/// Valid convolution: x [N, L, C_in], w [K, C_in, C_out], b [C_out] ->
/// [N, floor((L - K) / stride) + 1, C_out].
inline Tensor conv1d_forward(const Tensor &x, const Tensor &w, const Tensor &b, std::size_t stride) {
    require_rank(x, 3, "conv1d input");
    require_rank(w, 3, "conv1d weights");
    require_rank(b, 1, "conv1d bias");
    const std::size_t n = x.dim(0), len = x.dim(1), c_in = x.dim(2);
    const std::size_t k = w.dim(0), c_out = w.dim(2);
    if (w.dim(1) != c_in || b.dim(0) != c_out)
        throw Error(Errc::shape_mismatch, "conv1d weight/bias shapes do not match input channels");
    const std::size_t len_out = conv_out_len(len, k, stride);
    Tensor y({n, len_out, c_out});
    for (std::size_t s = 0; s < n; ++s)
        kernel::conv1d_fwd(x.data.data() + s * len * c_in, len, c_in, w.data.data(), k, c_out, b.data.data(),
                           stride, y.data.data() + s * len_out * c_out);
    return y;
}

struct Conv1dGrads {
    Tensor grad_x, grad_w, grad_b;
};

inline Conv1dGrads conv1d_backward(const Tensor &grad_out, const Tensor &x, const Tensor &w, std::size_t stride) {
    const std::size_t n = x.dim(0), len = x.dim(1), c_in = x.dim(2);
    const std::size_t k = w.dim(0), c_out = w.dim(2);
    const std::size_t len_out = conv_out_len(len, k, stride);
    if (grad_out.shape != std::vector<std::size_t>{n, len_out, c_out})
        throw Error(Errc::shape_mismatch, "conv1d grad_out has shape " + shape_string(grad_out.shape));
    Conv1dGrads g{Tensor(x.shape), Tensor(w.shape), Tensor({c_out})};
    for (std::size_t s = 0; s < n; ++s)
        kernel::conv1d_bwd(x.data.data() + s * len * c_in, len, c_in, w.data.data(), k, c_out, stride,
                           grad_out.data.data() + s * len_out * c_out, g.grad_x.data.data() + s * len * c_in,
                           g.grad_w.data.data(), g.grad_b.data.data());
    return g;
}

struct PoolResult {
    Tensor out;
    std::vector<std::size_t> argmax; // flat index into the input, per output element
};

inline PoolResult maxpool1d_forward(const Tensor &x, std::size_t pool, std::size_t stride) {
    require_rank(x, 3, "maxpool input");
    const std::size_t n = x.dim(0), len = x.dim(1), ch = x.dim(2);
    const std::size_t len_out = conv_out_len(len, pool, stride);
    PoolResult r{Tensor({n, len_out, ch}), std::vector<std::size_t>(n * len_out * ch)};
    for (std::size_t s = 0; s < n; ++s) {
        std::size_t *arg = r.argmax.data() + s * len_out * ch;
        kernel::maxpool1d_fwd(x.data.data() + s * len * ch, len, ch, pool, stride,
                              r.out.data.data() + s * len_out * ch, arg);
        for (std::size_t j = 0; j < len_out * ch; ++j)
            arg[j] += s * len * ch;
    }
    return r;
}

inline Tensor maxpool1d_backward(const Tensor &grad_out, const std::vector<std::size_t> &argmax,
                                 const std::vector<std::size_t> &input_shape) {
    if (grad_out.size() != argmax.size())
        throw Error(Errc::shape_mismatch, "maxpool grad_out does not match the forward pass");
    Tensor gx(input_shape);
    kernel::maxpool1d_bwd(grad_out.data.data(), argmax.data(), argmax.size(), gx.data.data(), gx.size());
    return gx;
}

/// x [N, in], w [in, out], b [out] -> [N, out].
inline Tensor dense_forward(const Tensor &x, const Tensor &w, const Tensor &b) {
    require_rank(x, 2, "dense input");
    require_rank(w, 2, "dense weights");
    const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(1);
    if (w.dim(0) != in || b.size() != out)
        throw Error(Errc::shape_mismatch, "dense weight/bias shapes do not match input");
    Tensor y({n, out});
    for (std::size_t s = 0; s < n; ++s)
        kernel::dense_fwd(x.data.data() + s * in, in, w.data.data(), out, b.data.data(), y.data.data() + s * out);
    return y;
}

struct DenseGrads {
    Tensor grad_x, grad_w, grad_b;
};

inline DenseGrads dense_backward(const Tensor &grad_out, const Tensor &x, const Tensor &w) {
    const std::size_t n = x.dim(0), in = x.dim(1), out = w.dim(1);
    if (grad_out.shape != std::vector<std::size_t>{n, out})
        throw Error(Errc::shape_mismatch, "dense grad_out has shape " + shape_string(grad_out.shape));
    DenseGrads g{Tensor(x.shape), Tensor(w.shape), Tensor({out})};
    for (std::size_t s = 0; s < n; ++s)
        kernel::dense_bwd(x.data.data() + s * in, in, w.data.data(), out, grad_out.data.data() + s * out,
                          g.grad_x.data.data() + s * in, g.grad_w.data.data(), g.grad_b.data.data());
    return g;
}

inline Tensor relu_forward(const Tensor &x) {
    Tensor y = x;
    for (auto &v : y.data)
        v = v > 0.0 ? v : 0.0;
    return y;
}

inline Tensor relu_backward(const Tensor &grad_out, const Tensor &x) {
    if (grad_out.shape != x.shape)
        throw Error(Errc::shape_mismatch, "relu grad_out does not match input");
    Tensor g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i)
        if (!(x[i] > 0.0))
            g[i] = 0.0;
    return g;
}

struct DropoutResult {
    Tensor out;
    std::vector<double> mask; // 0 or 1/keep per element; empty in eval mode
};

/// Inverted dropout: kept units are scaled by 1/(1 - rate) during training,
/// so evaluation is the identity.
inline DropoutResult dropout_forward(const Tensor &x, double rate, bool training, Rng &rng) {
    if (!(rate >= 0.0 && rate < 1.0))
        throw Error(Errc::invalid_argument, "dropout rate must lie in [0, 1)");
    if (!training || rate == 0.0)
        return {x, {}};
    const double keep = 1.0 - rate;
    std::bernoulli_distribution coin(keep);
    DropoutResult r{x, std::vector<double>(x.size())};
    for (std::size_t i = 0; i < x.size(); ++i) {
        r.mask[i] = coin(rng) ? 1.0 / keep : 0.0;
        r.out[i] *= r.mask[i];
    }
    return r;
}

inline Tensor dropout_backward(const Tensor &grad_out, const std::vector<double> &mask) {
    if (mask.empty())
        return grad_out;
    if (mask.size() != grad_out.size())
        throw Error(Errc::shape_mismatch, "dropout mask does not match grad_out");
    Tensor g = grad_out;
    for (std::size_t i = 0; i < g.size(); ++i)
        g[i] *= mask[i];
    return g;
}

/// Numerically stable softmax (max subtracted before exponentiation).
inline std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty())
        throw Error(Errc::invalid_argument, "softmax of an empty vector");
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        z += (p[i] = std::exp(logits[i] - m));
    for (auto &v : p)
        v /= z;
    return p;
}

struct LossGrad {
    double loss;
    std::vector<double> grad; // d loss / d logits
};

inline LossGrad softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
    if (label >= logits.size())
        throw Error(Errc::label_out_of_range, "label " + std::to_string(label) + " with " +
                                                  std::to_string(logits.size()) + " logits");
    const double top = logits[label];
    if (top >= *std::max_element(logits.begin(), logits.end())) {
        // label is the arg-max: loss = log1p(sum over the other classes of
        // exp(z_j - z_label)), which stays accurate as the loss approaches 0
        double rest = 0.0;
        for (std::size_t j = 0; j < logits.size(); ++j)
            if (j != label)
                rest += std::exp(logits[j] - top);
        LossGrad r{std::log1p(rest), std::vector<double>(logits.size())};
        for (std::size_t j = 0; j < logits.size(); ++j)
            r.grad[j] = j == label ? -rest / (1.0 + rest) : std::exp(logits[j] - top) / (1.0 + rest);
        return r;
    }
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double v : logits)
        z += std::exp(v - m);
    LossGrad r{m + std::log(z) - top, softmax(logits)};
    r.grad[label] -= 1.0;
    return r;
}

} // namespace emx::nn
