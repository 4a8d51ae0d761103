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

#include "emx/nn/checkpoint.hpp"
#include "emx/nn/layers.hpp"
#include "emx/nn/model.hpp"
#include "emx/nn/train.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>

using namespace emx;
using namespace emx::nn;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto &v : t.data)
        v = u(rng);
    return t;
}

double dot(const Tensor &a, const Tensor &b) {
    return std::inner_product(a.data.begin(), a.data.end(), b.data.begin(), 0.0);
}

// central differences of f at every coordinate of t, compared to `analytic`
template <class F>
double worst_rel_error(Tensor &t, const Tensor &analytic, F f, double h = 1e-5) {
    double worst = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double saved = t[i];
        t[i] = saved + h;
        const double up = f();
        t[i] = saved - h;
        const double down = f();
        t[i] = saved;
        const double num = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(num - analytic[i]) / std::max({std::abs(num), std::abs(analytic[i]), 1e-8}));
    }
    return worst;
}

std::vector<LayerConfig> small_spec(std::size_t classes) {
    return {Conv1DConfig{3, 5, 3, Activation::relu}, Conv1DConfig{4, 3, 2, Activation::relu},
            MaxPool1DConfig{2, 1},                   FlattenConfig{},
            DenseConfig{6, Activation::relu},        DropoutConfig{0.2},
            DenseConfig{classes, Activation::softmax}};
}

} // namespace

TEST(Conv1d, MovingSum) {
    Tensor x({1, 4, 1});
    x.data = {1, 2, 3, 4};
    Tensor w({2, 1, 1});
    w.data = {1, 1};
    const Tensor y = conv1d_forward(x, w, Tensor({1}), 1);
    EXPECT_EQ(y.shape, (std::vector<std::size_t>{1, 3, 1}));
    EXPECT_EQ(y.data, (std::vector<double>{3, 5, 7}));
}

TEST(Conv1d, IdentityKernel) {
    const Tensor x = random_tensor({2, 7, 3}, 1);
    Tensor w({1, 3, 3});
    for (std::size_t c = 0; c < 3; ++c)
        w.data[c * 3 + c] = 1.0;
    EXPECT_TRUE(conv1d_forward(x, w, Tensor({3}), 1) == x);
}

TEST(Conv1d, MatchesNaiveLoop) {
    const std::size_t n = 2, len = 64, cin = 2, cout = 3, k = 5, stride = 3;
    const Tensor x = random_tensor({n, len, cin}, 2);
    const Tensor w = random_tensor({k, cin, cout}, 3);
    const Tensor b = random_tensor({cout}, 4);
    const Tensor y = conv1d_forward(x, w, b, stride);
    const std::size_t lout = (len - k) / stride + 1;
    ASSERT_EQ(y.shape, (std::vector<std::size_t>{n, lout, cout}));
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t i = 0; i < lout; ++i)
            for (std::size_t o = 0; o < cout; ++o) {
                double acc = b.data[o];
                for (std::size_t kk = 0; kk < k; ++kk)
                    for (std::size_t c = 0; c < cin; ++c)
                        acc += x.data[(s * len + i * stride + kk) * cin + c] * w.data[(kk * cin + c) * cout + o];
                EXPECT_NEAR(y.data[(s * lout + i) * cout + o], acc, 1e-10);
            }
}

TEST(Conv1d, TooShortInput) {
    try {
        conv1d_forward(Tensor({1, 3, 1}), Tensor({4, 1, 1}), Tensor({1}), 1);
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.code(), Errc::too_short);
    }
}

TEST(Conv1d, BackwardIdentities) {
    const Tensor x = random_tensor({2, 9, 2}, 5);
    const Tensor w = random_tensor({3, 2, 2}, 6);
    const Tensor gy = random_tensor({2, 4, 2}, 7);
    const auto g = conv1d_backward(gy, x, w, 2);
    for (std::size_t o = 0; o < 2; ++o) {
        double sum = 0;
        for (std::size_t i = o; i < gy.size(); i += 2)
            sum += gy.data[i];
        EXPECT_NEAR(g.grad_b.data[o], sum, 1e-12);
    }
    Tensor x1({1, 1, 1});
    x1.data = {2.5};
    Tensor gy1({1, 1, 1});
    gy1.data = {-1.5};
    EXPECT_DOUBLE_EQ(conv1d_backward(gy1, x1, Tensor({1, 1, 1}), 1).grad_w.data[0], -3.75);
}

TEST(Conv1d, BackwardMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        Tensor x = random_tensor({2, 11 + seed, 2}, 10 + seed);
        Tensor w = random_tensor({3, 2, 3}, 20 + seed);
        Tensor b = random_tensor({3}, 30 + seed);
        const std::size_t stride = 1 + seed % 3;
        const Tensor r = random_tensor(conv1d_forward(x, w, b, stride).shape, 40 + seed);
        auto loss = [&] { return dot(conv1d_forward(x, w, b, stride), r); };
        const auto g = conv1d_backward(r, x, w, stride);
        EXPECT_LT(worst_rel_error(x, g.grad_x, loss), 1e-4);
        EXPECT_LT(worst_rel_error(w, g.grad_w, loss), 1e-4);
        EXPECT_LT(worst_rel_error(b, g.grad_b, loss), 1e-4);
    }
}

TEST(Dense, BackwardMatchesFiniteDifferences) {
    Tensor x = random_tensor({3, 5}, 1);
    Tensor w = random_tensor({5, 4}, 2);
    Tensor b = random_tensor({4}, 3);
    const Tensor r = random_tensor({3, 4}, 4);
    auto loss = [&] { return dot(dense_forward(x, w, b), r); };
    const auto g = dense_backward(r, x, w);
    EXPECT_LT(worst_rel_error(x, g.grad_x, loss), 1e-4);
    EXPECT_LT(worst_rel_error(w, g.grad_w, loss), 1e-4);
    EXPECT_LT(worst_rel_error(b, g.grad_b, loss), 1e-4);
}

TEST(MaxPool, WindowedMaxAndRouting) {
    Tensor x({1, 6, 1});
    x.data = {1, 3, 3, 0, 5, 2};
    const auto r = maxpool1d_forward(x, 2, 2);
    EXPECT_EQ(r.out.data, (std::vector<double>{3, 3, 5}));
    EXPECT_EQ(r.argmax, (std::vector<std::size_t>{1, 2, 4}));
    Tensor ties({1, 4, 1});
    ties.data = {7, 7, 7, 7};
    EXPECT_EQ(maxpool1d_forward(ties, 4, 1).argmax, (std::vector<std::size_t>{0})); // first occurrence
    Tensor gy({1, 3, 1});
    gy.data = {1, 2, 3};
    EXPECT_EQ(maxpool1d_backward(gy, r.argmax, x.shape).data, (std::vector<double>{0, 1, 2, 0, 3, 0}));
}

TEST(MaxPool, BackwardMatchesFiniteDifferences) {
    Tensor x = random_tensor({2, 40, 3}, 8); // distinct values, no ties
    const auto fwd = maxpool1d_forward(x, 10, 5);
    const Tensor r = random_tensor(fwd.out.shape, 9);
    auto loss = [&] { return dot(maxpool1d_forward(x, 10, 5).out, r); };
    EXPECT_LT(worst_rel_error(x, maxpool1d_backward(r, fwd.argmax, x.shape), loss), 1e-4);
}

TEST(Relu, ForwardBackward) {
    Tensor x({1, 4});
    x.data = {-2, -0.5, 0.5, 3};
    EXPECT_EQ(relu_forward(x).data, (std::vector<double>{0, 0, 0.5, 3}));
    Tensor g({1, 4});
    g.data = {1, 1, 1, 1};
    EXPECT_EQ(relu_backward(g, x).data, (std::vector<double>{0, 0, 1, 1}));
}

TEST(Dropout, EvalIsIdentityTrainingIsInverted) {
    const Tensor x = random_tensor({100, 100}, 1);
    Rng rng = make_rng({1});
    const auto eval = dropout_forward(x, 0.2, false, rng);
    EXPECT_TRUE(eval.out == x);
    EXPECT_TRUE(eval.mask.empty());
    const auto tr = dropout_forward(x, 0.2, true, rng);
    std::size_t kept = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        ASSERT_TRUE(tr.mask[i] == 0.0 || std::abs(tr.mask[i] - 1.25) < 1e-12);
        EXPECT_DOUBLE_EQ(tr.out.data[i], x.data[i] * tr.mask[i]);
        kept += tr.mask[i] != 0.0;
    }
    EXPECT_NEAR(static_cast<double>(kept) / x.size(), 0.8, 0.02);
    Tensor g({100, 100});
    std::fill(g.data.begin(), g.data.end(), 1.0);
    EXPECT_EQ(dropout_backward(g, tr.mask).data, tr.mask);
}

TEST(Softmax, UniformLogitsGiveLogClassCount) {
    const std::vector<double> z(15, 0.3);
    const auto lg = softmax_cross_entropy(z, 4);
    EXPECT_NEAR(lg.loss, std::log(15.0), 1e-12);
    EXPECT_NEAR(lg.loss, 2.708, 5e-4);
    EXPECT_NEAR(lg.grad[4], 1.0 / 15 - 1, 1e-12);
    EXPECT_NEAR(lg.grad[0], 1.0 / 15, 1e-12);
}

TEST(Softmax, PositiveNormalizedShiftInvariantProperty) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-50, 50);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> z(2 + trial % 20);
        for (auto &v : z)
            v = u(rng);
        const auto p = softmax(z);
        EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-6);
        for (double v : p)
            EXPECT_GT(v, 0.0);
        auto shifted = z;
        const double c = u(rng) * 10;
        for (auto &v : shifted)
            v += c;
        const auto q = softmax(shifted);
        for (std::size_t i = 0; i < p.size(); ++i)
            EXPECT_NEAR(p[i], q[i], 1e-9);
    }
    // huge logits stay finite
    const auto p = softmax(std::vector<double>{1e308, 0.0});
    EXPECT_EQ(p[0], 1.0);
    EXPECT_TRUE(std::isfinite(softmax_cross_entropy(std::vector<double>{1000, -1000}, 1).loss));
}

TEST(Softmax, CrossEntropyGradientMatchesFiniteDifferences) {
    Tensor z = random_tensor({7}, 11, -3, 3);
    const auto lg = softmax_cross_entropy(z.data, 2);
    Tensor analytic({7});
    analytic.data = lg.grad;
    EXPECT_LT(worst_rel_error(z, analytic, [&] { return softmax_cross_entropy(z.data, 2).loss; }), 1e-4);
}

TEST(Classifier, ShapesAndParameterCount) {
    const Model m = build_classifier(20'500, 15, 1);
    ASSERT_EQ(m.layers().size(), 7u);
    // floor((20500-500)/50)+1 = 401; floor((401-300)/10)+1 = 11; floor((11-10)/5)+1 = 1
    EXPECT_EQ(m.layers()[0].out, (ActShape{401, 32}));
    EXPECT_EQ(m.layers()[1].out, (ActShape{11, 32}));
    EXPECT_EQ(m.layers()[2].out, (ActShape{1, 32}));
    EXPECT_EQ(m.layers()[4].out, (ActShape{1, 32}));
    EXPECT_EQ(m.num_classes(), 15u);
    EXPECT_EQ(m.layers().back().out.channels, 15u);
    EXPECT_EQ(m.param_count(), (500u * 32 + 32) + (300u * 32 * 32 + 32) + (32u * 32 + 32) + (32u * 15 + 15));
    EXPECT_EQ(m.param_count(), 324'815u);
    EXPECT_EQ(m.summary().size(), 7u);
}

TEST(Classifier, MinimumInputLength) {
    // brute force over the chained shape formula
    auto fits = [](std::size_t len) {
        if (len < 500)
            return false;
        const std::size_t l1 = (len - 500) / 50 + 1;
        if (l1 < 300)
            return false;
        const std::size_t l2 = (l1 - 300) / 10 + 1;
        return l2 >= 10;
    };
    std::size_t oracle = 1;
    while (!fits(oracle))
        ++oracle;
    EXPECT_EQ(oracle, kClassifierMinInputLen);
    EXPECT_EQ(min_input_len(classifier_spec(15)), kClassifierMinInputLen);
    EXPECT_NO_THROW(build_classifier(kClassifierMinInputLen, 15, 0));
    EXPECT_THROW(build_classifier(kClassifierMinInputLen - 1, 15, 0), Error);
    try {
        build_classifier(16'000, 15, 0); // conv stack leaves 2 positions for a 10-wide pool
        FAIL();
    } catch (const Error &e) {
        EXPECT_EQ(e.code(), Errc::too_short);
        EXPECT_NE(std::string(e.what()).find("19950"), std::string::npos);
    }
    EXPECT_THROW(build_classifier(20'000, 1, 0), Error);
}

TEST(Classifier, SameSeedSameWeights) {
    const Model a = build_classifier(20'000, 15, 42), b = build_classifier(20'000, 15, 42),
                c = build_classifier(20'000, 15, 43);
    bool differs = false;
    for (std::size_t l = 0; l < a.layers().size(); ++l) {
        EXPECT_TRUE(a.layers()[l].weights == b.layers()[l].weights);
        EXPECT_TRUE(a.layers()[l].bias == b.layers()[l].bias);
        differs = differs || !(a.layers()[l].weights == c.layers()[l].weights);
    }
    EXPECT_TRUE(differs);
}

TEST(Model, GradientCheckOnRandomSmallNetworks) {
    std::size_t total = 0;
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        Model m(small_spec(3 + seed % 3), 40 + 7 * seed, seed);
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> ub(-0.5, 0.5);
        for (auto &l : m.layers())
            for (auto &b : l.bias.data)
                b = ub(rng);
        std::vector<double> x(m.input_len());
        std::normal_distribution<double> g;
        for (auto &v : x)
            v = g(rng);
        std::size_t checked = 0;
        EXPECT_LT(gradient_check(m, x, seed % m.num_classes(), 1e-5, 64, seed, &checked), 1e-4) << "seed " << seed;
        EXPECT_GT(checked, 0u) << "seed " << seed;
        total += checked; // seed 3 kills every hidden unit, leaving only the head biases
    }
    EXPECT_GE(total, 60u);
}

TEST(Model, PredictIsADistribution) {
    const Model m = build_classifier(20'000, 15, 3);
    const auto x = test::random_samples(20'000, 5, 1.0f);
    const auto p = m.predict(x);
    ASSERT_EQ(p.size(), 15u);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-6);
    EXPECT_THROW(m.predict(std::span<const float>(x).first(19'999)), Error);
}

namespace {

// two classes told apart by where a burst sits
std::vector<std::vector<float>> toy_inputs(std::size_t per_class, std::size_t len, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> noise(0.0f, 0.1f);
    std::vector<std::vector<float>> xs;
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < per_class; ++i) {
            std::vector<float> x(len);
            for (auto &v : x)
                v = noise(rng);
            const std::size_t at = c == 0 ? len / 5 : 3 * len / 5;
            for (std::size_t j = at; j < at + len / 10; ++j)
                x[j] += 1.0f;
            xs.push_back(std::move(x));
        }
    return xs;
}

std::vector<Sample> as_samples(const std::vector<std::vector<float>> &xs) {
    std::vector<Sample> out;
    for (std::size_t i = 0; i < xs.size(); ++i)
        out.push_back({xs[i], i * 2 / xs.size()});
    return out;
}

} // namespace

TEST(Train, SeparableToyProblemConverges) {
    const auto xs = toy_inputs(10, kClassifierMinInputLen, 1);
    const auto samples = as_samples(xs);
    Model m = build_classifier(kClassifierMinInputLen, 2, 7);
    const double before = evaluate_samples(m, samples).loss;
    TrainConfig cfg;
    cfg.max_epochs = 200;
    cfg.batch_size = 8;
    cfg.rng_seed = 3;
    const auto res = train(m, samples, samples, cfg);
    ASSERT_FALSE(res.history.empty());
    EXPECT_LE(res.history.size(), 200u);
    const auto after = evaluate_samples(m, samples);
    EXPECT_LT(after.loss, 0.05);
    EXPECT_LT(after.loss, before);
    EXPECT_EQ(after.accuracy, 1.0);
    EXPECT_DOUBLE_EQ(res.history[res.best_epoch - 1].val_loss, after.loss); // best weights restored
}

TEST(Train, BitExactAcrossRunsAndThreadCounts) {
    const auto xs = toy_inputs(5, kClassifierMinInputLen, 2);
    const auto samples = as_samples(xs);
    TrainConfig cfg;
    cfg.max_epochs = 2;
    cfg.batch_size = 4;
    cfg.rng_seed = 11;
    auto run = [&](unsigned threads) {
        Model m = build_classifier(kClassifierMinInputLen, 2, 5);
        cfg.threads = threads;
        train(m, samples, samples, cfg);
        return m;
    };
    const Model a = run(1), b = run(1), c = run(3);
    for (std::size_t l = 0; l < a.layers().size(); ++l) {
        EXPECT_TRUE(a.layers()[l].weights == b.layers()[l].weights);
        EXPECT_TRUE(a.layers()[l].weights == c.layers()[l].weights);
        EXPECT_TRUE(a.layers()[l].bias == c.layers()[l].bias);
    }
}

TEST(Train, RejectsEmptyAndMismatchedSplits) {
    const auto xs = toy_inputs(2, kClassifierMinInputLen, 3);
    const auto samples = as_samples(xs);
    Model m = build_classifier(kClassifierMinInputLen, 2, 5);
    TrainConfig cfg;
    cfg.max_epochs = 1;
    auto code = [&](const std::vector<Sample> &tr, const std::vector<Sample> &va) -> std::optional<Errc> {
        try {
            train(m, tr, va, cfg);
        } catch (const Error &e) {
            return e.code();
        }
        return std::nullopt;
    };
    EXPECT_EQ(code({}, samples), Errc::empty_split);
    EXPECT_EQ(code(samples, {}), Errc::empty_split);
    const std::vector<float> short_x(100);
    EXPECT_EQ(code({{short_x, 0}}, samples), Errc::shape_mismatch);
    EXPECT_EQ(code({{xs[0], 2}}, samples), Errc::label_out_of_range);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    Model m = build_classifier(20'000, 15, 9);
    m.info["class_names"] = {"a", "b"};
    test::TempDir tmp;
    save_checkpoint(tmp / "m.emxc", m);
    const Model back = load_checkpoint(tmp / "m.emxc");
    EXPECT_EQ(back.input_len(), m.input_len());
    EXPECT_EQ(back.num_classes(), 15u);
    EXPECT_EQ(back.seed(), 9u);
    EXPECT_EQ(back.info, m.info);
    ASSERT_EQ(back.layers().size(), m.layers().size());
    for (std::size_t l = 0; l < m.layers().size(); ++l) {
        EXPECT_TRUE(back.layers()[l].weights == m.layers()[l].weights);
        EXPECT_TRUE(back.layers()[l].bias == m.layers()[l].bias);
    }
    const auto x = test::random_samples(20'000, 1, 1.0f);
    EXPECT_EQ(back.logits(x), m.logits(x));
}

TEST(Checkpoint, CorruptFilesAreRejected) {
    const Model m = build_classifier(20'000, 3, 1);
    std::ostringstream os;
    write_checkpoint(m, os);
    const std::string good = os.str();
    auto load = [](const std::string &bytes) {
        std::istringstream is(bytes);
        return read_checkpoint(is);
    };
    EXPECT_NO_THROW(load(good));
    EXPECT_THROW(load("XXXX" + good.substr(4)), Error);
    EXPECT_THROW(load(good.substr(0, good.size() - 8)), Error);
    EXPECT_THROW(load_checkpoint("/nonexistent/m.emxc"), Error);
}
