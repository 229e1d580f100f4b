#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ctpnet/ops.hpp"
#include "ctpnet/tensor.hpp"
#include "oracle_helpers.hpp"

using ctpnet::Graph;
using ctpnet::Pool2dSpec;
using ctpnet::PoolMode;
using ctpnet::Rng;
using ctpnet::Tensor;

namespace {

Pool2dSpec max_s1() { return Pool2dSpec{PoolMode::kMax, 2, 1, 0, 1}; }
Pool2dSpec max_s2() { return Pool2dSpec{PoolMode::kMax, 2, 2, 0, 0}; }
Pool2dSpec avg_s2() { return Pool2dSpec{PoolMode::kAvg, 2, 2, 0, 0}; }

TEST(Conv2d, IdentityKernel) {
    auto x = Tensor<double>::from_data({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto k = Tensor<double>::from_data({1, 1, 1, 1}, {1.0});
    auto b = Tensor<double>::zeros({1});
    auto y = ctpnet::conv2d<double>(nullptr, x, k, b, {1, 1, 0});
    ASSERT_EQ(y.shape(), (ctpnet::Shape{1, 1, 3, 3}));
    for (int i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv2d, DilationTwoTapsNineOnes) {
    auto x = Tensor<double>::filled({1, 1, 5, 5}, 1.0);
    auto k = Tensor<double>::filled({1, 1, 3, 3}, 1.0);
    auto b = Tensor<double>::zeros({1});
    auto y = ctpnet::conv2d<double>(nullptr, x, k, b, {1, 2, 0});
    ASSERT_EQ(y.shape(), (ctpnet::Shape{1, 1, 1, 1}));
    EXPECT_DOUBLE_EQ(y.data()[0], 9.0);
}

TEST(Conv2d, MatchesLoopOracle) {
    Rng rng(17);
    auto x = oracle::random_tensor<double>({2, 3, 8, 8}, rng);
    auto k = oracle::random_tensor<double>({4, 3, 3, 3}, rng);
    auto b = oracle::random_tensor<double>({4}, rng);
    auto y = ctpnet::conv2d<double>(nullptr, x, k, b, {1, 1, 1});
    auto ref = oracle::conv2d_loop(x, k, b, 1, 1, 1);
    ASSERT_EQ(y.shape(), ref.shape());
    for (std::int64_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y.data()[i], ref.data()[i], 1e-6);
}

TEST(Conv2d, MatchesLoopOracleAllModelGeometries) {
    // every stride/dilation/padding/kernel combination the model uses
    struct Geo {
        int stride, dilation, padding, kernel;
    };
    const Geo geos[] = {{1, 1, 1, 3}, {1, 2, 2, 3}, {1, 1, 0, 1}};
    Rng rng(99);
    for (const auto& geo : geos) {
        auto x = oracle::random_tensor<double>({2, 2, 9, 7}, rng);
        auto k = oracle::random_tensor<double>({3, 2, geo.kernel, geo.kernel}, rng);
        auto b = oracle::random_tensor<double>({3}, rng);
        auto y = ctpnet::conv2d<double>(nullptr, x, k, b, {geo.stride, geo.dilation, geo.padding});
        auto ref = oracle::conv2d_loop(x, k, b, geo.stride, geo.dilation, geo.padding);
        ASSERT_EQ(y.shape(), ref.shape());
        for (std::int64_t i = 0; i < y.size(); ++i) ASSERT_NEAR(y.data()[i], ref.data()[i], 1e-6);
    }
}

TEST(Conv2d, RejectsBadShapes) {
    auto x = Tensor<double>::zeros({1, 2, 4, 4});
    auto k = Tensor<double>::zeros({1, 3, 3, 3});  // channel mismatch
    auto b = Tensor<double>::zeros({1});
    EXPECT_THROW(ctpnet::conv2d<double>(nullptr, x, k, b, {1, 1, 1}), ctpnet::ShapeError);
    auto k2 = Tensor<double>::zeros({1, 2, 3, 3});
    EXPECT_THROW(ctpnet::conv2d<double>(nullptr, x, k2, b, {1, 3, 0}), ctpnet::ShapeError);  // empty output
}

TEST(Pool2d, ConstantInputStaysConstant) {
    auto x = Tensor<double>::filled({1, 2, 6, 6}, 7.0);
    for (auto spec : {max_s1(), max_s2(), avg_s2(), Pool2dSpec{PoolMode::kAvg, 2, 1, 0, 1},
                      Pool2dSpec{PoolMode::kAvg, 3, 1, 1, 1}}) {
        auto y = ctpnet::pool2d<double>(nullptr, x, spec);
        for (std::int64_t i = 0; i < y.size(); ++i) ASSERT_DOUBLE_EQ(y.data()[i], 7.0);
    }
}

TEST(Pool2d, BlockwiseMaxima) {
    auto x = Tensor<double>::from_data({1, 1, 4, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
    auto y = ctpnet::pool2d<double>(nullptr, x, max_s2());
    ASSERT_EQ(y.shape(), (ctpnet::Shape{1, 1, 2, 2}));
    EXPECT_DOUBLE_EQ(y.data()[0], 6.0);
    EXPECT_DOUBLE_EQ(y.data()[1], 8.0);
    EXPECT_DOUBLE_EQ(y.data()[2], 14.0);
    EXPECT_DOUBLE_EQ(y.data()[3], 16.0);
}

TEST(Pool2d, StrideOneSizePreservingMatchesOracle) {
    Rng rng(5);
    auto x = oracle::random_tensor<double>({1, 1, 8, 8}, rng);
    auto y = ctpnet::pool2d<double>(nullptr, x, max_s1());
    ASSERT_EQ(y.shape(), (ctpnet::Shape{1, 1, 8, 8}));
    auto ref = oracle::maxpool_loop(x, 2, 1, 0, 1);
    for (std::int64_t i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], ref.data()[i]);
}

TEST(ConvTranspose2d, NonOverlappingStamps) {
    auto x = Tensor<double>::filled({1, 1, 2, 2}, 1.0);
    auto k = Tensor<double>::filled({1, 1, 2, 2}, 1.0);
    auto b = Tensor<double>::zeros({1});
    auto y = ctpnet::conv_transpose2d<double>(nullptr, x, k, b, {2, 0, 0});
    ASSERT_EQ(y.shape(), (ctpnet::Shape{1, 1, 4, 4}));
    for (std::int64_t i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], 1.0);
}

// forward(conv_transpose2d) must equal conv2d's input gradient with matched
// geometry. The conv kernel [K,C,kh,kw] is the deconv kernel [C,K,kh,kw]
// with the first two axes relabeled, which is the same memory layout.
TEST(ConvTranspose2d, AdjointOfConv2dInputGradient) {
    Rng rng(31);
    const int stride = 2, padding = 1, kernel = 4;
    auto w = oracle::random_tensor<double>({2, 3, kernel, kernel}, rng);
    auto gy = oracle::random_tensor<double>({1, 2, 4, 4}, rng);

    // analytic conv2d input gradient via loss = <conv2d(x), gy>
    Graph<double> g;
    auto x = oracle::random_tensor<double>({1, 3, 8, 8}, rng, true);
    auto cb = Tensor<double>::zeros({2});
    auto y = ctpnet::conv2d<double>(&g, x, w, cb, {stride, 1, padding});
    ASSERT_EQ(y.shape(), gy.shape());
    auto loss = ctpnet::weighted_sum(&g, y, gy.values());
    g.backward(loss);

    // deconv forward on gy with the relabeled kernel
    auto zero_bias3 = Tensor<double>::zeros({3});
    auto up = ctpnet::conv_transpose2d<double>(nullptr, gy, w, zero_bias3, {stride, padding, 0});
    ASSERT_EQ(up.shape(), x.shape());
    for (std::int64_t i = 0; i < up.size(); ++i) EXPECT_NEAR(up.data()[i], x.grad()[static_cast<std::size_t>(i)], 1e-6);
}

TEST(ConvTranspose2d, DoublingShape) {
    Rng rng(7);
    auto x = oracle::random_tensor<double>({1, 1, 4, 4}, rng);
    auto k = oracle::random_tensor<double>({1, 1, 4, 4}, rng);
    auto b = Tensor<double>::zeros({1});
    auto y = ctpnet::conv_transpose2d<double>(nullptr, x, k, b, {2, 1, 0});
    EXPECT_EQ(y.shape(), (ctpnet::Shape{1, 1, 8, 8}));
}

TEST(BatchNorm, NormalizesPerChannel) {
    Rng rng(11);
    auto x = oracle::random_tensor<double>({2, 3, 4, 4}, rng, false, 2.5);
    auto gamma = Tensor<double>::filled({3}, 1.0);
    auto beta = Tensor<double>::zeros({3});
    ctpnet::BatchNormState<double> state(3);
    auto y = ctpnet::batch_norm<double>(nullptr, x, gamma, beta, state, true);
    const int plane = 16;
    for (int c = 0; c < 3; ++c) {
        double mean = 0.0, var = 0.0;
        for (int n = 0; n < 2; ++n)
            for (int i = 0; i < plane; ++i) mean += y.data()[(static_cast<std::int64_t>(n) * 3 + c) * plane + i];
        mean /= 2 * plane;
        for (int n = 0; n < 2; ++n)
            for (int i = 0; i < plane; ++i) {
                const double d = y.data()[(static_cast<std::int64_t>(n) * 3 + c) * plane + i] - mean;
                var += d * d;
            }
        var /= 2 * plane;
        EXPECT_NEAR(mean, 0.0, 1e-5);
        EXPECT_NEAR(var, 1.0, 1e-4);
    }
}

TEST(BatchNorm, AffineOnNormalizedInput) {
    std::vector<double> data;
    for (int i = 0; i < 8; ++i) data.push_back(i % 2 == 0 ? 1.0 : -1.0);  // mean 0, std 1
    auto x = Tensor<double>::from_data({1, 1, 2, 4}, std::move(data));
    auto gamma = Tensor<double>::filled({1}, 2.0);
    auto beta = Tensor<double>::filled({1}, 3.0);
    ctpnet::BatchNormState<double> state(1);
    auto y = ctpnet::batch_norm<double>(nullptr, x, gamma, beta, state, true, 0.1, 1e-12);
    double mean = 0.0;
    for (int i = 0; i < 8; ++i) mean += y.data()[i];
    mean /= 8;
    double var = 0.0;
    for (int i = 0; i < 8; ++i) var += (y.data()[i] - mean) * (y.data()[i] - mean);
    var /= 8;
    EXPECT_NEAR(mean, 3.0, 1e-9);
    EXPECT_NEAR(std::sqrt(var), 2.0, 1e-6);
}

TEST(BatchNorm, InferModeIdentityStats) {
    Rng rng(3);
    auto x = oracle::random_tensor<double>({1, 2, 3, 3}, rng);
    auto gamma = Tensor<double>::from_data({2}, {1.5, -0.5});
    auto beta = Tensor<double>::from_data({2}, {0.25, 1.0});
    ctpnet::BatchNormState<double> state(2);  // running mean 0, var 1
    auto y = ctpnet::batch_norm<double>(nullptr, x, gamma, beta, state, false, 0.1, 0.0);
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 9; ++i) {
            EXPECT_NEAR(y.data()[c * 9 + i], gamma.data()[c] * x.data()[c * 9 + i] + beta.data()[c], 1e-12);
        }
}

TEST(BatchNorm, RejectsDegenerateBatch) {
    auto x = Tensor<double>::zeros({1, 1, 1, 1});
    auto gamma = Tensor<double>::filled({1}, 1.0);
    auto beta = Tensor<double>::zeros({1});
    ctpnet::BatchNormState<double> state(1);
    EXPECT_THROW(ctpnet::batch_norm<double>(nullptr, x, gamma, beta, state, true), ctpnet::NumericError);
}

TEST(BatchNorm, RunningStatsMomentum) {
    auto x = Tensor<double>::from_data({1, 1, 1, 4}, {2.0, 2.0, 6.0, 6.0});  // mean 4, var 4
    auto gamma = Tensor<double>::filled({1}, 1.0);
    auto beta = Tensor<double>::zeros({1});
    ctpnet::BatchNormState<double> state(1);
    ctpnet::batch_norm<double>(nullptr, x, gamma, beta, state, true, 0.1);
    EXPECT_NEAR(state.running_mean[0], 0.9 * 0.0 + 0.1 * 4.0, 1e-12);
    EXPECT_NEAR(state.running_var[0], 0.9 * 1.0 + 0.1 * 4.0, 1e-12);
}

TEST(Relu, Basics) {
    auto x = Tensor<double>::from_data({3}, {-1.0, 0.0, 2.0});
    auto y = ctpnet::relu<double>(nullptr, x);
    EXPECT_DOUBLE_EQ(y.data()[0], 0.0);
    EXPECT_DOUBLE_EQ(y.data()[1], 0.0);
    EXPECT_DOUBLE_EQ(y.data()[2], 2.0);

    auto neg = Tensor<double>::filled({4}, -3.0);
    auto zy = ctpnet::relu<double>(nullptr, neg);
    for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(zy.data()[i], 0.0);
}

TEST(Relu, GradientIsIndicator) {
    Rng rng(23);
    Graph<double> g;
    auto x = oracle::random_tensor<double>({2, 1, 3, 3}, rng, true);
    auto y = ctpnet::relu(&g, x);
    auto loss = ctpnet::sum(&g, y);
    g.backward(loss);
    for (std::int64_t i = 0; i < x.size(); ++i) {
        EXPECT_DOUBLE_EQ(x.grad()[static_cast<std::size_t>(i)], x.data()[i] > 0 ? 1.0 : 0.0);
    }
}

TEST(Backward, SumReluOfPositiveIsOnes) {
    Graph<double> g;
    auto x = Tensor<double>::filled({2, 3}, 1.5, true);
    auto y = ctpnet::relu(&g, x);
    auto loss = ctpnet::sum(&g, y);
    g.backward(loss);
    for (double v : x.grad()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Add, BasicsAndGradientFlow) {
    Rng rng(13);
    auto a = oracle::random_tensor<double>({2, 2}, rng);
    auto zeros = Tensor<double>::zeros({2, 2});
    auto y = ctpnet::add<double>(nullptr, a, zeros);
    for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y.data()[i], a.data()[i]);
    auto twice = ctpnet::add<double>(nullptr, a, a);
    for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(twice.data()[i], 2 * a.data()[i]);
    auto bad = Tensor<double>::zeros({2, 3});
    EXPECT_THROW(ctpnet::add<double>(nullptr, a, bad), ctpnet::ShapeError);

    Graph<double> g;
    auto p = oracle::random_tensor<double>({3}, rng, true);
    auto q = oracle::random_tensor<double>({3}, rng, true);
    auto s = ctpnet::add(&g, p, q);
    auto loss = ctpnet::weighted_sum(&g, s, {1.0, 2.0, 3.0});
    g.backward(loss);
    for (int i = 0; i < 3; ++i) {
        EXPECT_DOUBLE_EQ(p.grad()[static_cast<std::size_t>(i)], i + 1.0);
        EXPECT_DOUBLE_EQ(q.grad()[static_cast<std::size_t>(i)], i + 1.0);
    }
}

TEST(SoftmaxChannels, SymmetryAndStability) {
    auto x = Tensor<double>::zeros({1, 2, 1, 1});
    auto y = ctpnet::softmax_channels<double>(nullptr, x);
    EXPECT_DOUBLE_EQ(y.data()[0], 0.5);
    EXPECT_DOUBLE_EQ(y.data()[1], 0.5);

    auto big = Tensor<double>::from_data({1, 2, 1, 1}, {1000.0, 0.0});
    auto yb = ctpnet::softmax_channels<double>(nullptr, big);
    EXPECT_NEAR(yb.data()[0], 1.0, 1e-12);
    EXPECT_NEAR(yb.data()[1], 0.0, 1e-12);
}

TEST(SoftmaxChannels, SumsToOne) {
    Rng rng(41);
    auto x = oracle::random_tensor<double>({2, 2, 5, 5}, rng, false, 3.0);
    auto y = ctpnet::softmax_channels<double>(nullptr, x);
    for (int n = 0; n < 2; ++n)
        for (int p = 0; p < 25; ++p) {
            const double s = y.data()[(n * 2 + 0) * 25 + p] + y.data()[(n * 2 + 1) * 25 + p];
            EXPECT_NEAR(s, 1.0, 1e-6);
            EXPECT_GT(y.data()[(n * 2 + 0) * 25 + p], 0.0);
        }
}

TEST(CrossEntropy, UniformPredictionIsLn2) {
    auto logits = Tensor<double>::zeros({1, 2, 4, 4});
    auto target = Tensor<double>::zeros({1, 4, 4});
    auto loss = ctpnet::cross_entropy_loss<double>(nullptr, logits, target);
    EXPECT_NEAR(loss.data()[0], std::log(2.0), 1e-12);
}

TEST(CrossEntropy, ConfidentCorrectIsTiny) {
    std::vector<double> lg(2 * 16);
    std::vector<double> tg(16);
    for (int p = 0; p < 16; ++p) {
        const bool forged = p % 3 == 0;
        tg[static_cast<std::size_t>(p)] = forged ? 1.0 : 0.0;
        lg[static_cast<std::size_t>(p)] = forged ? -10.0 : 10.0;       // channel 0 = authentic
        lg[static_cast<std::size_t>(16 + p)] = forged ? 10.0 : -10.0;  // channel 1 = forged
    }
    auto logits = Tensor<double>::from_data({1, 2, 4, 4}, std::move(lg));
    auto target = Tensor<double>::from_data({1, 4, 4}, std::move(tg));
    auto loss = ctpnet::cross_entropy_loss<double>(nullptr, logits, target);
    EXPECT_LT(loss.data()[0], 1e-3);
    EXPECT_GE(loss.data()[0], 0.0);
}

TEST(CrossEntropy, MatchesScalarFormulaOracle) {
    Rng rng(77);
    auto logits = oracle::random_tensor<double>({2, 2, 3, 5}, rng, false, 2.0);
    std::vector<double> tg(2 * 15);
    for (auto& t : tg) t = rng.uniform() < 0.4 ? 1.0 : 0.0;
    auto target = Tensor<double>::from_data({2, 3, 5}, std::move(tg));
    auto loss = ctpnet::cross_entropy_loss<double>(nullptr, logits, target);
    EXPECT_NEAR(loss.data()[0], oracle::cross_entropy_scalar(logits, target), 1e-6);
}

TEST(Backward, ComposedPipelineDeterminism) {
    auto run = [](std::uint64_t seed) {
        Rng local(seed);
        Graph<double> g;
        auto x = oracle::random_tensor<double>({1, 1, 6, 6}, local, true);
        auto k = oracle::random_tensor<double>({2, 1, 3, 3}, local, true);
        auto b = Tensor<double>::zeros({2}, true);
        auto c = ctpnet::conv2d(&g, x, k, b, {1, 1, 1});
        auto p = ctpnet::pool2d(&g, c, Pool2dSpec{PoolMode::kMax, 2, 2, 0, 0});
        std::vector<double> tg(9, 0.0);
        tg[4] = 1.0;
        auto target = Tensor<double>::from_data({1, 3, 3}, std::move(tg));
        auto loss = ctpnet::cross_entropy_loss(&g, p, target);
        g.backward(loss);
        return std::make_tuple(x.grad(), k.grad(), b.grad());
    };
    auto [gx1, gk1, gb1] = run(9);
    auto [gx2, gk2, gb2] = run(9);
    EXPECT_EQ(gx1, gx2);  // bit-identical
    EXPECT_EQ(gk1, gk2);
    EXPECT_EQ(gb1, gb2);
}

TEST(Backward, DisconnectedParameterHasZeroGrad) {
    Graph<double> g;
    auto x = Tensor<double>::filled({1, 2, 2, 2}, 0.3, true);
    auto unused = Tensor<double>::filled({4}, 1.0, true);
    auto target = Tensor<double>::zeros({1, 2, 2});
    auto loss = ctpnet::cross_entropy_loss(&g, x, target);
    g.backward(loss);
    for (double v : unused.grad()) EXPECT_DOUBLE_EQ(v, 0.0);
    bool any_nonzero = false;
    for (double v : x.grad()) any_nonzero = any_nonzero || v != 0.0;
    EXPECT_TRUE(any_nonzero);
}

TEST(Backward, RejectsNonScalarLoss) {
    Graph<double> g;
    auto x = Tensor<double>::filled({2, 2}, 1.0, true);
    auto y = ctpnet::add(&g, x, x);
    EXPECT_THROW(g.backward(y), ctpnet::ShapeError);
}

TEST(Sgd, StepAndClear) {
    auto p = Tensor<float>::from_data({1}, {1.0f}, true);
    p.grad()[0] = 2.0f;
    ctpnet::Sgd<float> opt(0.1f);
    opt.add_parameter(p);
    opt.step();
    EXPECT_FLOAT_EQ(p.values()[0], 0.8f);
    EXPECT_FLOAT_EQ(p.grad()[0], 0.0f);

    opt.step();  // zero grad: unchanged
    EXPECT_FLOAT_EQ(p.values()[0], 0.8f);
}

TEST(Sgd, TwoStepsEqualAccumulatedDelta) {
    auto p = Tensor<double>::from_data({2}, {1.0, -2.0}, true);
    auto q = Tensor<double>::from_data({2}, {1.0, -2.0}, true);
    ctpnet::Sgd<double> opt(0.05);
    opt.add_parameter(p);
    const std::vector<double> grad{0.5, -1.5};
    for (int step = 0; step < 2; ++step) {
        for (int i = 0; i < 2; ++i) p.grad()[static_cast<std::size_t>(i)] = grad[static_cast<std::size_t>(i)];
        opt.step();
    }
    ctpnet::Sgd<double> opt2(0.05);
    opt2.add_parameter(q);
    for (int i = 0; i < 2; ++i) q.grad()[static_cast<std::size_t>(i)] = 2.0 * grad[static_cast<std::size_t>(i)];
    opt2.step();
    for (int i = 0; i < 2; ++i) EXPECT_DOUBLE_EQ(p.values()[static_cast<std::size_t>(i)], q.values()[static_cast<std::size_t>(i)]);
}

TEST(Sgd, MissingGradientErrors) {
    auto p = Tensor<double>::filled({2}, 1.0, false);
    ctpnet::Sgd<double> opt(0.1);
    opt.add_parameter(p);
    EXPECT_THROW(opt.step(), ctpnet::NumericError);
    EXPECT_THROW(ctpnet::Sgd<double>(0.0), ctpnet::ConfigError);
}

TEST(Tensor, FiniteCheckAtBoundaries) {
    EXPECT_THROW(Tensor<double>::from_data({2}, {1.0, std::nan("")}), ctpnet::NumericError);
    auto big = Tensor<double>::filled({1, 1, 1, 2}, 1e308);
    EXPECT_THROW(ctpnet::add<double>(nullptr, big, big), ctpnet::NumericError);
}

TEST(Tensor, DebugDumpFormat) {
    auto t = Tensor<float>::from_data({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
    const std::string path = (std::filesystem::temp_directory_path() / "ctpn_dump.bin").string();
    ctpnet::dump_tensor(t, path);
    std::ifstream is(path, std::ios::binary);
    ASSERT_TRUE(is.good());
    EXPECT_EQ(ctpnet::detail::get_u32_le(is), 2u);
    EXPECT_EQ(ctpnet::detail::get_u32_le(is), 2u);
    EXPECT_EQ(ctpnet::detail::get_u32_le(is), 2u);
    EXPECT_FLOAT_EQ(ctpnet::detail::get_f32_le(is), 1.0f);
    EXPECT_FLOAT_EQ(ctpnet::detail::get_f32_le(is), 2.0f);
    std::filesystem::remove(path);
}

TEST(ConcatChannels, LayoutAndGradientRouting) {
    Rng rng(55);
    auto a = oracle::random_tensor<double>({1, 3, 2, 2}, rng, true);
    auto b = oracle::random_tensor<double>({1, 5, 2, 2}, rng, true);
    Graph<double> g;
    auto y = ctpnet::concat_channels<double>(&g, {a, b});
    ASSERT_EQ(y.shape(), (ctpnet::Shape{1, 8, 2, 2}));
    for (int i = 0; i < 12; ++i) EXPECT_DOUBLE_EQ(y.data()[i], a.data()[i]);
    for (int i = 0; i < 20; ++i) EXPECT_DOUBLE_EQ(y.data()[12 + i], b.data()[i]);

    std::vector<double> w(32);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<double>(i);
    auto loss = ctpnet::weighted_sum(&g, y, w);
    g.backward(loss);
    for (int i = 0; i < 12; ++i) EXPECT_DOUBLE_EQ(a.grad()[static_cast<std::size_t>(i)], i);
    for (int i = 0; i < 20; ++i) EXPECT_DOUBLE_EQ(b.grad()[static_cast<std::size_t>(i)], 12.0 + i);
}

}  // namespace
