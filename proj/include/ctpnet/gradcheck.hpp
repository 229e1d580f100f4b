#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ctpnet/ops.hpp"

// Central finite-difference gradient checking, always in 64-bit mode.
// The analytic gradients come from one recorded backward pass; the reference
// comes from re-evaluating the forward closure at x +/- h with no graph.

namespace ctpnet {

struct GradCheckResult {
    std::string name;
    std::int64_t checked = 0;
    std::int64_t failed = 0;
    double max_rel_err = 0.0;

    bool passed() const { return failed == 0 && checked > 0; }
};

struct GradCheckOptions {
    double step = 1e-3;
    double tolerance = 1e-4;
    // |analytic - fd| below this passes outright; raw relative error on a
    // near-zero gradient only measures FD roundoff.
    double absolute_escape = 1e-7;
};

/// forward() must rebuild the computation from the given leaves on every
/// call and return a scalar. Leaves are perturbed in place.
inline GradCheckResult check_gradients(const std::string& name,
                                       const std::function<Tensor<double>(Graph<double>*)>& forward,
                                       const std::vector<Tensor<double>>& leaves,
                                       const GradCheckOptions& opt = {}) {
    GradCheckResult result;
    result.name = name;

    for (auto leaf : leaves) leaf.zero_grad();
    Graph<double> graph;
    Tensor<double> loss = forward(&graph);
    graph.backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (const auto& leaf : leaves) analytic.push_back(leaf.grad());

    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Tensor<double> leaf = leaves[li];
        for (std::int64_t i = 0; i < leaf.size(); ++i) {
            const double saved = leaf.data()[i];
            leaf.data()[i] = saved + opt.step;
            const double f_plus = forward(nullptr).data()[0];
            leaf.data()[i] = saved - opt.step;
            const double f_minus = forward(nullptr).data()[0];
            leaf.data()[i] = saved;
            const double fd = (f_plus - f_minus) / (2.0 * opt.step);
            const double a = analytic[li][static_cast<std::size_t>(i)];
            const double abs_err = std::abs(a - fd);
            const double rel = abs_err / std::max({std::abs(a), std::abs(fd), 1e-12});
            ++result.checked;
            if (abs_err > opt.absolute_escape && rel > opt.tolerance) {
                ++result.failed;
            }
            if (abs_err > opt.absolute_escape) result.max_rel_err = std::max(result.max_rel_err, rel);
        }
    }
    return result;
}

/// The standard per-op battery run by `ctpnet gradcheck` and the acceptance
/// suite: `instances` random configurations per op, every leaf element
/// checked against central differences.
inline std::vector<GradCheckResult> gradcheck_battery(std::uint64_t seed, int instances = 20) {
    std::vector<GradCheckResult> results;
    Rng rng(seed);

    auto random_tensor = [&rng](Shape shape, bool requires_grad, double scale = 1.0) {
        std::vector<double> data(static_cast<std::size_t>(numel(shape)));
        for (auto& v : data) v = rng.normal() * scale;
        return Tensor<double>::from_data(std::move(shape), std::move(data), requires_grad);
    };
    auto random_weights = [&rng](std::int64_t n) {
        std::vector<double> w(static_cast<std::size_t>(n));
        for (auto& v : w) v = rng.normal();
        return w;
    };

    auto accumulate = [&results](const std::string& name, GradCheckResult r) {
        for (auto& existing : results) {
            if (existing.name == name) {
                existing.checked += r.checked;
                existing.failed += r.failed;
                existing.max_rel_err = std::max(existing.max_rel_err, r.max_rel_err);
                return;
            }
        }
        r.name = name;
        results.push_back(std::move(r));
    };

    for (int inst = 0; inst < instances; ++inst) {
        // conv2d: strides/dilations the model uses, small shapes
        {
            const int c = rng.uniform_int(1, 3), k = rng.uniform_int(1, 3);
            const int h = rng.uniform_int(4, 6), w = rng.uniform_int(4, 6);
            const int dil = inst % 3 == 1 ? 2 : 1;
            const int ks = inst % 4 == 2 ? 1 : 3;
            const int pad = ks == 1 ? 0 : dil;
            auto x = random_tensor({1, c, h, w}, true);
            auto wt = random_tensor({k, c, ks, ks}, true, 0.5);
            auto b = random_tensor({k}, true, 0.1);
            auto weights = random_weights(static_cast<std::int64_t>(k) * conv_out_size(h, ks, 1, dil, pad) *
                                          conv_out_size(w, ks, 1, dil, pad));
            auto fwd = [&](Graph<double>* g) {
                return weighted_sum(g, conv2d(g, x, wt, b, {1, dil, pad}), weights);
            };
            accumulate("conv2d", check_gradients("conv2d", fwd, {x, wt, b}));
        }
        // pool2d, both modes and both stride plans; values spread to avoid ties
        {
            const int h = 6, w = 6;
            auto x = random_tensor({1, 2, h, w}, true, 3.0);
            const bool s1 = inst % 2 == 0;
            Pool2dSpec spec = s1 ? Pool2dSpec{inst % 4 < 2 ? PoolMode::kMax : PoolMode::kAvg, 2, 1, 0, 1}
                                 : Pool2dSpec{inst % 4 < 2 ? PoolMode::kMax : PoolMode::kAvg, 2, 2, 0, 0};
            const int oh = (h + spec.pad_begin + spec.pad_end - spec.kernel) / spec.stride + 1;
            auto weights = random_weights(2LL * oh * oh);
            auto fwd = [&](Graph<double>* g) { return weighted_sum(g, pool2d(g, x, spec), weights); };
            accumulate("pool2d", check_gradients("pool2d", fwd, {x}));
        }
        // conv_transpose2d with the x2 upsampling geometry
        {
            const int c = rng.uniform_int(1, 2), k = rng.uniform_int(1, 2);
            auto x = random_tensor({1, c, 3, 3}, true);
            auto wt = random_tensor({c, k, 4, 4}, true, 0.5);
            auto b = random_tensor({k}, true, 0.1);
            auto weights = random_weights(static_cast<std::int64_t>(k) * 6 * 6);
            auto fwd = [&](Graph<double>* g) {
                return weighted_sum(g, conv_transpose2d(g, x, wt, b, {2, 1, 0}), weights);
            };
            accumulate("conv_transpose2d", check_gradients("conv_transpose2d", fwd, {x, wt, b}));
        }
        // batch_norm, train and infer modes
        {
            const int c = rng.uniform_int(1, 3);
            auto x = random_tensor({2, c, 3, 3}, true, 2.0);
            auto gamma = random_tensor({c}, true);
            auto beta = random_tensor({c}, true);
            const bool training = inst % 3 != 2;
            auto weights = random_weights(x.size());
            auto fwd = [&, training](Graph<double>* g) {
                BatchNormState<double> state(c);  // fresh stats per evaluation
                return weighted_sum(g, batch_norm(g, x, gamma, beta, state, training), weights);
            };
            accumulate("batch_norm", check_gradients("batch_norm", fwd, {x, gamma, beta}));
        }
        // relu away from the kink
        {
            auto x = random_tensor({2, 2, 3, 3}, true, 2.0);
            for (std::int64_t i = 0; i < x.size(); ++i) {
                if (std::abs(x.data()[i]) < 0.05) x.data()[i] = 0.1;
            }
            auto weights = random_weights(x.size());
            auto fwd = [&](Graph<double>* g) { return weighted_sum(g, relu(g, x), weights); };
            accumulate("relu", check_gradients("relu", fwd, {x}));
        }
        // add
        {
            auto a = random_tensor({2, 3, 2, 2}, true);
            auto b = random_tensor({2, 3, 2, 2}, true);
            auto weights = random_weights(a.size());
            auto fwd = [&](Graph<double>* g) { return weighted_sum(g, add(g, a, b), weights); };
            accumulate("add", check_gradients("add", fwd, {a, b}));
        }
        // concat_channels
        {
            auto a = random_tensor({1, 2, 3, 3}, true);
            auto b = random_tensor({1, 3, 3, 3}, true);
            auto weights = random_weights(a.size() + b.size());
            auto fwd = [&](Graph<double>* g) {
                return weighted_sum(g, concat_channels<double>(g, {a, b}), weights);
            };
            accumulate("concat_channels", check_gradients("concat_channels", fwd, {a, b}));
        }
        // softmax_channels
        {
            auto x = random_tensor({1, 2, 3, 3}, true, 1.5);
            auto weights = random_weights(x.size());
            auto fwd = [&](Graph<double>* g) { return weighted_sum(g, softmax_channels(g, x), weights); };
            accumulate("softmax_channels", check_gradients("softmax_channels", fwd, {x}));
        }
        // cross_entropy_loss (already scalar)
        {
            auto x = random_tensor({1, 2, 4, 4}, true, 1.5);
            std::vector<double> tv(16);
            for (auto& t : tv) t = rng.uniform() < 0.5 ? 1.0 : 0.0;
            auto target = Tensor<double>::from_data({1, 4, 4}, std::move(tv));
            auto fwd = [&](Graph<double>* g) { return cross_entropy_loss(g, x, target); };
            accumulate("cross_entropy_loss", check_gradients("cross_entropy_loss", fwd, {x}));
        }
        // backward over a composed graph (conv -> pool -> cross entropy);
        // resample until every pooling window is far from a max tie, since
        // the perturbed forward must not switch argmax branches
        {
            Tensor<double> x, wt, b;
            for (int attempt = 0; attempt < 100; ++attempt) {
                x = random_tensor({1, 1, 6, 6}, true);
                wt = random_tensor({2, 1, 3, 3}, true, 0.5);
                b = random_tensor({2}, true, 0.1);
                auto conv = conv2d<double>(nullptr, x, wt, b, {1, 1, 1});
                double min_gap = 1e30;
                for (int ch = 0; ch < 2; ++ch) {
                    const double* plane = conv.data() + static_cast<std::int64_t>(ch) * 36;
                    for (int oy = 0; oy < 3; ++oy)
                        for (int ox = 0; ox < 3; ++ox) {
                            double best = -1e30, second = -1e30;
                            for (int ky = 0; ky < 2; ++ky)
                                for (int kx = 0; kx < 2; ++kx) {
                                    const double v = plane[(oy * 2 + ky) * 6 + ox * 2 + kx];
                                    if (v > best) {
                                        second = best;
                                        best = v;
                                    } else if (v > second) {
                                        second = v;
                                    }
                                }
                            min_gap = std::min(min_gap, best - second);
                        }
                }
                if (min_gap > 0.05) break;
            }
            std::vector<double> tv(9);
            for (auto& t : tv) t = rng.uniform() < 0.5 ? 1.0 : 0.0;
            auto target = Tensor<double>::from_data({1, 3, 3}, std::move(tv));
            auto fwd = [&](Graph<double>* g) {
                auto conv = conv2d(g, x, wt, b, {1, 1, 1});
                auto pooled = pool2d(g, conv, Pool2dSpec{PoolMode::kMax, 2, 2, 0, 0});
                return cross_entropy_loss(g, pooled, target);
            };
            accumulate("backward_composed", check_gradients("backward_composed", fwd, {x, wt, b}));
        }
    }
    return results;
}

}  // namespace ctpnet
