#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "ctpnet/tensor.hpp"

// Differentiable ops used by the model. Every op validates shapes, checks
// its output for non-finite values, and (when a graph is supplied and any
// input tracks gradients) records its backward step on the tape. A null
// graph pointer runs pure inference.

namespace ctpnet {

namespace detail {

template <typename T>
bool track(Graph<T>* g, std::initializer_list<const Tensor<T>*> inputs) {
    if (!g) return false;
    for (const Tensor<T>* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

inline void expect_ndim(const Shape& s, int n, const char* what) {
    if (static_cast<int>(s.size()) != n) {
        throw ShapeError(std::string(what) + ": expected " + std::to_string(n) + "-d tensor, got " + shape_str(s));
    }
}

}  // namespace detail

struct Conv2dSpec {
    int stride = 1;
    int dilation = 1;
    int padding = 0;
};

// out = floor((in + 2p - d*(k-1) - 1) / s) + 1
inline int conv_out_size(int in, int kernel, int stride, int dilation, int padding) {
    return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

/// 2-D cross-correlation with dilation. input [N,C,H,W], kernel [K,C,kh,kw],
/// bias [K].
template <typename T>
Tensor<T> conv2d(Graph<T>* g, const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 const Conv2dSpec& spec) {
    detail::expect_ndim(input.shape(), 4, "conv2d input");
    detail::expect_ndim(kernel.shape(), 4, "conv2d kernel");
    detail::expect_ndim(bias.shape(), 1, "conv2d bias");
    if (spec.stride < 1 || spec.dilation < 1) throw ConfigError("conv2d: stride and dilation must be positive");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int k = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    if (kernel.dim(1) != c) {
        throw ShapeError("conv2d: kernel channels " + std::to_string(kernel.dim(1)) + " do not match input channels " +
                         std::to_string(c));
    }
    if (bias.dim(0) != k) throw ShapeError("conv2d: bias size does not match kernel count");
    const int oh = conv_out_size(h, kh, spec.stride, spec.dilation, spec.padding);
    const int ow = conv_out_size(w, kw, spec.stride, spec.dilation, spec.padding);
    if (oh < 1 || ow < 1) {
        throw ShapeError("conv2d: non-positive output size for input " + shape_str(input.shape()));
    }

    Tensor<T> out = Tensor<T>::zeros({n, k, oh, ow});
    const T* x = input.data();
    const T* wgt = kernel.data();
    const T* b = bias.data();
    T* y = out.data();

    const int s = spec.stride, d = spec.dilation, p = spec.padding;
    for (int in_ = 0; in_ < n; ++in_) {
        for (int ik = 0; ik < k; ++ik) {
            T* yplane = y + (static_cast<std::int64_t>(in_) * k + ik) * oh * ow;
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh) * ow; ++i) yplane[i] = b[ik];
            for (int ic = 0; ic < c; ++ic) {
                const T* xplane = x + (static_cast<std::int64_t>(in_) * c + ic) * h * w;
                const T* wk = wgt + ((static_cast<std::int64_t>(ik) * c + ic) * kh) * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx) {
                        const T wv = wk[ky * kw + kx];
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * s - p + ky * d;
                            if (iy < 0 || iy >= h) continue;
                            const T* xrow = xplane + static_cast<std::int64_t>(iy) * w;
                            T* yrow = yplane + static_cast<std::int64_t>(oy) * ow;
                            for (int ox = 0; ox < ow; ++ox) {
                                const int ix = ox * s - p + kx * d;
                                if (ix < 0 || ix >= w) continue;
                                yrow[ox] += wv * xrow[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    ensure_all_finite(std::span<const T>(out.values()), "conv2d");

    if (detail::track(g, {&input, &kernel, &bias})) {
        out.enable_grad();
        Tensor<T> xin = input, ker = kernel, bi = bias, o = out;
        Conv2dSpec sp = spec;
        g->record([xin, ker, bi, o, sp]() mutable {
            const int n = xin.dim(0), c = xin.dim(1), h = xin.dim(2), w = xin.dim(3);
            const int k = ker.dim(0), kh = ker.dim(2), kw = ker.dim(3);
            const int oh = o.dim(2), ow = o.dim(3);
            const int s = sp.stride, d = sp.dilation, p = sp.padding;
            const std::vector<T>& gy = o.grad();
            if (bi.requires_grad()) {
                std::vector<T>& gb = bi.grad();
                for (int in_ = 0; in_ < n; ++in_) {
                    for (int ik = 0; ik < k; ++ik) {
                        const T* gyp = gy.data() + (static_cast<std::int64_t>(in_) * k + ik) * oh * ow;
                        T acc = T(0);
                        for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh) * ow; ++i) acc += gyp[i];
                        gb[static_cast<std::size_t>(ik)] += acc;
                    }
                }
            }
            const bool need_gx = xin.requires_grad();
            const bool need_gw = ker.requires_grad();
            if (!need_gx && !need_gw) return;
            for (int in_ = 0; in_ < n; ++in_) {
                for (int ik = 0; ik < k; ++ik) {
                    const T* gyp = gy.data() + (static_cast<std::int64_t>(in_) * k + ik) * oh * ow;
                    for (int ic = 0; ic < c; ++ic) {
                        const T* xplane = xin.data() + (static_cast<std::int64_t>(in_) * c + ic) * h * w;
                        T* gxplane = need_gx ? xin.grad().data() + (static_cast<std::int64_t>(in_) * c + ic) * h * w
                                             : nullptr;
                        const std::int64_t wbase = (static_cast<std::int64_t>(ik) * c + ic) * kh * kw;
                        for (int ky = 0; ky < kh; ++ky) {
                            for (int kx = 0; kx < kw; ++kx) {
                                const T wv = ker.data()[wbase + ky * kw + kx];
                                T gw_acc = T(0);
                                for (int oy = 0; oy < oh; ++oy) {
                                    const int iy = oy * s - p + ky * d;
                                    if (iy < 0 || iy >= h) continue;
                                    const T* xrow = xplane + static_cast<std::int64_t>(iy) * w;
                                    T* gxrow = need_gx ? gxplane + static_cast<std::int64_t>(iy) * w : nullptr;
                                    const T* gyrow = gyp + static_cast<std::int64_t>(oy) * ow;
                                    for (int ox = 0; ox < ow; ++ox) {
                                        const int ix = ox * s - p + kx * d;
                                        if (ix < 0 || ix >= w) continue;
                                        if (need_gx) gxrow[ix] += wv * gyrow[ox];
                                        gw_acc += xrow[ix] * gyrow[ox];
                                    }
                                }
                                if (need_gw) ker.grad()[static_cast<std::size_t>(wbase + ky * kw + kx)] += gw_acc;
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

enum class PoolMode { kMax, kAvg };

struct Pool2dSpec {
    PoolMode mode = PoolMode::kMax;
    int kernel = 2;
    int stride = 2;
    // Asymmetric zero padding: stride-1 size-preserving pools pad only the
    // right/bottom edge (pad_begin 0, pad_end 1).
    int pad_begin = 0;
    int pad_end = 0;
};

template <typename T>
Tensor<T> pool2d(Graph<T>* g, const Tensor<T>& input, const Pool2dSpec& spec) {
    detail::expect_ndim(input.shape(), 4, "pool2d input");
    if (spec.kernel < 1 || spec.stride < 1) throw ConfigError("pool2d: kernel and stride must be positive");
    if (spec.pad_begin < 0 || spec.pad_end < 0 || spec.pad_begin >= spec.kernel || spec.pad_end >= spec.kernel) {
        throw ConfigError("pool2d: padding must lie in [0, kernel)");
    }
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int oh = (h + spec.pad_begin + spec.pad_end - spec.kernel) / spec.stride + 1;
    const int ow = (w + spec.pad_begin + spec.pad_end - spec.kernel) / spec.stride + 1;
    if (oh < 1 || ow < 1) throw ShapeError("pool2d: non-positive output size");

    Tensor<T> out = Tensor<T>::zeros({n, c, oh, ow});
    const T* x = input.data();
    T* y = out.data();
    const bool is_max = spec.mode == PoolMode::kMax;
    // argmax flat index per output element, for max-pool backward
    std::vector<std::int32_t> argmax;
    if (is_max) argmax.assign(static_cast<std::size_t>(out.size()), -1);

    std::int64_t oi = 0;
    for (std::int64_t plane = 0; plane < static_cast<std::int64_t>(n) * c; ++plane) {
        const T* xp = x + plane * h * w;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox, ++oi) {
                const int y0 = oy * spec.stride - spec.pad_begin;
                const int x0 = ox * spec.stride - spec.pad_begin;
                if (is_max) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::int32_t best_idx = -1;
                    for (int ky = 0; ky < spec.kernel; ++ky) {
                        const int iy = y0 + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < spec.kernel; ++kx) {
                            const int ix = x0 + kx;
                            if (ix < 0 || ix >= w) continue;
                            const T v = xp[static_cast<std::int64_t>(iy) * w + ix];
                            if (v > best) {  // first-encountered wins ties
                                best = v;
                                best_idx = static_cast<std::int32_t>(iy * w + ix);
                            }
                        }
                    }
                    if (best_idx < 0) throw ShapeError("pool2d: window contains no valid input");
                    y[oi] = best;
                    argmax[static_cast<std::size_t>(oi)] = best_idx;
                } else {
                    // average over in-bounds taps only, so constant inputs
                    // stay constant under any padding plan
                    T acc = T(0);
                    int count = 0;
                    for (int ky = 0; ky < spec.kernel; ++ky) {
                        const int iy = y0 + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < spec.kernel; ++kx) {
                            const int ix = x0 + kx;
                            if (ix < 0 || ix >= w) continue;
                            acc += xp[static_cast<std::int64_t>(iy) * w + ix];
                            ++count;
                        }
                    }
                    if (count == 0) throw ShapeError("pool2d: window contains no valid input");
                    y[oi] = acc / static_cast<T>(count);
                }
            }
        }
    }
    ensure_all_finite(std::span<const T>(out.values()), "pool2d");

    if (detail::track(g, {&input})) {
        out.enable_grad();
        Tensor<T> xin = input, o = out;
        Pool2dSpec sp = spec;
        std::vector<std::int32_t> am = std::move(argmax);
        g->record([xin, o, sp, am]() mutable {
            const int n = xin.dim(0), c = xin.dim(1), h = xin.dim(2), w = xin.dim(3);
            const int oh = o.dim(2), ow = o.dim(3);
            std::vector<T>& gx = xin.grad();
            const std::vector<T>& gy = o.grad();
            std::int64_t oi = 0;
            for (std::int64_t plane = 0; plane < static_cast<std::int64_t>(n) * c; ++plane) {
                T* gxp = gx.data() + plane * h * w;
                for (int oy = 0; oy < oh; ++oy) {
                    for (int ox = 0; ox < ow; ++ox, ++oi) {
                        if (sp.mode == PoolMode::kMax) {
                            gxp[am[static_cast<std::size_t>(oi)]] += gy[static_cast<std::size_t>(oi)];
                        } else {
                            const int y0 = oy * sp.stride - sp.pad_begin;
                            const int x0 = ox * sp.stride - sp.pad_begin;
                            int count = 0;
                            for (int ky = 0; ky < sp.kernel; ++ky) {
                                const int iy = y0 + ky;
                                if (iy < 0 || iy >= h) continue;
                                for (int kx = 0; kx < sp.kernel; ++kx) {
                                    const int ix = x0 + kx;
                                    if (ix >= 0 && ix < w) ++count;
                                }
                            }
                            const T go = gy[static_cast<std::size_t>(oi)] / static_cast<T>(count);
                            for (int ky = 0; ky < sp.kernel; ++ky) {
                                const int iy = y0 + ky;
                                if (iy < 0 || iy >= h) continue;
                                for (int kx = 0; kx < sp.kernel; ++kx) {
                                    const int ix = x0 + kx;
                                    if (ix < 0 || ix >= w) continue;
                                    gxp[static_cast<std::int64_t>(iy) * w + ix] += go;
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

struct ConvTranspose2dSpec {
    int stride = 1;
    int padding = 0;
    int output_padding = 0;
};

/// Transposed convolution (adjoint of conv2d). input [N,C,H,W], kernel
/// [C,K,kh,kw], bias [K]. out = (in-1)*stride - 2*padding + k + output_padding.
template <typename T>
Tensor<T> conv_transpose2d(Graph<T>* g, const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                           const ConvTranspose2dSpec& spec) {
    detail::expect_ndim(input.shape(), 4, "conv_transpose2d input");
    detail::expect_ndim(kernel.shape(), 4, "conv_transpose2d kernel");
    detail::expect_ndim(bias.shape(), 1, "conv_transpose2d bias");
    if (spec.stride < 1) throw ConfigError("conv_transpose2d: stride must be positive");
    if (spec.output_padding < 0 || spec.output_padding >= spec.stride) {
        throw ConfigError("conv_transpose2d: output_padding must lie in [0, stride)");
    }
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (kernel.dim(0) != c) throw ShapeError("conv_transpose2d: kernel input channels mismatch");
    const int k = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
    if (bias.dim(0) != k) throw ShapeError("conv_transpose2d: bias size mismatch");
    const int oh = (h - 1) * spec.stride - 2 * spec.padding + kh + spec.output_padding;
    const int ow = (w - 1) * spec.stride - 2 * spec.padding + kw + spec.output_padding;
    if (oh < 1 || ow < 1) throw ShapeError("conv_transpose2d: non-positive output size");

    Tensor<T> out = Tensor<T>::zeros({n, k, oh, ow});
    const T* x = input.data();
    const T* wgt = kernel.data();
    T* y = out.data();
    const int s = spec.stride, p = spec.padding;

    for (int in_ = 0; in_ < n; ++in_) {
        for (int ik = 0; ik < k; ++ik) {
            T* yplane = y + (static_cast<std::int64_t>(in_) * k + ik) * oh * ow;
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh) * ow; ++i) yplane[i] = bias.data()[ik];
        }
        for (int ic = 0; ic < c; ++ic) {
            const T* xplane = x + (static_cast<std::int64_t>(in_) * c + ic) * h * w;
            for (int ik = 0; ik < k; ++ik) {
                T* yplane = y + (static_cast<std::int64_t>(in_) * k + ik) * oh * ow;
                const T* wk = wgt + (static_cast<std::int64_t>(ic) * k + ik) * kh * kw;
                for (int iy = 0; iy < h; ++iy) {
                    for (int ix = 0; ix < w; ++ix) {
                        const T xv = xplane[static_cast<std::int64_t>(iy) * w + ix];
                        if (xv == T(0)) continue;
                        for (int ky = 0; ky < kh; ++ky) {
                            const int oy = iy * s - p + ky;
                            if (oy < 0 || oy >= oh) continue;
                            T* yrow = yplane + static_cast<std::int64_t>(oy) * ow;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ox = ix * s - p + kx;
                                if (ox < 0 || ox >= ow) continue;
                                yrow[ox] += xv * wk[ky * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    ensure_all_finite(std::span<const T>(out.values()), "conv_transpose2d");

    if (detail::track(g, {&input, &kernel, &bias})) {
        out.enable_grad();
        Tensor<T> xin = input, ker = kernel, bi = bias, o = out;
        ConvTranspose2dSpec sp = spec;
        g->record([xin, ker, bi, o, sp]() mutable {
            const int n = xin.dim(0), c = xin.dim(1), h = xin.dim(2), w = xin.dim(3);
            const int k = ker.dim(1), kh = ker.dim(2), kw = ker.dim(3);
            const int oh = o.dim(2), ow = o.dim(3);
            const int s = sp.stride, p = sp.padding;
            const std::vector<T>& gy = o.grad();
            if (bi.requires_grad()) {
                std::vector<T>& gb = bi.grad();
                for (int in_ = 0; in_ < n; ++in_) {
                    for (int ik = 0; ik < k; ++ik) {
                        const T* gyp = gy.data() + (static_cast<std::int64_t>(in_) * k + ik) * oh * ow;
                        T acc = T(0);
                        for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh) * ow; ++i) acc += gyp[i];
                        gb[static_cast<std::size_t>(ik)] += acc;
                    }
                }
            }
            const bool need_gx = xin.requires_grad();
            const bool need_gw = ker.requires_grad();
            if (!need_gx && !need_gw) return;
            for (int in_ = 0; in_ < n; ++in_) {
                for (int ic = 0; ic < c; ++ic) {
                    const T* xplane = xin.data() + (static_cast<std::int64_t>(in_) * c + ic) * h * w;
                    T* gxplane = need_gx ? xin.grad().data() + (static_cast<std::int64_t>(in_) * c + ic) * h * w
                                         : nullptr;
                    for (int ik = 0; ik < k; ++ik) {
                        const T* gyp = gy.data() + (static_cast<std::int64_t>(in_) * k + ik) * oh * ow;
                        const std::int64_t wbase = (static_cast<std::int64_t>(ic) * k + ik) * kh * kw;
                        for (int ky = 0; ky < kh; ++ky) {
                            for (int kx = 0; kx < kw; ++kx) {
                                const T wv = ker.data()[wbase + ky * kw + kx];
                                T gw_acc = T(0);
                                for (int iy = 0; iy < h; ++iy) {
                                    const int oy = iy * s - p + ky;
                                    if (oy < 0 || oy >= oh) continue;
                                    const T* gyrow = gyp + static_cast<std::int64_t>(oy) * ow;
                                    const T* xrow = xplane + static_cast<std::int64_t>(iy) * w;
                                    T* gxrow = need_gx ? gxplane + static_cast<std::int64_t>(iy) * w : nullptr;
                                    for (int ix = 0; ix < w; ++ix) {
                                        const int ox = ix * s - p + kx;
                                        if (ox < 0 || ox >= ow) continue;
                                        if (need_gx) gxrow[ix] += wv * gyrow[ox];
                                        gw_acc += xrow[ix] * gyrow[ox];
                                    }
                                }
                                if (need_gw) ker.grad()[static_cast<std::size_t>(wbase + ky * kw + kx)] += gw_acc;
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

/// Per-channel running statistics owned by a batch-norm layer.
template <typename T>
struct BatchNormState {
    std::vector<T> running_mean;
    std::vector<T> running_var;

    explicit BatchNormState(int channels = 0)
        : running_mean(static_cast<std::size_t>(channels), T(0)),
          running_var(static_cast<std::size_t>(channels), T(1)) {}
};

/// Batch normalization over N,H,W per channel. Train mode uses batch
/// statistics (biased variance) and updates the running stats with the
/// given momentum; infer mode normalizes with the running stats.
template <typename T>
Tensor<T> batch_norm(Graph<T>* g, const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, bool training, T momentum = T(0.1), T eps = T(1e-5)) {
    detail::expect_ndim(input.shape(), 4, "batch_norm input");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (gamma.dim(0) != c || beta.dim(0) != c) throw ShapeError("batch_norm: gamma/beta channel mismatch");
    if (static_cast<int>(state.running_mean.size()) != c) throw ShapeError("batch_norm: running stats channel mismatch");
    const std::int64_t m = static_cast<std::int64_t>(n) * h * w;
    if (training && m < 2) throw NumericError("batch_norm: train mode needs at least 2 values per channel");

    Tensor<T> out = Tensor<T>::zeros(input.shape());
    const T* x = input.data();
    T* y = out.data();
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;

    std::vector<T> mean(static_cast<std::size_t>(c)), inv_std(static_cast<std::size_t>(c));
    for (int ic = 0; ic < c; ++ic) {
        T mu, var;
        if (training) {
            T acc = T(0);
            for (int in_ = 0; in_ < n; ++in_) {
                const T* xp = x + (static_cast<std::int64_t>(in_) * c + ic) * plane;
                for (std::int64_t i = 0; i < plane; ++i) acc += xp[i];
            }
            mu = acc / static_cast<T>(m);
            T vacc = T(0);
            for (int in_ = 0; in_ < n; ++in_) {
                const T* xp = x + (static_cast<std::int64_t>(in_) * c + ic) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const T d = xp[i] - mu;
                    vacc += d * d;
                }
            }
            var = vacc / static_cast<T>(m);
            state.running_mean[static_cast<std::size_t>(ic)] =
                (T(1) - momentum) * state.running_mean[static_cast<std::size_t>(ic)] + momentum * mu;
            state.running_var[static_cast<std::size_t>(ic)] =
                (T(1) - momentum) * state.running_var[static_cast<std::size_t>(ic)] + momentum * var;
        } else {
            mu = state.running_mean[static_cast<std::size_t>(ic)];
            var = state.running_var[static_cast<std::size_t>(ic)];
        }
        mean[static_cast<std::size_t>(ic)] = mu;
        inv_std[static_cast<std::size_t>(ic)] = T(1) / std::sqrt(var + eps);
        const T gmul = gamma.data()[ic] * inv_std[static_cast<std::size_t>(ic)];
        const T badd = beta.data()[ic];
        for (int in_ = 0; in_ < n; ++in_) {
            const T* xp = x + (static_cast<std::int64_t>(in_) * c + ic) * plane;
            T* yp = y + (static_cast<std::int64_t>(in_) * c + ic) * plane;
            for (std::int64_t i = 0; i < plane; ++i) yp[i] = gmul * (xp[i] - mu) + badd;
        }
    }
    ensure_all_finite(std::span<const T>(out.values()), "batch_norm");

    if (detail::track(g, {&input, &gamma, &beta})) {
        out.enable_grad();
        Tensor<T> xin = input, ga = gamma, be = beta, o = out;
        std::vector<T> mu = std::move(mean), istd = std::move(inv_std);
        bool train_mode = training;
        g->record([xin, ga, be, o, mu, istd, train_mode]() mutable {
            const int n = xin.dim(0), c = xin.dim(1), h = xin.dim(2), w = xin.dim(3);
            const std::int64_t plane = static_cast<std::int64_t>(h) * w;
            const std::int64_t m = static_cast<std::int64_t>(n) * plane;
            const std::vector<T>& gy = o.grad();
            for (int ic = 0; ic < c; ++ic) {
                const T mu_c = mu[static_cast<std::size_t>(ic)];
                const T is_c = istd[static_cast<std::size_t>(ic)];
                T sum_gy = T(0), sum_gy_xhat = T(0);
                for (int in_ = 0; in_ < n; ++in_) {
                    const std::int64_t off = (static_cast<std::int64_t>(in_) * c + ic) * plane;
                    const T* xp = xin.data() + off;
                    const T* gp = gy.data() + off;
                    for (std::int64_t i = 0; i < plane; ++i) {
                        sum_gy += gp[i];
                        sum_gy_xhat += gp[i] * (xp[i] - mu_c) * is_c;
                    }
                }
                if (ga.requires_grad()) ga.grad()[static_cast<std::size_t>(ic)] += sum_gy_xhat;
                if (be.requires_grad()) be.grad()[static_cast<std::size_t>(ic)] += sum_gy;
                if (!xin.requires_grad()) continue;
                const T gmul = ga.data()[ic] * is_c;
                const T mean_gy = sum_gy / static_cast<T>(m);
                const T mean_gy_xhat = sum_gy_xhat / static_cast<T>(m);
                for (int in_ = 0; in_ < n; ++in_) {
                    const std::int64_t off = (static_cast<std::int64_t>(in_) * c + ic) * plane;
                    const T* xp = xin.data() + off;
                    const T* gp = gy.data() + off;
                    T* gxp = xin.grad().data() + off;
                    if (train_mode) {
                        for (std::int64_t i = 0; i < plane; ++i) {
                            const T xhat = (xp[i] - mu_c) * is_c;
                            gxp[i] += gmul * (gp[i] - mean_gy - xhat * mean_gy_xhat);
                        }
                    } else {
                        for (std::int64_t i = 0; i < plane; ++i) gxp[i] += gmul * gp[i];
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> relu(Graph<T>* g, const Tensor<T>& input) {
    Tensor<T> out = Tensor<T>::zeros(input.shape());
    const T* x = input.data();
    T* y = out.data();
    for (std::int64_t i = 0; i < input.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    ensure_all_finite(std::span<const T>(out.values()), "relu");
    if (detail::track(g, {&input})) {
        out.enable_grad();
        Tensor<T> xin = input, o = out;
        g->record([xin, o]() mutable {
            std::vector<T>& gx = xin.grad();
            const std::vector<T>& gy = o.grad();
            const T* x = xin.data();
            for (std::size_t i = 0; i < gx.size(); ++i) {
                if (x[i] > T(0)) gx[i] += gy[i];  // subgradient 0 at 0
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> add(Graph<T>* g, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* y = out.data();
    for (std::int64_t i = 0; i < a.size(); ++i) y[i] = pa[i] + pb[i];
    ensure_all_finite(std::span<const T>(out.values()), "add");
    if (detail::track(g, {&a, &b})) {
        out.enable_grad();
        Tensor<T> ta = a, tb = b, o = out;
        g->record([ta, tb, o]() mutable {
            const std::vector<T>& gy = o.grad();
            if (ta.requires_grad()) {
                std::vector<T>& ga = ta.grad();
                for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
            }
            if (tb.requires_grad()) {
                std::vector<T>& gb = tb.grad();
                for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
            }
        });
    }
    return out;
}

/// Concatenation along the channel axis of [N,C,H,W] tensors.
template <typename T>
Tensor<T> concat_channels(Graph<T>* g, const std::vector<Tensor<T>>& inputs) {
    if (inputs.empty()) throw ShapeError("concat_channels: no inputs");
    detail::expect_ndim(inputs[0].shape(), 4, "concat_channels input");
    const int n = inputs[0].dim(0), h = inputs[0].dim(2), w = inputs[0].dim(3);
    int ctotal = 0;
    for (const auto& t : inputs) {
        detail::expect_ndim(t.shape(), 4, "concat_channels input");
        if (t.dim(0) != n || t.dim(2) != h || t.dim(3) != w) {
            throw ShapeError("concat_channels: incompatible shapes");
        }
        ctotal += t.dim(1);
    }
    Tensor<T> out = Tensor<T>::zeros({n, ctotal, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    T* y = out.data();
    for (int in_ = 0; in_ < n; ++in_) {
        std::int64_t coff = 0;
        for (const auto& t : inputs) {
            const int tc = t.dim(1);
            const T* src = t.data() + static_cast<std::int64_t>(in_) * tc * plane;
            T* dst = y + (static_cast<std::int64_t>(in_) * ctotal + coff) * plane;
            std::copy(src, src + static_cast<std::int64_t>(tc) * plane, dst);
            coff += tc;
        }
    }
    bool any_grad = false;
    if (g) {
        for (const auto& t : inputs) any_grad = any_grad || t.requires_grad();
    }
    if (any_grad) {
        out.enable_grad();
        std::vector<Tensor<T>> ins = inputs;
        Tensor<T> o = out;
        g->record([ins, o]() mutable {
            const int n = o.dim(0), ctotal = o.dim(1);
            const std::int64_t plane = static_cast<std::int64_t>(o.dim(2)) * o.dim(3);
            const std::vector<T>& gy = o.grad();
            for (int in_ = 0; in_ < n; ++in_) {
                std::int64_t coff = 0;
                for (auto& t : ins) {
                    const int tc = t.dim(1);
                    if (t.requires_grad()) {
                        T* gx = t.grad().data() + static_cast<std::int64_t>(in_) * tc * plane;
                        const T* src = gy.data() + (static_cast<std::int64_t>(in_) * ctotal + coff) * plane;
                        for (std::int64_t i = 0; i < static_cast<std::int64_t>(tc) * plane; ++i) gx[i] += src[i];
                    }
                    coff += tc;
                }
            }
        });
    }
    return out;
}

/// Per-pixel softmax over the channel axis, computed with max subtraction.
template <typename T>
Tensor<T> softmax_channels(Graph<T>* g, const Tensor<T>& input) {
    detail::expect_ndim(input.shape(), 4, "softmax_channels input");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (c < 2) throw ShapeError("softmax_channels: need at least 2 channels");
    Tensor<T> out = Tensor<T>::zeros(input.shape());
    const T* x = input.data();
    T* y = out.data();
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int in_ = 0; in_ < n; ++in_) {
        const std::int64_t base = static_cast<std::int64_t>(in_) * c * plane;
        for (std::int64_t p = 0; p < plane; ++p) {
            T mx = x[base + p];
            for (int ic = 1; ic < c; ++ic) mx = std::max(mx, x[base + ic * plane + p]);
            T denom = T(0);
            for (int ic = 0; ic < c; ++ic) {
                const T e = std::exp(x[base + ic * plane + p] - mx);
                y[base + ic * plane + p] = e;
                denom += e;
            }
            for (int ic = 0; ic < c; ++ic) y[base + ic * plane + p] /= denom;
        }
    }
    ensure_all_finite(std::span<const T>(out.values()), "softmax_channels");
    if (detail::track(g, {&input})) {
        out.enable_grad();
        Tensor<T> xin = input, o = out;
        g->record([xin, o]() mutable {
            const int n = o.dim(0), c = o.dim(1);
            const std::int64_t plane = static_cast<std::int64_t>(o.dim(2)) * o.dim(3);
            std::vector<T>& gx = xin.grad();
            const std::vector<T>& gy = o.grad();
            const T* y = o.data();
            for (int in_ = 0; in_ < n; ++in_) {
                const std::int64_t base = static_cast<std::int64_t>(in_) * c * plane;
                for (std::int64_t p = 0; p < plane; ++p) {
                    T dot = T(0);
                    for (int ic = 0; ic < c; ++ic) {
                        const std::int64_t idx = base + ic * plane + p;
                        dot += gy[static_cast<std::size_t>(idx)] * y[idx];
                    }
                    for (int ic = 0; ic < c; ++ic) {
                        const std::int64_t idx = base + ic * plane + p;
                        gx[static_cast<std::size_t>(idx)] += y[idx] * (gy[static_cast<std::size_t>(idx)] - dot);
                    }
                }
            }
        });
    }
    return out;
}

/// Mean over all pixels of -log softmax probability of the true class.
/// logits [N,2,H,W]; target [N,H,W] with values exactly 0 or 1.
template <typename T>
Tensor<T> cross_entropy_loss(Graph<T>* g, const Tensor<T>& logits, const Tensor<T>& target) {
    detail::expect_ndim(logits.shape(), 4, "cross_entropy_loss logits");
    detail::expect_ndim(target.shape(), 3, "cross_entropy_loss target");
    const int n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    if (c != 2) throw ShapeError("cross_entropy_loss: logits must have 2 channels");
    if (target.dim(0) != n || target.dim(1) != h || target.dim(2) != w) {
        throw ShapeError("cross_entropy_loss: target shape mismatch");
    }
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const std::int64_t total = static_cast<std::int64_t>(n) * plane;
    const T* x = logits.data();
    const T* t = target.data();

    double acc = 0.0;
    for (std::int64_t i = 0; i < total; ++i) {
        const std::int64_t in_ = i / plane;
        const std::int64_t p = i % plane;
        const T a = x[in_ * 2 * plane + p];
        const T b = x[in_ * 2 * plane + plane + p];
        const T tv = t[i];
        if (tv != T(0) && tv != T(1)) throw DataError("cross_entropy_loss: target values must be 0 or 1");
        const T mx = std::max(a, b);
        const T lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
        acc += static_cast<double>(lse - (tv == T(1) ? b : a));
    }
    Tensor<T> out = Tensor<T>::from_data({1}, {static_cast<T>(acc / static_cast<double>(total))});
    ensure_all_finite(std::span<const T>(out.values()), "cross_entropy_loss");

    if (detail::track(g, {&logits})) {
        out.enable_grad();
        Tensor<T> lg = logits, tg = target, o = out;
        g->record([lg, tg, o]() mutable {
            const int n = lg.dim(0), h = lg.dim(2), w = lg.dim(3);
            const std::int64_t plane = static_cast<std::int64_t>(h) * w;
            const std::int64_t total = static_cast<std::int64_t>(n) * plane;
            const T go = o.grad()[0];
            const T* x = lg.data();
            const T* t = tg.data();
            std::vector<T>& gx = lg.grad();
            const T scale = go / static_cast<T>(total);
            for (std::int64_t i = 0; i < total; ++i) {
                const std::int64_t in_ = i / plane;
                const std::int64_t p = i % plane;
                const std::int64_t ia = in_ * 2 * plane + p;
                const std::int64_t ib = ia + plane;
                const T mx = std::max(x[ia], x[ib]);
                const T ea = std::exp(x[ia] - mx);
                const T eb = std::exp(x[ib] - mx);
                const T pa = ea / (ea + eb);
                const T pb = eb / (ea + eb);
                const bool forged = t[i] == T(1);
                gx[static_cast<std::size_t>(ia)] += scale * (pa - (forged ? T(0) : T(1)));
                gx[static_cast<std::size_t>(ib)] += scale * (pb - (forged ? T(1) : T(0)));
            }
        });
    }
    return out;
}

/// Scalar dot product with a constant weight vector; sum(x) is the all-ones
/// case. Used by the gradient-check harness to reduce op outputs to a loss.
template <typename T>
Tensor<T> weighted_sum(Graph<T>* g, const Tensor<T>& input, const std::vector<T>& weights) {
    if (static_cast<std::int64_t>(weights.size()) != input.size()) {
        throw ShapeError("weighted_sum: weight count does not match tensor size");
    }
    double acc = 0.0;
    const T* x = input.data();
    for (std::int64_t i = 0; i < input.size(); ++i) acc += static_cast<double>(x[i]) * static_cast<double>(weights[static_cast<std::size_t>(i)]);
    Tensor<T> out = Tensor<T>::from_data({1}, {static_cast<T>(acc)});
    ensure_all_finite(std::span<const T>(out.values()), "weighted_sum");
    if (detail::track(g, {&input})) {
        out.enable_grad();
        Tensor<T> xin = input, o = out;
        std::vector<T> w = weights;
        g->record([xin, o, w]() mutable {
            const T go = o.grad()[0];
            std::vector<T>& gx = xin.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go * w[i];
        });
    }
    return out;
}

template <typename T>
Tensor<T> sum(Graph<T>* g, const Tensor<T>& input) {
    return weighted_sum(g, input, std::vector<T>(static_cast<std::size_t>(input.size()), T(1)));
}

}  // namespace ctpnet
