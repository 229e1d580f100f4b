#pragma once

#include <array>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ctpnet/image.hpp"
#include "ctpnet/ops.hpp"

// The two-stream forgery localization network: a character texture stream
// (six 3x3 convs, five max pools), an image texture stream (feature-enhanced
// blocks, dilated dense blocks, transpose layers), and a decoder of
// deconvolutions and dense blocks that restores full resolution and emits a
// two-channel logit map (channel 1 = forged).

namespace ctpnet {

struct ModelConfig {
    int input_h = 64;
    int input_w = 64;
    int in_channels = 3;
    std::array<int, 6> cts_channels{16, 16, 32, 32, 32, 32};
    std::array<int, 3> feb_layers{3, 3, 3};
    // operating width of each feature-enhanced block; feb_channels[0] is the
    // entry projection's output, the later two must match the preceding
    // transpose layer's output (element-wise fusion inside a block forces a
    // constant width)
    std::array<int, 3> feb_channels{16, 16, 32};
    int ddb_layers = 3;
    int ddb_growth = 8;
    std::array<int, 5> its_transpose_channels{16, 32, 32, 32, 32};
    std::array<int, 2> fln_transpose_channels{16, 16};
    std::array<int, 3> fln_deconv_channels{32, 16, 16};
    int fusion_channels = 32;

    void validate() const {
        auto positive = [](int v, const char* what) {
            if (v <= 0) throw ConfigError(std::string("model config: ") + what + " must be positive");
        };
        positive(input_h, "input_h");
        positive(input_w, "input_w");
        positive(in_channels, "in_channels");
        for (int v : cts_channels) positive(v, "cts_channels");
        for (int v : feb_layers) positive(v, "feb_layers");
        for (int v : feb_channels) positive(v, "feb_channels");
        positive(ddb_layers, "ddb_layers");
        positive(ddb_growth, "ddb_growth");
        for (int v : its_transpose_channels) positive(v, "its_transpose_channels");
        for (int v : fln_transpose_channels) positive(v, "fln_transpose_channels");
        for (int v : fln_deconv_channels) positive(v, "fln_deconv_channels");
        positive(fusion_channels, "fusion_channels");
        if (input_h % 8 != 0 || input_w % 8 != 0) {
            throw ConfigError("model config: input size must be divisible by 8");
        }
        if (cts_channels[5] != fusion_channels) {
            throw ConfigError("model config: CTS output width must equal fusion_channels");
        }
        if (its_transpose_channels[4] != fusion_channels) {
            throw ConfigError("model config: ITS output width must equal fusion_channels");
        }
        if (feb_channels[1] != its_transpose_channels[0] || feb_channels[2] != its_transpose_channels[1]) {
            throw ConfigError("model config: FEB widths must match the preceding transpose outputs");
        }
    }

    /// Small configuration for 64-bit gradient checks.
    static ModelConfig tiny(int input = 16) {
        ModelConfig c;
        c.input_h = c.input_w = input;
        c.cts_channels = {4, 4, 6, 6, 8, 8};
        c.feb_layers = {2, 2, 2};
        c.feb_channels = {4, 4, 6};
        c.ddb_layers = 2;
        c.ddb_growth = 4;
        c.its_transpose_channels = {4, 6, 8, 8, 8};
        c.fln_transpose_channels = {6, 6};
        c.fln_deconv_channels = {8, 6, 6};
        c.fusion_channels = 8;
        return c;
    }

    /// Lean configuration for desk-scale training runs (Cf stays 32).
    static ModelConfig desk_small(int input = 64) {
        ModelConfig c;
        c.input_h = c.input_w = input;
        c.cts_channels = {8, 8, 12, 12, 16, 32};
        c.feb_layers = {2, 2, 2};
        c.feb_channels = {8, 8, 12};
        c.ddb_layers = 2;
        c.ddb_growth = 6;
        c.its_transpose_channels = {8, 12, 16, 24, 32};
        c.fln_transpose_channels = {12, 12};
        c.fln_deconv_channels = {16, 12, 12};
        c.fusion_channels = 32;
        return c;
    }

    bool operator==(const ModelConfig&) const = default;
};

namespace layers {

template <typename T>
struct Conv2d {
    Tensor<T> weight;  // [K,C,kh,kw]
    Tensor<T> bias;    // [K]
    Conv2dSpec spec;

    void init(int in_ch, int out_ch, int kernel, Conv2dSpec sp, Rng& rng) {
        spec = sp;
        const double stddev = std::sqrt(2.0 / (static_cast<double>(in_ch) * kernel * kernel));
        std::vector<T> w(static_cast<std::size_t>(out_ch) * in_ch * kernel * kernel);
        for (auto& v : w) v = static_cast<T>(rng.normal() * stddev);
        weight = Tensor<T>::from_data({out_ch, in_ch, kernel, kernel}, std::move(w), true);
        bias = Tensor<T>::zeros({out_ch}, true);
    }

    Tensor<T> forward(Graph<T>* g, const Tensor<T>& x) const { return conv2d(g, x, weight, bias, spec); }
};

template <typename T>
struct Deconv2d {
    Tensor<T> weight;  // [C,K,4,4]
    Tensor<T> bias;
    ConvTranspose2dSpec spec{2, 1, 0};  // exact x2 upsampling

    void init(int in_ch, int out_ch, Rng& rng) {
        const double stddev = std::sqrt(2.0 / (static_cast<double>(in_ch) * 16));
        std::vector<T> w(static_cast<std::size_t>(in_ch) * out_ch * 16);
        for (auto& v : w) v = static_cast<T>(rng.normal() * stddev);
        weight = Tensor<T>::from_data({in_ch, out_ch, 4, 4}, std::move(w), true);
        bias = Tensor<T>::zeros({out_ch}, true);
    }

    Tensor<T> forward(Graph<T>* g, const Tensor<T>& x) const { return conv_transpose2d(g, x, weight, bias, spec); }
};

template <typename T>
struct BatchNorm2d {
    Tensor<T> gamma;
    Tensor<T> beta;
    BatchNormState<T> state;

    void init(int channels) {
        gamma = Tensor<T>::filled({channels}, T(1), true);
        beta = Tensor<T>::zeros({channels}, true);
        state = BatchNormState<T>(channels);
    }

    Tensor<T> forward(Graph<T>* g, const Tensor<T>& x, bool training) {
        return batch_norm(g, x, gamma, beta, state, training);
    }
};

/// One H_i unit: 3x3 conv (padding = dilation), batch norm, ReLU.
template <typename T>
struct ConvBnRelu {
    Conv2d<T> conv;
    BatchNorm2d<T> bn;

    void init(int in_ch, int out_ch, int kernel, int dilation, Rng& rng) {
        const int pad = kernel == 1 ? 0 : dilation;
        conv.init(in_ch, out_ch, kernel, Conv2dSpec{1, dilation, pad}, rng);
        bn.init(out_ch);
    }

    Tensor<T> forward(Graph<T>* g, const Tensor<T>& x, bool training) {
        return relu(g, bn.forward(g, conv.forward(g, x), training));
    }
};

/// Densely connected layers fused by element-wise addition instead of
/// concatenation: f_i = H_i(f_{i-1} + f_{i-2}) with f_0 the block input and
/// f_{-1} the zero tensor, so every layer preserves the block width.
template <typename T>
struct FeatureEnhancedBlock {
    std::vector<ConvBnRelu<T>> units;

    void init(int channels, int n_layers, Rng& rng) {
        if (n_layers < 1) throw ConfigError("feature-enhanced block needs at least one layer");
        units.resize(static_cast<std::size_t>(n_layers));
        for (auto& layer : units) layer.init(channels, channels, 3, 1, rng);
    }

    Tensor<T> forward(Graph<T>* g, const Tensor<T>& f0, bool training) {
        Tensor<T> prev1 = f0;  // f_{i-1}
        Tensor<T> prev2;       // f_{i-2}; undefined stands for the zero tensor
        for (auto& layer : units) {
            Tensor<T> input = prev2.defined() ? add(g, prev1, prev2) : prev1;
            Tensor<T> out = layer.forward(g, input, training);
            if (out.shape() != f0.shape()) throw ShapeError("feature-enhanced block drifted in shape");
            prev2 = prev1;
            prev1 = out;
        }
        return prev1;
    }
};

/// Regular dense connectivity: every layer consumes the concatenation of the
/// block input and all previous layer outputs and emits `growth` channels.
template <typename T>
struct DenseBlock {
    std::vector<ConvBnRelu<T>> units;
    int growth = 0;

    void init(int in_ch, int n_layers, int growth_rate, int dilation, Rng& rng) {
        growth = growth_rate;
        units.resize(static_cast<std::size_t>(n_layers));
        for (int i = 0; i < n_layers; ++i) {
            units[static_cast<std::size_t>(i)].init(in_ch + i * growth_rate, growth_rate, 3, dilation, rng);
        }
    }

    int out_channels(int in_ch) const { return in_ch + static_cast<int>(units.size()) * growth; }

    Tensor<T> forward(Graph<T>* g, const Tensor<T>& f0, bool training) {
        std::vector<Tensor<T>> feats{f0};
        for (auto& layer : units) {
            Tensor<T> input = feats.size() == 1 ? feats[0] : concat_channels(g, feats);
            feats.push_back(layer.forward(g, input, training));
        }
        return concat_channels(g, feats);
    }
};

enum class TransposePool { kMaxStride1, kAvgStride2 };

/// Compression stage between blocks: BN, ReLU, 1x1 conv, pooling. Stride-1
/// max pooling preserves the resolution; stride-2 average pooling halves it.
template <typename T>
struct TransposeLayer {
    BatchNorm2d<T> bn;
    Conv2d<T> conv1x1;
    TransposePool pool;

    void init(int in_ch, int out_ch, TransposePool mode, Rng& rng) {
        pool = mode;
        bn.init(in_ch);
        conv1x1.init(in_ch, out_ch, 1, Conv2dSpec{1, 1, 0}, rng);
    }

    Tensor<T> forward(Graph<T>* g, const Tensor<T>& x, bool training) {
        Tensor<T> y = conv1x1.forward(g, relu(g, bn.forward(g, x, training)));
        if (pool == TransposePool::kMaxStride1) {
            return pool2d(g, y, Pool2dSpec{PoolMode::kMax, 2, 1, 0, 1});
        }
        if (y.dim(2) % 2 != 0 || y.dim(3) % 2 != 0) {
            throw ShapeError("transpose layer: stride-2 average pooling needs even spatial size");
        }
        return pool2d(g, y, Pool2dSpec{PoolMode::kAvg, 2, 2, 0, 0});
    }
};

}  // namespace layers

template <typename T>
struct ModelT {
    ModelConfig config;

    // character texture stream
    std::array<layers::Conv2d<T>, 6> cts_conv;
    // image texture stream
    layers::ConvBnRelu<T> its_entry;  // 1x1 projection onto feb_channels[0]
    std::array<layers::FeatureEnhancedBlock<T>, 3> feb;
    std::array<layers::DenseBlock<T>, 2> its_dense;
    std::array<layers::TransposeLayer<T>, 5> its_transpose;
    // forgery localization network
    std::array<layers::Deconv2d<T>, 3> fln_deconv;
    std::array<layers::DenseBlock<T>, 2> fln_dense;
    std::array<layers::TransposeLayer<T>, 2> fln_transpose;
    layers::Conv2d<T> fln_head;  // 1x1 conv to the two class channels

    /// Trainable parameters in declared order (the checkpoint order).
    std::vector<Tensor<T>> parameters() {
        std::vector<Tensor<T>> out;
        auto conv = [&out](layers::Conv2d<T>& c) {
            out.push_back(c.weight);
            out.push_back(c.bias);
        };
        auto bn = [&out](layers::BatchNorm2d<T>& b) {
            out.push_back(b.gamma);
            out.push_back(b.beta);
        };
        auto cbr = [&](layers::ConvBnRelu<T>& u) {
            conv(u.conv);
            bn(u.bn);
        };
        for (auto& c : cts_conv) conv(c);
        cbr(its_entry);
        for (int i = 0; i < 3; ++i) {
            for (auto& u : feb[static_cast<std::size_t>(i)].units) cbr(u);
            bn(its_transpose[static_cast<std::size_t>(i)].bn);
            conv(its_transpose[static_cast<std::size_t>(i)].conv1x1);
        }
        for (int i = 0; i < 2; ++i) {
            for (auto& u : its_dense[static_cast<std::size_t>(i)].units) cbr(u);
            bn(its_transpose[static_cast<std::size_t>(3 + i)].bn);
            conv(its_transpose[static_cast<std::size_t>(3 + i)].conv1x1);
        }
        for (int i = 0; i < 3; ++i) {
            out.push_back(fln_deconv[static_cast<std::size_t>(i)].weight);
            out.push_back(fln_deconv[static_cast<std::size_t>(i)].bias);
            if (i < 2) {
                for (auto& u : fln_dense[static_cast<std::size_t>(i)].units) cbr(u);
                bn(fln_transpose[static_cast<std::size_t>(i)].bn);
                conv(fln_transpose[static_cast<std::size_t>(i)].conv1x1);
            }
        }
        conv(fln_head);
        return out;
    }

    /// Batch-norm running statistics in declared order (saved with the
    /// parameters so a checkpointed model is bit-identical at inference).
    std::vector<BatchNormState<T>*> buffers() {
        std::vector<BatchNormState<T>*> out;
        auto cbr = [&out](layers::ConvBnRelu<T>& u) { out.push_back(&u.bn.state); };
        cbr(its_entry);
        for (int i = 0; i < 3; ++i) {
            for (auto& u : feb[static_cast<std::size_t>(i)].units) cbr(u);
            out.push_back(&its_transpose[static_cast<std::size_t>(i)].bn.state);
        }
        for (int i = 0; i < 2; ++i) {
            for (auto& u : its_dense[static_cast<std::size_t>(i)].units) cbr(u);
            out.push_back(&its_transpose[static_cast<std::size_t>(3 + i)].bn.state);
        }
        for (int i = 0; i < 2; ++i) {
            for (auto& u : fln_dense[static_cast<std::size_t>(i)].units) cbr(u);
            out.push_back(&fln_transpose[static_cast<std::size_t>(i)].bn.state);
        }
        return out;
    }

    std::int64_t parameter_count() {
        std::int64_t n = 0;
        for (auto& p : parameters()) n += p.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : parameters()) p.zero_grad();
    }
};

using Model = ModelT<float>;

/// Deterministic build: same config and seed reproduce identical parameters.
template <typename T = float>
ModelT<T> build_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelT<T> m;
    m.config = config;
    Rng rng(mix_seed(seed, 0x6d6f64656cULL));

    const Conv2dSpec conv3{1, 1, 1};
    int ch = config.in_channels;
    for (int i = 0; i < 6; ++i) {
        m.cts_conv[static_cast<std::size_t>(i)].init(ch, config.cts_channels[static_cast<std::size_t>(i)], 3, conv3,
                                                     rng);
        ch = config.cts_channels[static_cast<std::size_t>(i)];
    }

    m.its_entry.init(config.in_channels, config.feb_channels[0], 1, 1, rng);
    int its_ch = config.feb_channels[0];
    for (int i = 0; i < 3; ++i) {
        m.feb[static_cast<std::size_t>(i)].init(its_ch, config.feb_layers[static_cast<std::size_t>(i)], rng);
        const auto mode = i < 2 ? layers::TransposePool::kMaxStride1 : layers::TransposePool::kAvgStride2;
        m.its_transpose[static_cast<std::size_t>(i)].init(its_ch, config.its_transpose_channels[static_cast<std::size_t>(i)],
                                                          mode, rng);
        its_ch = config.its_transpose_channels[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < 2; ++i) {
        m.its_dense[static_cast<std::size_t>(i)].init(its_ch, config.ddb_layers, config.ddb_growth, 2, rng);
        const int dense_out = m.its_dense[static_cast<std::size_t>(i)].out_channels(its_ch);
        m.its_transpose[static_cast<std::size_t>(3 + i)].init(
            dense_out, config.its_transpose_channels[static_cast<std::size_t>(3 + i)],
            layers::TransposePool::kAvgStride2, rng);
        its_ch = config.its_transpose_channels[static_cast<std::size_t>(3 + i)];
    }

    int fln_ch = config.fusion_channels;
    for (int i = 0; i < 3; ++i) {
        m.fln_deconv[static_cast<std::size_t>(i)].init(fln_ch, config.fln_deconv_channels[static_cast<std::size_t>(i)],
                                                       rng);
        fln_ch = config.fln_deconv_channels[static_cast<std::size_t>(i)];
        if (i < 2) {
            m.fln_dense[static_cast<std::size_t>(i)].init(fln_ch, config.ddb_layers, config.ddb_growth, 1, rng);
            const int dense_out = m.fln_dense[static_cast<std::size_t>(i)].out_channels(fln_ch);
            m.fln_transpose[static_cast<std::size_t>(i)].init(
                dense_out, config.fln_transpose_channels[static_cast<std::size_t>(i)],
                layers::TransposePool::kMaxStride1, rng);
            fln_ch = config.fln_transpose_channels[static_cast<std::size_t>(i)];
        }
    }
    m.fln_head.init(fln_ch, 2, 1, Conv2dSpec{1, 1, 0}, rng);
    return m;
}

namespace detail {
template <typename T>
void check_image_input(const ModelT<T>&, const Tensor<T>& image) {
    expect_ndim(image.shape(), 4, "model input");
    if (image.dim(2) % 8 != 0 || image.dim(3) % 8 != 0) {
        throw ShapeError("model input spatial size must be divisible by 8, got " + shape_str(image.shape()));
    }
}
}  // namespace detail

/// conv1-pool1(s1), conv2-pool2(s1), conv3, conv4-pool3(s2), conv5-pool4(s2),
/// conv6-pool5(s2); every conv is 3x3 + ReLU.
template <typename T>
Tensor<T> cts_forward(Graph<T>* g, ModelT<T>& m, const Tensor<T>& image) {
    detail::check_image_input(m, image);
    if (image.dim(1) != m.config.in_channels) throw ShapeError("cts_forward: channel mismatch");
    const Pool2dSpec pool_s1{PoolMode::kMax, 2, 1, 0, 1};
    const Pool2dSpec pool_s2{PoolMode::kMax, 2, 2, 0, 0};
    Tensor<T> x = relu(g, m.cts_conv[0].forward(g, image));
    x = pool2d(g, x, pool_s1);
    x = relu(g, m.cts_conv[1].forward(g, x));
    x = pool2d(g, x, pool_s1);
    x = relu(g, m.cts_conv[2].forward(g, x));  // third conv has no pool
    x = relu(g, m.cts_conv[3].forward(g, x));
    x = pool2d(g, x, pool_s2);
    x = relu(g, m.cts_conv[4].forward(g, x));
    x = pool2d(g, x, pool_s2);
    x = relu(g, m.cts_conv[5].forward(g, x));
    x = pool2d(g, x, pool_s2);
    return x;
}

/// Entry projection, then FEB1-T1(max s1), FEB2-T2(max s1), FEB3-T3(avg s2),
/// DDB1-T4(avg s2), DDB2-T5(avg s2).
template <typename T>
Tensor<T> its_forward(Graph<T>* g, ModelT<T>& m, const Tensor<T>& image, bool training) {
    detail::check_image_input(m, image);
    if (image.dim(1) != m.config.in_channels) throw ShapeError("its_forward: channel mismatch");
    Tensor<T> x = m.its_entry.forward(g, image, training);
    for (int i = 0; i < 3; ++i) {
        x = m.feb[static_cast<std::size_t>(i)].forward(g, x, training);
        x = m.its_transpose[static_cast<std::size_t>(i)].forward(g, x, training);
    }
    for (int i = 0; i < 2; ++i) {
        x = m.its_dense[static_cast<std::size_t>(i)].forward(g, x, training);
        x = m.its_transpose[static_cast<std::size_t>(3 + i)].forward(g, x, training);
    }
    return x;
}

/// Element-wise fusion of the two stream outputs.
template <typename T>
Tensor<T> fuse(Graph<T>* g, const Tensor<T>& cts_feat, const Tensor<T>& its_feat) {
    return add(g, cts_feat, its_feat);
}

/// deconv(x2), dense block, transpose(max s1), deconv(x2), dense block,
/// transpose(max s1), deconv(x2), 1x1 conv to 2 channels.
template <typename T>
Tensor<T> fln_forward(Graph<T>* g, ModelT<T>& m, const Tensor<T>& fused, bool training) {
    detail::expect_ndim(fused.shape(), 4, "fln_forward input");
    if (fused.dim(1) != m.config.fusion_channels) throw ShapeError("fln_forward: channel mismatch");
    Tensor<T> x = fused;
    for (int i = 0; i < 3; ++i) {
        x = m.fln_deconv[static_cast<std::size_t>(i)].forward(g, x);
        if (i < 2) {
            x = m.fln_dense[static_cast<std::size_t>(i)].forward(g, x, training);
            x = m.fln_transpose[static_cast<std::size_t>(i)].forward(g, x, training);
        }
    }
    return m.fln_head.forward(g, x);
}

/// Full forward pass to logits [N,2,H,W].
template <typename T>
Tensor<T> model_forward(Graph<T>* g, ModelT<T>& m, const Tensor<T>& image, bool training) {
    Tensor<T> c = cts_forward(g, m, image);
    Tensor<T> t = its_forward(g, m, image, training);
    return fln_forward(g, m, fuse(g, c, t), training);
}

struct Prediction {
    Tensor<float> prob;        // [N,H,W], forged-class probability
    std::vector<Mask> masks;   // prob > 0.5 (strict)
};

/// Inference-mode prediction; ties at probability exactly 0.5 stay authentic.
template <typename T>
Prediction predict_mask(ModelT<T>& m, const Tensor<T>& image) {
    Tensor<T> logits = model_forward<T>(nullptr, m, image, false);
    Tensor<T> sm = softmax_channels<T>(nullptr, logits);
    const int n = sm.dim(0), h = sm.dim(2), w = sm.dim(3);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    Prediction pred;
    std::vector<float> prob(static_cast<std::size_t>(n) * plane);
    pred.masks.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Mask mask(w, h);
        const T* forged = sm.data() + (static_cast<std::int64_t>(i) * 2 + 1) * plane;
        for (std::int64_t p = 0; p < plane; ++p) {
            const float v = static_cast<float>(forged[p]);
            prob[static_cast<std::size_t>(i * plane + p)] = v;
            mask.v[static_cast<std::size_t>(p)] = v > 0.5f ? 1 : 0;
        }
        pred.masks.push_back(std::move(mask));
    }
    pred.prob = Tensor<float>::from_data({n, h, w}, std::move(prob));
    return pred;
}

// --- checkpoint format ------------------------------------------------------
//
// magic "CTPN", u16 version, config as little-endian u32 fields, u32 tensor
// count, then every parameter tensor followed by every batch-norm running
// buffer, each as u32 ndim + dims and raw little-endian f32 data.

constexpr std::uint16_t kCheckpointVersion = 1;

namespace detail {

inline void put_config(std::ostream& os, const ModelConfig& c) {
    auto put = [&os](int v) { put_u32_le(os, static_cast<std::uint32_t>(v)); };
    put(c.input_h);
    put(c.input_w);
    put(c.in_channels);
    for (int v : c.cts_channels) put(v);
    for (int v : c.feb_layers) put(v);
    for (int v : c.feb_channels) put(v);
    put(c.ddb_layers);
    put(c.ddb_growth);
    for (int v : c.its_transpose_channels) put(v);
    for (int v : c.fln_transpose_channels) put(v);
    for (int v : c.fln_deconv_channels) put(v);
    put(c.fusion_channels);
}

inline ModelConfig get_config(std::istream& is) {
    ModelConfig c;
    auto get = [&is]() { return static_cast<int>(get_u32_le(is)); };
    c.input_h = get();
    c.input_w = get();
    c.in_channels = get();
    for (int& v : c.cts_channels) v = get();
    for (int& v : c.feb_layers) v = get();
    for (int& v : c.feb_channels) v = get();
    c.ddb_layers = get();
    c.ddb_growth = get();
    for (int& v : c.its_transpose_channels) v = get();
    for (int& v : c.fln_transpose_channels) v = get();
    for (int& v : c.fln_deconv_channels) v = get();
    c.fusion_channels = get();
    return c;
}

inline void put_f32_block(std::ostream& os, const Shape& shape, const float* data, std::int64_t n) {
    put_u32_le(os, static_cast<std::uint32_t>(shape.size()));
    for (int d : shape) put_u32_le(os, static_cast<std::uint32_t>(d));
    for (std::int64_t i = 0; i < n; ++i) put_f32_le(os, data[i]);
}

}  // namespace detail

inline void save_checkpoint(Model& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open checkpoint " + path + " for writing");
    os.write("CTPN", 4);
    detail::put_u16_le(os, kCheckpointVersion);
    detail::put_config(os, model.config);
    auto params = model.parameters();
    auto buffers = model.buffers();
    detail::put_u32_le(os, static_cast<std::uint32_t>(params.size() + 2 * buffers.size()));
    for (auto& p : params) detail::put_f32_block(os, p.shape(), p.data(), p.size());
    for (auto* b : buffers) {
        const int c = static_cast<int>(b->running_mean.size());
        detail::put_f32_block(os, {c}, b->running_mean.data(), c);
        detail::put_f32_block(os, {c}, b->running_var.data(), c);
    }
    if (!os) throw DataError("checkpoint write failed: " + path);
}

inline Model load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "CTPN", 4) != 0) throw DataError("not a CTPN checkpoint: " + path);
    const std::uint16_t version = detail::get_u16_le(is);
    if (version != kCheckpointVersion) {
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    }
    const ModelConfig config = detail::get_config(is);
    Model model = build_model<float>(config, 0);
    auto params = model.parameters();
    auto buffers = model.buffers();
    const std::uint32_t count = detail::get_u32_le(is);
    if (count != params.size() + 2 * buffers.size()) throw DataError("checkpoint tensor count mismatch");

    auto read_block = [&is, &path](const Shape& expected, float* dst, std::int64_t n) {
        const std::uint32_t ndim = detail::get_u32_le(is);
        if (ndim != expected.size()) throw DataError("checkpoint shape mismatch in " + path);
        for (int d : expected) {
            if (detail::get_u32_le(is) != static_cast<std::uint32_t>(d)) {
                throw DataError("checkpoint shape mismatch in " + path);
            }
        }
        for (std::int64_t i = 0; i < n; ++i) dst[i] = detail::get_f32_le(is);
        if (!is) throw DataError("truncated checkpoint: " + path);
    };
    for (auto& p : params) read_block(p.shape(), p.data(), p.size());
    for (auto* b : buffers) {
        const int c = static_cast<int>(b->running_mean.size());
        read_block({c}, b->running_mean.data(), c);
        read_block({c}, b->running_var.data(), c);
    }
    return model;
}

}  // namespace ctpnet
