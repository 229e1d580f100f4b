#pragma once

#include <algorithm>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <utility>

#include "ctpnet/common.hpp"

namespace ctpnet {

/// Dense NCHW tensor with shared-node identity. A tensor produced by an op
/// carries a grad buffer when it participates in a recorded graph; parameter
/// tensors allocate their grad buffer at creation so an untouched parameter
/// reads as zero gradient.
template <typename T>
class Tensor {
    struct Node {
        Shape shape;
        std::vector<T> value;
        std::vector<T> grad;  // empty unless requires_grad
        bool requires_grad = false;
    };

public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static Tensor filled(Shape shape, T value, bool requires_grad = false) {
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        validate_shape(t.node_->shape);
        t.node_->value.assign(static_cast<std::size_t>(numel(t.node_->shape)), value);
        if (requires_grad) t.enable_grad();
        return t;
    }

    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        Tensor t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        validate_shape(t.node_->shape);
        if (static_cast<std::int64_t>(data.size()) != numel(t.node_->shape)) {
            throw ShapeError("tensor data length does not match shape " + shape_str(t.node_->shape));
        }
        ensure_all_finite(std::span<const T>(data), "tensor construction");
        t.node_->value = std::move(data);
        if (requires_grad) t.enable_grad();
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }

    T* data() { return node_->value.data(); }
    const T* data() const { return node_->value.data(); }
    std::vector<T>& values() { return node_->value; }
    const std::vector<T>& values() const { return node_->value; }

    bool requires_grad() const { return node_ && node_->requires_grad; }

    void enable_grad() {
        node_->requires_grad = true;
        if (node_->grad.size() != node_->value.size()) {
            node_->grad.assign(node_->value.size(), T(0));
        }
    }

    bool has_grad_buffer() const { return node_ && !node_->grad.empty(); }

    std::vector<T>& grad() {
        if (!has_grad_buffer()) throw NumericError("tensor has no gradient buffer");
        return node_->grad;
    }
    const std::vector<T>& grad() const {
        if (!has_grad_buffer()) throw NumericError("tensor has no gradient buffer");
        return node_->grad;
    }

    void zero_grad() {
        if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    /// Identity comparison (same autodiff node).
    bool same_node(const Tensor& other) const { return node_ == other.node_; }

private:
    static void validate_shape(const Shape& shape) {
        for (int d : shape) {
            if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
        }
    }

    std::shared_ptr<Node> node_;
};

/// Reverse-mode tape. Ops executed against a graph append their backward
/// step in execution order, which is a topological order by construction;
/// backward() seeds the scalar loss with gradient 1 and replays the tape in
/// reverse. Each graph is confined to one logical thread.
template <typename T>
class Graph {
public:
    void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

    std::size_t size() const { return steps_.size(); }
    void clear() { steps_.clear(); }

    void backward(Tensor<T>& loss) {
        if (!loss.defined() || loss.size() != 1) {
            throw ShapeError("backward requires a scalar loss");
        }
        if (!loss.requires_grad()) {
            throw NumericError("loss is not connected to any gradient-tracked tensor");
        }
        loss.grad()[0] += T(1);
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
        steps_.clear();
    }

private:
    std::vector<std::function<void()>> steps_;
};

/// Plain SGD over an explicit parameter list: p <- p - lr * grad, then the
/// gradient buffers are cleared.
template <typename T>
class Sgd {
public:
    explicit Sgd(T learning_rate) : lr_(learning_rate) {
        if (!(learning_rate > T(0))) throw ConfigError("learning rate must be positive");
    }

    void add_parameter(Tensor<T> p) { params_.push_back(std::move(p)); }
    void add_parameters(const std::vector<Tensor<T>>& ps) {
        for (const auto& p : ps) params_.push_back(p);
    }

    T learning_rate() const { return lr_; }
    std::size_t parameter_count() const { return params_.size(); }

    void step() {
        for (auto& p : params_) {
            if (!p.has_grad_buffer()) throw NumericError("sgd_step: parameter has no gradient");
            T* v = p.data();
            const std::vector<T>& g = p.grad();
            for (std::size_t i = 0; i < g.size(); ++i) v[i] -= lr_ * g[i];
        }
        zero_grad();
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

private:
    T lr_;
    std::vector<Tensor<T>> params_;
};

/// Debug dump: little-endian u32 ndim + dims, then values as little-endian
/// 32-bit floats.
namespace detail {
inline void put_u32_le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff), static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
inline void put_f32_le(std::ostream& os, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32_le(os, v);
}
inline float get_f32_le(std::istream& is) {
    std::uint32_t v = get_u32_le(is);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}
inline void put_u16_le(std::ostream& os, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 2);
}
inline std::uint16_t get_u16_le(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}
}  // namespace detail

template <typename T>
void dump_tensor(const Tensor<T>& t, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path + " for writing");
    detail::put_u32_le(os, static_cast<std::uint32_t>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) detail::put_u32_le(os, static_cast<std::uint32_t>(t.dim(i)));
    for (std::int64_t i = 0; i < t.size(); ++i) detail::put_f32_le(os, static_cast<float>(t.data()[i]));
    if (!os) throw DataError("write failed: " + path);
}

}  // namespace ctpnet
