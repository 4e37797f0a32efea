#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "bdg/kernels.hpp"
#include "bdg/tensor.hpp"

namespace bdg {

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    /// Reads this->grad and accumulates into the inputs' grads.
    std::function<void(Node&)> backward;

    Tensor<T>& grad_buffer() {
        if (grad.empty()) grad = Tensor<T>(value.shape());
        return grad;
    }
};

/// Handle to a value in the reverse-mode tape. Copies share the node.
template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false)
        : node_(std::make_shared<Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }
    explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    bool defined() const noexcept { return node_ != nullptr; }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Tensor<T>& grad() const { return node_->grad; }
    Tensor<T>& grad_buffer() { return node_->grad_buffer(); }
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    const Shape& shape() const { return node_->value.shape(); }
    void zero_grad() {
        if (!node_->grad.empty()) node_->grad.fill(T{0});
    }
    const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Tape node for a computed value. `fn` reads self.grad and accumulates into
/// the inputs' grads; it is dropped when no input requires a gradient.
template <typename T>
Var<T> make_node(Tensor<T> value, std::vector<std::shared_ptr<Node<T>>> inputs,
                 std::function<void(Node<T>&)> fn) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    for (const auto& in : inputs) {
        if (in && in->requires_grad) node->requires_grad = true;
    }
    if (node->requires_grad) {
        node->inputs = std::move(inputs);
        node->backward = std::move(fn);
    }
    return Var<T>(std::move(node));
}

/// Runs reverse accumulation from a single-element root.
template <typename T>
void backward(const Var<T>& root);

/// Collects FLOPs reported by the ops while alive on this thread. Used to
/// cross-check the analytic counter against what a forward pass executes.
class FlopTally {
public:
    FlopTally();
    ~FlopTally();
    FlopTally(const FlopTally&) = delete;
    FlopTally& operator=(const FlopTally&) = delete;

    std::int64_t total() const noexcept { return total_; }
    static void add(std::int64_t flops);

private:
    std::int64_t total_ = 0;
    FlopTally* previous_ = nullptr;
};

namespace ops {

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, const ConvGeometry& geom);

/// Batch normalisation over (N, H, W). In training mode batch statistics are
/// used and the running estimates updated; otherwise the running estimates.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, bool training, T momentum = T(0.1), T eps = T(1e-5));

template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> sigmoid(const Var<T>& x);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> add(const std::vector<Var<T>>& terms);

/// x * gate, where gate has one channel and is broadcast over x's channels,
/// or has exactly x's shape.
template <typename T>
Var<T> mul(const Var<T>& x, const Var<T>& gate);

template <typename T>
Var<T> avg_pool2(const Var<T>& x);
template <typename T>
Var<T> resize_bilinear(const Var<T>& x, int out_h, int out_w);
template <typename T>
Var<T> upsample(const Var<T>& x, int factor);

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts);

/// Sum of x * weights (weights has x's shape). Used by gradient checks.
template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights);
template <typename T>
Var<T> sum(const Var<T>& x);

}  // namespace ops

}  // namespace bdg
