#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "nfad/errors.hpp"

namespace nfad {

using Shape = std::vector<int>;

int64_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

// One node of the computation graph. Values are float64, row-major.
// Nodes are immutable after construction except for the grad buffer
// (and the value buffer of leaf parameters, which the optimizer owns).
struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // same length as value once touched
    bool requires_grad = false;
    uint64_t id = 0;
    std::string label; // layer scope or op name, used in error reports
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::function<void(TensorNode&)> backprop; // empty for leaves

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

// Value-semantics handle to a graph node. Copies share the node.
class Tensor {
public:
    Tensor() = default;

    static Tensor constant(Shape shape, std::vector<double> value);
    static Tensor scalar(double v);
    static Tensor zeros(const Shape& shape);
    static Tensor parameter(Shape shape, std::vector<double> value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t size() const { return static_cast<int64_t>(node_->value.size()); }
    const std::vector<double>& value() const { return node_->value; }
    // Leaf parameters only: in-place update between steps (optimizer).
    std::vector<double>& mutable_value();
    bool requires_grad() const { return node_->requires_grad; }
    const std::vector<double>& grad() const;
    void zero_grad();
    double item() const;
    void set_label(std::string s) { node_->label = std::move(s); }
    const std::string& label() const { return node_->label; }
    TensorNode* node() const { return node_.get(); }
    std::shared_ptr<TensorNode> node_ptr() const { return node_; }

    // Throws NonFiniteActivation naming the node's label if any value
    // is inf/nan.
    void check_finite() const;

private:
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
    std::shared_ptr<TensorNode> node_;
    friend Tensor make_node(Shape, std::vector<double>, std::vector<Tensor>,
                            std::function<void(TensorNode&)>, const char*);
};

// Disables graph construction in scope; forward values still computed.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// Labels every node created while in scope; flow layers use this so
// non-finite errors report the layer, not a bare op name.
class LayerScope {
public:
    explicit LayerScope(std::string name);
    ~LayerScope();
    LayerScope(const LayerScope&) = delete;
    LayerScope& operator=(const LayerScope&) = delete;

private:
    std::string prev_;
};

// ---- op vocabulary -------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
// a + broadcast of a one-element tensor
Tensor add_broadcast(const Tensor& a, const Tensor& s);

Tensor matmul(const Tensor& a, const Tensor& b);
// y = x @ (w * mask), mask is a constant binary matrix
Tensor masked_matmul(const Tensor& x, const Tensor& w, const Tensor& mask);
// [m,n] + [n] row-wise
Tensor bias_add(const Tensor& x, const Tensor& b);

Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// NCHW, stride 1, zero "same" padding, odd square-or-rect kernels
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b);
// y[b,o,h,w] = sum_c W[o,c] x[b,c,h,w]
Tensor channel_mix(const Tensor& x, const Tensor& w);
// log|det W| for square W (LU at forward time)
Tensor logdet_abs(const Tensor& w);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
// [B, ...] -> [B], summing everything but the leading axis
Tensor sum_rows(const Tensor& a);

// x * s + b with s,b over the last axis ([B,D] with [D])
Tensor affine_rows(const Tensor& x, const Tensor& s, const Tensor& b);
// x * s + b with s,b per channel ([B,C,H,W] with [C])
Tensor affine_channels(const Tensor& x, const Tensor& s, const Tensor& b);

Tensor slice_cols(const Tensor& x, int c0, int c1);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, int c0, int c1);
Tensor concat_channels(const Tensor& a, const Tensor& b);
// [B,C,H,W] -> [B,4C,H/2,W/2] and back
Tensor squeeze2(const Tensor& x);
Tensor unsqueeze2(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// Reverse-mode sweep from a scalar loss. Accumulates into existing
// parameter grads; call zero_grad() between steps. Throws
// NonFiniteGradient naming the node where a non-finite grad appears.
void backward(const Tensor& loss);

} // namespace nfad
