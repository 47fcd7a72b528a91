#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "koel/common.hpp"

namespace koel {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape &s);
std::string shape_str(const Shape &s);

// One autograd graph node. Values are written once when the node is created
// and treated as immutable afterwards; only leaf parameters are ever updated
// in place (by the optimizer, between steps).
template <class S>
struct TensorNodeT {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad; // sized lazily, only on nodes that require grad
    bool requires_grad = false;
    // reductions keep their double-accumulated result here so scalar losses
    // can be read without the float32 rounding of value[0]
    double scalar_cache = std::numeric_limits<double>::quiet_NaN();
    const char *op = "leaf";
    std::vector<std::shared_ptr<TensorNodeT>> parents;
    std::function<void(TensorNodeT &)> backward;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), S(0));
    }
};

// Shared handle to a node. Copies share storage; tensors behave as values
// because node contents never change after construction.
template <class S>
class TensorT {
  public:
    using Node = TensorNodeT<S>;

    TensorT() = default;

    static TensorT zeros(Shape shape);
    static TensorT full(Shape shape, S v);
    static TensorT from(Shape shape, std::vector<S> data);
    static TensorT scalar_value(double v);
    static TensorT randn(Shape shape, Rng &rng, double stddev = 1.0);
    static TensorT uniform(Shape shape, Rng &rng, double lo, double hi);

    bool defined() const { return static_cast<bool>(n_); }
    const Shape &shape() const { return n_->shape; }
    int ndim() const { return static_cast<int>(n_->shape.size()); }
    int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(n_->value.size()); }

    const std::vector<S> &data() const { return n_->value; }
    S at(std::initializer_list<int> idx) const;

    bool requires_grad() const { return n_->requires_grad; }
    TensorT &set_requires_grad(bool on);
    const std::vector<S> &grad() const;
    void zero_grad();

    // scalar readout; prefers the double-accumulated cache when present
    double scalar() const;

    // reverse pass from this (must be a single-element tensor)
    void backward();

    // in-place access for optimizer updates on leaves
    std::vector<S> &leaf_data();

    std::shared_ptr<Node> node() const { return n_; }
    explicit TensorT(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  private:
    std::shared_ptr<Node> n_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// Builds an op node: runs the finiteness check, wires parents, and marks
// requires_grad if any parent needs it. Custom loss ops (CTC) use this too.
template <class S>
TensorT<S> make_node(const char *op, Shape shape, std::vector<S> value,
                     std::vector<TensorT<S>> parents,
                     std::function<void(TensorNodeT<S> &)> backward_fn,
                     double scalar_cache = std::numeric_limits<double>::quiet_NaN());

// ---------------------------------------------------------------------------
// op suite
// ---------------------------------------------------------------------------

template <class S> TensorT<S> matmul(const TensorT<S> &a, const TensorT<S> &b);
template <class S> TensorT<S> bmm(const TensorT<S> &a, const TensorT<S> &b);
template <class S> TensorT<S> add(const TensorT<S> &a, const TensorT<S> &b);
template <class S> TensorT<S> sub(const TensorT<S> &a, const TensorT<S> &b);
template <class S> TensorT<S> mul(const TensorT<S> &a, const TensorT<S> &b);
template <class S> TensorT<S> scale(const TensorT<S> &a, double s);
// broadcast bias over the last axis
template <class S> TensorT<S> add_bias(const TensorT<S> &x, const TensorT<S> &bias);
template <class S> TensorT<S> reshape(const TensorT<S> &a, Shape shape);
template <class S> TensorT<S> permute(const TensorT<S> &a, const std::vector<int> &axes);
template <class S> TensorT<S> transpose(const TensorT<S> &a, int ax0, int ax1);
template <class S> TensorT<S> concat(const std::vector<TensorT<S>> &parts, int axis);
template <class S> TensorT<S> slice(const TensorT<S> &a, int axis, int start, int len);
template <class S> TensorT<S> embedding(const TensorT<S> &table, const std::vector<int> &ids);
template <class S> TensorT<S> softmax(const TensorT<S> &x);     // over last axis
template <class S> TensorT<S> log_softmax(const TensorT<S> &x); // over last axis
template <class S> TensorT<S> logsumexp(const TensorT<S> &x);   // over last axis
template <class S>
TensorT<S> layer_norm(const TensorT<S> &x, const TensorT<S> &gamma, const TensorT<S> &beta,
                      double eps = 1e-5);

// Running statistics for batch norm live outside the graph.
struct BatchNormState {
    std::vector<float> running_mean;
    std::vector<float> running_var;
    void init(int channels) {
        running_mean.assign(static_cast<size_t>(channels), 0.0f);
        running_var.assign(static_cast<size_t>(channels), 1.0f);
    }
};

// x is [N x C]; row_mask (empty = all rows valid) selects the rows that
// contribute to batch statistics. Padded rows still get normalized outputs
// but never touch the statistics.
template <class S>
TensorT<S> batch_norm(const TensorT<S> &x, const TensorT<S> &gamma, const TensorT<S> &beta,
                      BatchNormState &state, const std::vector<uint8_t> &row_mask, bool training,
                      double momentum = 0.1, double eps = 1e-5);

template <class S>
TensorT<S> conv2d(const TensorT<S> &x, const TensorT<S> &w, const TensorT<S> &bias, int stride);
// x [B x T x C], w [C x k] with k odd, same padding over time
template <class S>
TensorT<S> depthwise_conv1d(const TensorT<S> &x, const TensorT<S> &w, const TensorT<S> &bias);
// x [B x T x Cin], w [Cin x Cout]: 1x1 convolution over time
template <class S>
TensorT<S> pointwise_conv1d(const TensorT<S> &x, const TensorT<S> &w, const TensorT<S> &bias);
template <class S> TensorT<S> glu(const TensorT<S> &x); // split last axis in half, a*sigmoid(b)
template <class S> TensorT<S> swish(const TensorT<S> &x);
template <class S> TensorT<S> relu(const TensorT<S> &x);
template <class S> TensorT<S> sigmoid(const TensorT<S> &x);
template <class S> TensorT<S> dropout(const TensorT<S> &x, double p, Rng &rng, bool training);
// keep has the same shape as x with 1 = keep, 0 = replace by fill
template <class S>
TensorT<S> masked_fill(const TensorT<S> &x, const TensorT<S> &keep, double fill);
template <class S> TensorT<S> mean_axis(const TensorT<S> &x, int axis);
template <class S> TensorT<S> sum_all(const TensorT<S> &x);
// x [B x T x d] -> [B x d], mean over the first lens[b] frames only
template <class S>
TensorT<S> masked_mean_time(const TensorT<S> &x, const std::vector<int> &lens);
// logits [N x V], targets[i] in [0, V) or -1 to ignore; token-mean CE
template <class S>
TensorT<S> cross_entropy(const TensorT<S> &logits, const std::vector<int> &targets);

} // namespace koel
