#pragma once

// Building blocks shared by the encoder and decoders: linear, layer norm,
// multi-head attention, feed-forward, embedding, sinusoidal positions, and
// the conformer convolution module.  All blocks expose their parameters
// through collect(prefix, out) so the trainer and checkpointer see one flat
// named list.

#include <string>
#include <utility>
#include <vector>

#include "koel/common.hpp"
#include "koel/tensor.hpp"

namespace koel {

template <class S>
using ParamMap = std::vector<std::pair<std::string, TensorT<S>>>;

// Xavier-uniform weight: limit sqrt(6 / (fan_in + fan_out))
template <class S>
TensorT<S> xavier_uniform(Shape shape, int fan_in, int fan_out, Rng &rng);

template <class S>
struct Linear {
    TensorT<S> w;  // [in x out]
    TensorT<S> b;  // [out]

    Linear() = default;
    Linear(int in, int out, Rng &rng);
    // x (..., in) -> (..., out); accepts 2-D or 3-D input
    TensorT<S> forward(const TensorT<S> &x) const;
    void collect(const std::string &prefix, ParamMap<S> &out) const;
};

template <class S>
struct LayerNormP {
    TensorT<S> gamma;  // [d], ones
    TensorT<S> beta;   // [d], zeros

    LayerNormP() = default;
    explicit LayerNormP(int d);
    TensorT<S> forward(const TensorT<S> &x) const { return layer_norm(x, gamma, beta); }
    void collect(const std::string &prefix, ParamMap<S> &out) const;
};

// pre-norm feed-forward: LN -> linear -> swish -> dropout -> linear -> dropout
template <class S>
struct FeedForward {
    LayerNormP<S> norm;
    Linear<S> lin1, lin2;
    double dropout_p = 0.0;

    FeedForward() = default;
    FeedForward(int d, int hidden, double dropout, Rng &rng);
    TensorT<S> forward(const TensorT<S> &x, bool training, Rng &rng) const;
    void collect(const std::string &prefix, ParamMap<S> &out) const;
};

// 0/1 keep masks for attention scores, shape (b*heads, tq, tk).
// attention_keep_mask: key position j is kept when j < key_lens[b].
// When causal is set, additionally requires j <= i (query position).
template <class S>
TensorT<S> attention_keep_mask(int b, int heads, int tq, int tk,
                               const std::vector<int> &key_lens, bool causal);

// (b, t, c) keep mask that is 1 on frames t < lens[b]; used to zero padded
// frames before convolutions so padding cannot leak into valid positions
template <class S>
TensorT<S> frame_keep_mask(int b, int t, int c, const std::vector<int> &lens);

template <class S>
struct MultiHeadAttention {
    int d = 0;
    int heads = 0;
    int dh = 0;  // d / heads
    Linear<S> wq, wk, wv, wo;
    double dropout_p = 0.0;

    MultiHeadAttention() = default;
    MultiHeadAttention(int d, int heads, double dropout, Rng &rng);
    // q_in (B, Tq, d), kv_in (B, Tk, d); keep (B*heads, Tq, Tk) or undefined.
    // attn_out, when given, receives the post-softmax weights.
    TensorT<S> forward(const TensorT<S> &q_in, const TensorT<S> &kv_in, const TensorT<S> &keep,
                       bool training, Rng &rng, TensorT<S> *attn_out = nullptr) const;
    void collect(const std::string &prefix, ParamMap<S> &out) const;
};

template <class S>
struct Embedding {
    TensorT<S> table;  // [v x d]

    Embedding() = default;
    Embedding(int v, int d, Rng &rng);
    // ids flattened row-major (b rows of u) -> (b, u, d)
    TensorT<S> forward(const std::vector<int> &ids, int b, int u) const;
    void collect(const std::string &prefix, ParamMap<S> &out) const;
};

// adds sinusoidal position codes to sqrt(d)-scaled input
template <class S>
struct PositionalEncoding {
    int d = 0;

    PositionalEncoding() = default;
    explicit PositionalEncoding(int d_model) : d(d_model) {}
    TensorT<S> forward(const TensorT<S> &x) const;  // (B, T, d)
};

// conformer convolution module: LN -> pointwise (2d) -> GLU -> zero padded
// frames -> depthwise conv -> masked batch norm -> swish -> pointwise ->
// dropout.  Holds batch-norm running statistics, so forward is non-const.
template <class S>
struct ConvModule {
    LayerNormP<S> norm;
    TensorT<S> pw1_w, pw1_b;  // [d x 2d], [2d]
    TensorT<S> dw_w, dw_b;    // [d x k], [d]
    TensorT<S> bn_gamma, bn_beta;
    BatchNormState bn_state;
    TensorT<S> pw2_w, pw2_b;  // [d x d], [d]
    double dropout_p = 0.0;
    int kernel = 0;

    ConvModule() = default;
    ConvModule(int d, int kernel, double dropout, Rng &rng);
    TensorT<S> forward(const TensorT<S> &x, const std::vector<int> &lens, bool training,
                       Rng &rng);
    void collect(const std::string &prefix, ParamMap<S> &out) const;
};

}  // namespace koel
