#include "koel/layers.hpp"

#include <cmath>

namespace koel {

template <class S>
TensorT<S> xavier_uniform(Shape shape, int fan_in, int fan_out, Rng &rng) {
    check(fan_in > 0 && fan_out > 0, "xavier_uniform: bad fans ", fan_in, ", ", fan_out);
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    TensorT<S> t = TensorT<S>::uniform(std::move(shape), rng, -limit, limit);
    t.set_requires_grad(true);
    return t;
}

// ---------------------------------------------------------------------- Linear

template <class S>
Linear<S>::Linear(int in, int out, Rng &rng) {
    w = xavier_uniform<S>({in, out}, in, out, rng);
    b = TensorT<S>::zeros({out});
    b.set_requires_grad(true);
}

template <class S>
TensorT<S> Linear<S>::forward(const TensorT<S> &x) const {
    const int in = w.dim(0);
    const int out = w.dim(1);
    if (x.ndim() == 2) {
        return add_bias(matmul(x, w), b);
    }
    check(x.ndim() == 3, "Linear: expected 2-D or 3-D input");
    const int bb = x.dim(0), t = x.dim(1);
    check(x.dim(2) == in, "Linear: input feature dim ", x.dim(2), " != ", in);
    const TensorT<S> flat = reshape(x, {bb * t, in});
    return reshape(add_bias(matmul(flat, w), b), {bb, t, out});
}

template <class S>
void Linear<S>::collect(const std::string &prefix, ParamMap<S> &out) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
}

// ------------------------------------------------------------------ LayerNormP

template <class S>
LayerNormP<S>::LayerNormP(int d) {
    gamma = TensorT<S>::full({d}, S(1));
    gamma.set_requires_grad(true);
    beta = TensorT<S>::zeros({d});
    beta.set_requires_grad(true);
}

template <class S>
void LayerNormP<S>::collect(const std::string &prefix, ParamMap<S> &out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
}

// ----------------------------------------------------------------- FeedForward

template <class S>
FeedForward<S>::FeedForward(int d, int hidden, double dropout, Rng &rng)
    : norm(d), lin1(d, hidden, rng), lin2(hidden, d, rng), dropout_p(dropout) {}

template <class S>
TensorT<S> FeedForward<S>::forward(const TensorT<S> &x, bool training, Rng &rng) const {
    TensorT<S> h = norm.forward(x);
    h = swish(lin1.forward(h));
    h = dropout(h, dropout_p, rng, training);
    h = lin2.forward(h);
    return dropout(h, dropout_p, rng, training);
}

template <class S>
void FeedForward<S>::collect(const std::string &prefix, ParamMap<S> &out) const {
    norm.collect(prefix + ".norm", out);
    lin1.collect(prefix + ".lin1", out);
    lin2.collect(prefix + ".lin2", out);
}

// ----------------------------------------------------------------------- masks

template <class S>
TensorT<S> attention_keep_mask(int b, int heads, int tq, int tk,
                               const std::vector<int> &key_lens, bool causal) {
    check(static_cast<int>(key_lens.size()) == b, "attention_keep_mask: lens size ",
          key_lens.size(), " != batch ", b);
    std::vector<S> data(static_cast<size_t>(b) * heads * tq * tk, S(0));
    for (int bi = 0; bi < b; ++bi) {
        const int valid = key_lens[static_cast<size_t>(bi)];
        check(valid >= 0 && valid <= tk, "attention_keep_mask: len ", valid, " outside [0, ",
              tk, "]");
        for (int h = 0; h < heads; ++h) {
            const size_t base = (static_cast<size_t>(bi) * heads + h) * tq * tk;
            for (int i = 0; i < tq; ++i) {
                const int jmax = causal ? std::min(valid, i + 1) : valid;
                for (int j = 0; j < jmax; ++j) {
                    data[base + static_cast<size_t>(i) * tk + j] = S(1);
                }
            }
        }
    }
    return TensorT<S>::from({b * heads, tq, tk}, std::move(data));
}

template <class S>
TensorT<S> frame_keep_mask(int b, int t, int c, const std::vector<int> &lens) {
    check(static_cast<int>(lens.size()) == b, "frame_keep_mask: lens size ", lens.size(),
          " != batch ", b);
    std::vector<S> data(static_cast<size_t>(b) * t * c, S(0));
    for (int bi = 0; bi < b; ++bi) {
        const int valid = lens[static_cast<size_t>(bi)];
        check(valid >= 0 && valid <= t, "frame_keep_mask: len ", valid, " outside [0, ", t, "]");
        std::fill_n(data.begin() + static_cast<size_t>(bi) * t * c, static_cast<size_t>(valid) * c,
                    S(1));
    }
    return TensorT<S>::from({b, t, c}, std::move(data));
}

// ---------------------------------------------------------- MultiHeadAttention

template <class S>
MultiHeadAttention<S>::MultiHeadAttention(int d_model, int n_heads, double dropout, Rng &rng)
    : d(d_model), heads(n_heads), dh(d_model / n_heads), wq(d_model, d_model, rng),
      wk(d_model, d_model, rng), wv(d_model, d_model, rng), wo(d_model, d_model, rng),
      dropout_p(dropout) {
    check(d % heads == 0, "MultiHeadAttention: d ", d, " not divisible by heads ", heads);
}

template <class S>
TensorT<S> MultiHeadAttention<S>::forward(const TensorT<S> &q_in, const TensorT<S> &kv_in,
                                          const TensorT<S> &keep, bool training, Rng &rng,
                                          TensorT<S> *attn_out) const {
    const int b = q_in.dim(0), tq = q_in.dim(1);
    const int tk = kv_in.dim(1);
    check(q_in.dim(2) == d && kv_in.dim(2) == d, "MultiHeadAttention: feature dim mismatch");
    check(kv_in.dim(0) == b, "MultiHeadAttention: batch mismatch");

    // (B, T, d) -> (B*heads, T, dh)
    const auto split_heads = [&](const TensorT<S> &x, int t) {
        return reshape(permute(reshape(x, {b, t, heads, dh}), {0, 2, 1, 3}),
                       {b * heads, t, dh});
    };
    const TensorT<S> q = split_heads(wq.forward(q_in), tq);
    const TensorT<S> k = split_heads(wk.forward(kv_in), tk);
    const TensorT<S> v = split_heads(wv.forward(kv_in), tk);

    TensorT<S> scores = scale(bmm(q, transpose(k, 1, 2)), 1.0 / std::sqrt(double(dh)));
    if (keep.defined()) {
        check(keep.dim(0) == b * heads && keep.dim(1) == tq && keep.dim(2) == tk,
              "MultiHeadAttention: keep mask shape mismatch");
        scores = masked_fill(scores, keep, -1e9);
    }
    TensorT<S> attn = softmax(scores);
    if (attn_out != nullptr) *attn_out = attn;
    attn = dropout(attn, dropout_p, rng, training);

    const TensorT<S> ctx = bmm(attn, v);  // (B*heads, Tq, dh)
    const TensorT<S> merged =
        reshape(permute(reshape(ctx, {b, heads, tq, dh}), {0, 2, 1, 3}), {b, tq, d});
    return wo.forward(merged);
}

template <class S>
void MultiHeadAttention<S>::collect(const std::string &prefix, ParamMap<S> &out) const {
    wq.collect(prefix + ".wq", out);
    wk.collect(prefix + ".wk", out);
    wv.collect(prefix + ".wv", out);
    wo.collect(prefix + ".wo", out);
}

// ------------------------------------------------------------------- Embedding

template <class S>
Embedding<S>::Embedding(int v, int d, Rng &rng) {
    table = TensorT<S>::randn({v, d}, rng, 1.0 / std::sqrt(double(d)));
    table.set_requires_grad(true);
}

template <class S>
TensorT<S> Embedding<S>::forward(const std::vector<int> &ids, int b, int u) const {
    check(static_cast<int>(ids.size()) == b * u, "Embedding: ids size ", ids.size(),
          " != ", b, "*", u);
    return reshape(embedding(table, ids), {b, u, table.dim(1)});
}

template <class S>
void Embedding<S>::collect(const std::string &prefix, ParamMap<S> &out) const {
    out.emplace_back(prefix + ".table", table);
}

// ---------------------------------------------------------- PositionalEncoding

template <class S>
TensorT<S> PositionalEncoding<S>::forward(const TensorT<S> &x) const {
    check(x.ndim() == 3 && x.dim(2) == d, "PositionalEncoding: expected (B, T, ", d, ")");
    const int b = x.dim(0), t = x.dim(1);
    std::vector<S> pe(static_cast<size_t>(b) * t * d);
    for (int ti = 0; ti < t; ++ti) {
        for (int i = 0; i < d; ++i) {
            const double angle =
                ti / std::pow(10000.0, 2.0 * (i / 2) / static_cast<double>(d));
            pe[static_cast<size_t>(ti) * d + i] =
                static_cast<S>((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
        }
    }
    // same table for every batch row
    for (int bi = 1; bi < b; ++bi) {
        std::copy_n(pe.begin(), static_cast<size_t>(t) * d,
                    pe.begin() + static_cast<size_t>(bi) * t * d);
    }
    const TensorT<S> codes = TensorT<S>::from({b, t, d}, std::move(pe));
    return add(scale(x, std::sqrt(double(d))), codes);
}

// ------------------------------------------------------------------ ConvModule

template <class S>
ConvModule<S>::ConvModule(int d, int k, double dropout, Rng &rng)
    : norm(d), dropout_p(dropout), kernel(k) {
    check(k % 2 == 1, "ConvModule: kernel must be odd, got ", k);
    pw1_w = xavier_uniform<S>({d, 2 * d}, d, 2 * d, rng);
    pw1_b = TensorT<S>::zeros({2 * d});
    pw1_b.set_requires_grad(true);
    dw_w = xavier_uniform<S>({d, k}, k, 1, rng);
    dw_b = TensorT<S>::zeros({d});
    dw_b.set_requires_grad(true);
    bn_gamma = TensorT<S>::full({d}, S(1));
    bn_gamma.set_requires_grad(true);
    bn_beta = TensorT<S>::zeros({d});
    bn_beta.set_requires_grad(true);
    bn_state.init(d);
    pw2_w = xavier_uniform<S>({d, d}, d, d, rng);
    pw2_b = TensorT<S>::zeros({d});
    pw2_b.set_requires_grad(true);
}

template <class S>
TensorT<S> ConvModule<S>::forward(const TensorT<S> &x, const std::vector<int> &lens,
                                  bool training, Rng &rng) {
    const int b = x.dim(0), t = x.dim(1), d = x.dim(2);
    TensorT<S> h = norm.forward(x);
    h = glu(pointwise_conv1d(h, pw1_w, pw1_b));  // (B, T, d)

    // zero padded frames so the depthwise kernel window sees the same values
    // it would for an exactly-sized batch (zero same-padding at the edge)
    h = masked_fill(h, frame_keep_mask<S>(b, t, d, lens), 0.0);
    h = depthwise_conv1d(h, dw_w, dw_b);

    // masked batch norm over valid frames only
    std::vector<uint8_t> row_mask(static_cast<size_t>(b) * t, 0);
    for (int bi = 0; bi < b; ++bi) {
        std::fill_n(row_mask.begin() + static_cast<size_t>(bi) * t,
                    static_cast<size_t>(lens[static_cast<size_t>(bi)]), uint8_t(1));
    }
    h = reshape(batch_norm(reshape(h, {b * t, d}), bn_gamma, bn_beta, bn_state, row_mask,
                           training),
                {b, t, d});
    h = swish(h);
    h = pointwise_conv1d(h, pw2_w, pw2_b);
    return dropout(h, dropout_p, rng, training);
}

template <class S>
void ConvModule<S>::collect(const std::string &prefix, ParamMap<S> &out) const {
    norm.collect(prefix + ".norm", out);
    out.emplace_back(prefix + ".pw1_w", pw1_w);
    out.emplace_back(prefix + ".pw1_b", pw1_b);
    out.emplace_back(prefix + ".dw_w", dw_w);
    out.emplace_back(prefix + ".dw_b", dw_b);
    out.emplace_back(prefix + ".bn_gamma", bn_gamma);
    out.emplace_back(prefix + ".bn_beta", bn_beta);
    out.emplace_back(prefix + ".pw2_w", pw2_w);
    out.emplace_back(prefix + ".pw2_b", pw2_b);
}

// ------------------------------------------------------------- instantiations

#define KOEL_INSTANTIATE_LAYERS(S)                                                               \
    template TensorT<S> xavier_uniform<S>(Shape, int, int, Rng &);                               \
    template struct Linear<S>;                                                                   \
    template struct LayerNormP<S>;                                                               \
    template struct FeedForward<S>;                                                              \
    template TensorT<S> attention_keep_mask<S>(int, int, int, int, const std::vector<int> &,     \
                                               bool);                                           \
    template TensorT<S> frame_keep_mask<S>(int, int, int, const std::vector<int> &);             \
    template struct MultiHeadAttention<S>;                                                       \
    template struct Embedding<S>;                                                                \
    template struct PositionalEncoding<S>;                                                       \
    template struct ConvModule<S>;

KOEL_INSTANTIATE_LAYERS(float)
KOEL_INSTANTIATE_LAYERS(double)

}  // namespace koel
