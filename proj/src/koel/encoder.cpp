#include "koel/encoder.hpp"

#include <cmath>

namespace koel {

namespace {

int conv_len(int t) {
    check(t >= 3, "subsampling: length ", t, " shorter than the kernel");
    return (t - 3) / 2 + 1;
}

}  // namespace

int subsampled_len(int t) {
    check(t >= 7, "subsampling needs at least 7 frames, got ", t);
    return conv_len(conv_len(t));
}

int subsampled_freq(int n_mels) { return conv_len(conv_len(n_mels)); }

template <class S>
ConformerEncoder<S>::ConformerEncoder(const EncoderConfig &cfg, Rng &rng)
    : cfg_(cfg), pos_(cfg.d_model) {
    check(cfg.d_model > 0 && cfg.n_heads > 0 && cfg.d_model % cfg.n_heads == 0,
          "encoder: d_model ", cfg.d_model, " not divisible by heads ", cfg.n_heads);
    check(cfg.n_layers >= 1, "encoder: need at least one layer");
    check(cfg.ctc_vocab >= 2, "encoder: ctc_vocab must be >= 2, got ", cfg.ctc_vocab);
    check(cfg.conv_kernel % 2 == 1, "encoder: conv kernel must be odd");
    const int d = cfg.d_model;

    sub_w1_ = xavier_uniform<S>({d, 1, 3, 3}, 9, d * 9, rng);
    sub_b1_ = TensorT<S>::zeros({d});
    sub_b1_.set_requires_grad(true);
    sub_w2_ = xavier_uniform<S>({d, d, 3, 3}, d * 9, d * 9, rng);
    sub_b2_ = TensorT<S>::zeros({d});
    sub_b2_.set_requires_grad(true);
    sub_proj_ = Linear<S>(d * subsampled_freq(cfg.n_mels), d, rng);

    blocks_.reserve(static_cast<size_t>(cfg.n_layers));
    for (int i = 0; i < cfg.n_layers; ++i) {
        Block blk;
        blk.ffn1 = FeedForward<S>(d, cfg.ffn_dim, cfg.dropout, rng);
        blk.attn_norm = LayerNormP<S>(d);
        blk.attn = MultiHeadAttention<S>(d, cfg.n_heads, cfg.dropout, rng);
        if (cfg.conformer) {
            blk.conv = ConvModule<S>(d, cfg.conv_kernel, cfg.dropout, rng);
            blk.ffn2 = FeedForward<S>(d, cfg.ffn_dim, cfg.dropout, rng);
            blk.block_norm = LayerNormP<S>(d);
        }
        blocks_.push_back(std::move(blk));
    }
    final_norm_ = LayerNormP<S>(d);
    ctc_head_ = Linear<S>(d, cfg.ctc_vocab, rng);
}

template <class S>
EncoderOutput<S> ConformerEncoder<S>::forward(const TensorT<S> &feats,
                                              const std::vector<int> &lens, bool training,
                                              Rng &rng) {
    check(feats.ndim() == 3 && feats.dim(2) == cfg_.n_mels, "encoder: expected (B, T, ",
          cfg_.n_mels, ") features");
    const int b = feats.dim(0), t = feats.dim(1);
    check(static_cast<int>(lens.size()) == b, "encoder: lens size mismatch");

    EncoderOutput<S> out;
    out.valid_lens.reserve(lens.size());
    for (const int len : lens) {
        check(len >= 7 && len <= t, "encoder: valid length ", len, " outside [7, ", t, "]");
        out.valid_lens.push_back(subsampled_len(len));
    }

    // zero padded frames, then subsample: conv(k3 s2), relu between, conv(k3 s2)
    TensorT<S> h = masked_fill(feats, frame_keep_mask<S>(b, t, cfg_.n_mels, lens), 0.0);
    h = reshape(h, {b, 1, t, cfg_.n_mels});
    h = relu(conv2d(h, sub_w1_, sub_b1_, 2));
    h = conv2d(h, sub_w2_, sub_b2_, 2);
    // (B, d, T', F') -> (B, T', d * F')
    const int tp = h.dim(2), fp = h.dim(3);
    h = reshape(permute(h, {0, 2, 1, 3}), {b, tp, cfg_.d_model * fp});
    h = sub_proj_.forward(h);
    h = dropout(pos_.forward(h), cfg_.dropout, rng, training);

    const TensorT<S> attn_keep =
        attention_keep_mask<S>(b, cfg_.n_heads, tp, tp, out.valid_lens, /*causal=*/false);

    for (Block &blk : blocks_) {
        if (cfg_.conformer) {
            h = add(h, scale(blk.ffn1.forward(h, training, rng), 0.5));
            const TensorT<S> qn = blk.attn_norm.forward(h);
            h = add(h, blk.attn.forward(qn, qn, attn_keep, training, rng));
            h = add(h, blk.conv.forward(h, out.valid_lens, training, rng));
            h = add(h, scale(blk.ffn2.forward(h, training, rng), 0.5));
            h = blk.block_norm.forward(h);
        } else {
            const TensorT<S> q = blk.attn_norm.forward(h);
            h = add(h, blk.attn.forward(q, q, attn_keep, training, rng));
            h = add(h, blk.ffn1.forward(h, training, rng));
        }
    }
    out.states = final_norm_.forward(h);
    out.ctc_logprobs = log_softmax(ctc_head_.forward(out.states));
    return out;
}

template <class S>
void ConformerEncoder<S>::collect(const std::string &prefix, ParamMap<S> &out) const {
    out.emplace_back(prefix + ".sub.w1", sub_w1_);
    out.emplace_back(prefix + ".sub.b1", sub_b1_);
    out.emplace_back(prefix + ".sub.w2", sub_w2_);
    out.emplace_back(prefix + ".sub.b2", sub_b2_);
    sub_proj_.collect(prefix + ".sub.proj", out);
    for (size_t i = 0; i < blocks_.size(); ++i) {
        const std::string bp = prefix + ".block" + std::to_string(i);
        const Block &blk = blocks_[i];
        blk.ffn1.collect(bp + ".ffn1", out);
        blk.attn_norm.collect(bp + ".attn_norm", out);
        blk.attn.collect(bp + ".attn", out);
        if (cfg_.conformer) {
            blk.conv.collect(bp + ".conv", out);
            blk.ffn2.collect(bp + ".ffn2", out);
            blk.block_norm.collect(bp + ".block_norm", out);
        }
    }
    final_norm_.collect(prefix + ".final_norm", out);
    ctc_head_.collect(prefix + ".ctc_head", out);
}

template <class S>
std::vector<BatchNormState *> ConformerEncoder<S>::batch_norm_states() {
    std::vector<BatchNormState *> out;
    if (cfg_.conformer) {
        for (Block &blk : blocks_) out.push_back(&blk.conv.bn_state);
    }
    return out;
}

template class ConformerEncoder<float>;
template class ConformerEncoder<double>;

}  // namespace koel
