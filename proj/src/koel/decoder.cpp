#include "koel/decoder.hpp"

#include <algorithm>

namespace koel {

template <class S>
TransformerDecoder<S>::TransformerDecoder(const DecoderConfig &cfg, Rng &rng)
    : cfg_(cfg), embed_(cfg.vocab, cfg.d_model, rng), pos_(cfg.d_model) {
    check(cfg.vocab >= 2, "decoder: vocab must be >= 2");
    check(cfg.d_model % cfg.n_heads == 0, "decoder: d_model ", cfg.d_model,
          " not divisible by heads ", cfg.n_heads);
    check(cfg.n_layers >= 1, "decoder: need at least one layer");
    layers_.reserve(static_cast<size_t>(cfg.n_layers));
    for (int i = 0; i < cfg.n_layers; ++i) {
        Layer l;
        l.self_norm = LayerNormP<S>(cfg.d_model);
        l.self_attn = MultiHeadAttention<S>(cfg.d_model, cfg.n_heads, cfg.dropout, rng);
        l.cross_norm = LayerNormP<S>(cfg.d_model);
        l.cross_attn = MultiHeadAttention<S>(cfg.d_model, cfg.n_heads, cfg.dropout, rng);
        l.ffn = FeedForward<S>(cfg.d_model, cfg.ffn_dim, cfg.dropout, rng);
        layers_.push_back(std::move(l));
    }
    final_norm_ = LayerNormP<S>(cfg.d_model);
    out_proj_ = Linear<S>(cfg.d_model, cfg.vocab, rng);
}

template <class S>
TensorT<S> TransformerDecoder<S>::forward(const std::vector<int> &tokens, int b, int u,
                                          const TensorT<S> &enc_states,
                                          const std::vector<int> &enc_lens, bool training,
                                          Rng &rng) const {
    check(u >= 1, "decoder: empty token sequence");
    check(enc_states.ndim() == 3 && enc_states.dim(0) == b && enc_states.dim(2) == cfg_.d_model,
          "decoder: encoder states shape mismatch");
    const int tk = enc_states.dim(1);

    TensorT<S> h = dropout(pos_.forward(embed_.forward(tokens, b, u)), cfg_.dropout, rng,
                           training);

    const std::vector<int> all_valid(static_cast<size_t>(b), u);
    const TensorT<S> self_keep =
        attention_keep_mask<S>(b, cfg_.n_heads, u, u, all_valid, /*causal=*/true);
    const TensorT<S> cross_keep =
        attention_keep_mask<S>(b, cfg_.n_heads, u, tk, enc_lens, /*causal=*/false);

    for (const Layer &l : layers_) {
        const TensorT<S> sq = l.self_norm.forward(h);
        h = add(h, l.self_attn.forward(sq, sq, self_keep, training, rng));
        h = add(h, l.cross_attn.forward(l.cross_norm.forward(h), enc_states, cross_keep,
                                        training, rng));
        h = add(h, l.ffn.forward(h, training, rng));
    }
    return out_proj_.forward(final_norm_.forward(h));
}

template <class S>
std::vector<int> TransformerDecoder<S>::greedy_decode(const TensorT<S> &enc_states,
                                                      const std::vector<int> &enc_lens,
                                                      int sos_eos_id, int max_len) const {
    check(enc_states.ndim() == 3 && enc_states.dim(0) == 1,
          "greedy_decode: expected a single-utterance batch");
    Rng rng(0);  // inference: dropout disabled, rng never draws
    std::vector<int> seq = {sos_eos_id};
    for (int step = 0; step < max_len; ++step) {
        const int u = static_cast<int>(seq.size());
        const TensorT<S> logits =
            forward(seq, 1, u, enc_states, enc_lens, /*training=*/false, rng);
        const int v = logits.dim(2);
        int best = 0;
        for (int k = 1; k < v; ++k) {
            if (logits.at({0, u - 1, k}) > logits.at({0, u - 1, best})) best = k;
        }
        if (best == sos_eos_id) break;
        seq.push_back(best);
    }
    return std::vector<int>(seq.begin() + 1, seq.end());
}

template <class S>
void TransformerDecoder<S>::collect(const std::string &prefix, ParamMap<S> &out) const {
    embed_.collect(prefix + ".embed", out);
    for (size_t i = 0; i < layers_.size(); ++i) {
        const std::string lp = prefix + ".layer" + std::to_string(i);
        const Layer &l = layers_[i];
        l.self_norm.collect(lp + ".self_norm", out);
        l.self_attn.collect(lp + ".self_attn", out);
        l.cross_norm.collect(lp + ".cross_norm", out);
        l.cross_attn.collect(lp + ".cross_attn", out);
        l.ffn.collect(lp + ".ffn", out);
    }
    final_norm_.collect(prefix + ".final_norm", out);
    out_proj_.collect(prefix + ".out_proj", out);
}

template class TransformerDecoder<float>;
template class TransformerDecoder<double>;

}  // namespace koel
