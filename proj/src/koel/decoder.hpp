#pragma once

// Autoregressive transformer decoder (pre-norm) with encoder cross-attention.
// Used for both the grapheme decoder (GRP-DEC) and the phoneme decoder
// (PHN-DEC); they differ only in vocabulary and depth.

#include <string>
#include <vector>

#include "koel/layers.hpp"

namespace koel {

struct DecoderConfig {
    int vocab = 0;
    int d_model = 64;
    int n_heads = 4;
    int ffn_dim = 256;
    int n_layers = 2;
    double dropout = 0.1;
};

template <class S>
class TransformerDecoder {
  public:
    TransformerDecoder() = default;
    TransformerDecoder(const DecoderConfig &cfg, Rng &rng);

    // tokens: row-major (b rows of u) input ids (sos-prefixed targets, padded
    // at the tail; pad contents are irrelevant thanks to the causal mask as
    // long as losses ignore those positions). Returns logits (b, u, vocab).
    TensorT<S> forward(const std::vector<int> &tokens, int b, int u,
                       const TensorT<S> &enc_states, const std::vector<int> &enc_lens,
                       bool training, Rng &rng) const;

    // single-utterance argmax decode; stops at sos_eos or max_len.
    // Returns the generated ids without the sos/eos markers.
    std::vector<int> greedy_decode(const TensorT<S> &enc_states,
                                   const std::vector<int> &enc_lens, int sos_eos_id,
                                   int max_len) const;

    void collect(const std::string &prefix, ParamMap<S> &out) const;
    const DecoderConfig &config() const { return cfg_; }

  private:
    struct Layer {
        LayerNormP<S> self_norm;
        MultiHeadAttention<S> self_attn;
        LayerNormP<S> cross_norm;
        MultiHeadAttention<S> cross_attn;
        FeedForward<S> ffn;
    };

    DecoderConfig cfg_;
    Embedding<S> embed_;
    PositionalEncoding<S> pos_;
    std::vector<Layer> layers_;
    LayerNormP<S> final_norm_;
    Linear<S> out_proj_;
};

}  // namespace koel
