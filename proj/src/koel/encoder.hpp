#pragma once

// Conformer encoder with x4 convolutional subsampling and a CTC head.
// A config toggle swaps the conformer blocks for plain pre-norm transformer
// blocks (no convolution module, single feed-forward) for ablations.

#include <string>
#include <vector>

#include "koel/layers.hpp"

namespace koel {

struct EncoderConfig {
    int n_mels = 40;
    int d_model = 64;
    int n_heads = 4;
    int ffn_dim = 256;
    int n_layers = 2;
    int conv_kernel = 15;
    double dropout = 0.1;
    bool conformer = true;  // false: plain transformer blocks
    int ctc_vocab = 0;      // output size of the CTC head (>= 2)
};

// two stacked k=3 stride-2 valid convolutions: floor((t - 3) / 2) + 1, twice.
// Inputs shorter than 7 frames cannot be subsampled -> error.
int subsampled_len(int t);
// the same arithmetic on the frequency axis (40 -> 19 -> 9)
int subsampled_freq(int n_mels);

template <class S>
struct EncoderOutput {
    TensorT<S> states;            // (B, T', d) final encoder states
    std::vector<int> valid_lens;  // per-row valid frames after subsampling
    TensorT<S> ctc_logprobs;      // (B, T', V) log-softmax over the CTC vocab
};

template <class S>
class ConformerEncoder {
  public:
    ConformerEncoder(const EncoderConfig &cfg, Rng &rng);

    // feats (B, T, n_mels); lens = valid frames per row (0 < len <= T).
    // Padded frames are zeroed internally, so their contents never matter.
    EncoderOutput<S> forward(const TensorT<S> &feats, const std::vector<int> &lens,
                             bool training, Rng &rng);

    void collect(const std::string &prefix, ParamMap<S> &out) const;
    const EncoderConfig &config() const { return cfg_; }
    // batch-norm running statistics (conformer mode), for checkpointing
    std::vector<BatchNormState *> batch_norm_states();

  private:
    struct Block {
        FeedForward<S> ffn1;  // the only FFN in transformer mode
        LayerNormP<S> attn_norm;
        MultiHeadAttention<S> attn;
        ConvModule<S> conv;        // conformer only
        FeedForward<S> ffn2;       // conformer only
        LayerNormP<S> block_norm;  // conformer only
    };

    EncoderConfig cfg_;
    TensorT<S> sub_w1_, sub_b1_;  // (d, 1, 3, 3)
    TensorT<S> sub_w2_, sub_b2_;  // (d, d, 3, 3)
    Linear<S> sub_proj_;          // d * subsampled_freq -> d
    PositionalEncoding<S> pos_;
    std::vector<Block> blocks_;
    LayerNormP<S> final_norm_;
    Linear<S> ctc_head_;
};

}  // namespace koel
