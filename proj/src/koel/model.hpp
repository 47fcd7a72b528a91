#pragma once

// The full dual-decoder model: conformer encoder with CTC head, grapheme and
// phoneme transformer decoders, and the language-identification head, plus
// the multi-task loss assembly and single-utterance decoding.

#include <string>
#include <vector>

#include "koel/beam.hpp"
#include "koel/decoder.hpp"
#include "koel/encoder.hpp"
#include "koel/lid.hpp"
#include "koel/losses.hpp"
#include "koel/ngram.hpp"
#include "koel/vocab.hpp"

namespace koel {

struct ModelConfig {
    EncoderConfig encoder;   // encoder.ctc_vocab must equal grapheme_vocab
    int grp_layers = 2;
    int phn_layers = 1;
    int grapheme_vocab = 0;
    int phoneme_vocab = 0;
    LossWeights weights;

    void validate() const;
};

// per-batch training inputs; token sequences are unpadded (the model pads)
template <class S>
struct Batch {
    TensorT<S> feats;                           // (B, T, n_mels)
    std::vector<int> feat_lens;                 // valid frames per row
    std::vector<std::vector<int>> ctc_targets;  // language label + graphemes
    std::vector<std::vector<int>> grp_in;       // sos + ctc_targets
    std::vector<std::vector<int>> grp_out;      // ctc_targets + eos
    std::vector<std::vector<int>> phn_in;       // sos + phonemes
    std::vector<std::vector<int>> phn_out;      // phonemes + eos
    std::vector<int> language;                  // LID class index per row
};

struct DecodeResult {
    std::vector<Hypothesis> nbest;   // beam-search hypotheses, best first
    std::vector<int> greedy_labels;  // collapsed CTC argmax path
    std::string greedy_text;
    int lid_class = -1;
};

template <class S>
class Model {
  public:
    Model(const ModelConfig &cfg, Rng &rng);

    // forward + multi-task loss; fills `out` (never null) with the breakdown
    TensorT<S> compute_loss(const Batch<S> &batch, bool training, Rng &rng,
                            LossBreakdown *out);

    // feats (1, T, n_mels) for a single utterance
    DecodeResult decode_utterance(const TensorT<S> &feats, int len, const NGramLM *lm,
                                  const Vocabulary *graphemes, const BeamConfig &beam_cfg);

    // LID argmax per batch row
    std::vector<int> predict_language(const TensorT<S> &feats, const std::vector<int> &lens);

    ParamMap<S> params();
    const ModelConfig &config() const { return cfg_; }
    ConformerEncoder<S> &encoder() { return encoder_; }
    TransformerDecoder<S> &grapheme_decoder() { return grp_dec_; }
    TransformerDecoder<S> &phoneme_decoder() { return phn_dec_; }
    LidHead<S> &lid_head() { return lid_; }
    std::vector<BatchNormState *> batch_norm_states() { return encoder_.batch_norm_states(); }

  private:
    ModelConfig cfg_;
    ConformerEncoder<S> encoder_;
    TransformerDecoder<S> grp_dec_;
    TransformerDecoder<S> phn_dec_;
    LidHead<S> lid_;
};

}  // namespace koel
