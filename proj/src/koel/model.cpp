#include "koel/model.hpp"

#include <algorithm>

namespace koel {

void ModelConfig::validate() const {
    check(grapheme_vocab >= 2 && phoneme_vocab >= 2, "model: vocab sizes not set");
    check(encoder.ctc_vocab == grapheme_vocab, "model: CTC head size ", encoder.ctc_vocab,
          " != grapheme vocab ", grapheme_vocab);
    check(grp_layers >= 1 && phn_layers >= 1, "model: decoder depths must be >= 1");
    weights.validate();
}

namespace {

DecoderConfig decoder_config(const ModelConfig &cfg, int vocab, int layers) {
    DecoderConfig d;
    d.vocab = vocab;
    d.d_model = cfg.encoder.d_model;
    d.n_heads = cfg.encoder.n_heads;
    d.ffn_dim = cfg.encoder.ffn_dim;
    d.n_layers = layers;
    d.dropout = cfg.encoder.dropout;
    return d;
}

LidConfig lid_config(const ModelConfig &cfg) {
    LidConfig l;
    l.d_model = cfg.encoder.d_model;
    return l;
}

// pad rows to the common length: inputs with `fill`, or -1 for CE targets
std::vector<int> pad_rows(const std::vector<std::vector<int>> &rows, int u, int fill) {
    std::vector<int> flat(rows.size() * static_cast<size_t>(u), fill);
    for (size_t r = 0; r < rows.size(); ++r) {
        std::copy(rows[r].begin(), rows[r].end(), flat.begin() + r * static_cast<size_t>(u));
    }
    return flat;
}

int max_len(const std::vector<std::vector<int>> &rows) {
    size_t m = 1;
    for (const auto &r : rows) m = std::max(m, r.size());
    return static_cast<int>(m);
}

}  // namespace

template <class S>
Model<S>::Model(const ModelConfig &cfg, Rng &rng)
    : cfg_((cfg.validate(), cfg)), encoder_(cfg.encoder, rng),
      grp_dec_(decoder_config(cfg, cfg.grapheme_vocab, cfg.grp_layers), rng),
      phn_dec_(decoder_config(cfg, cfg.phoneme_vocab, cfg.phn_layers), rng),
      lid_(lid_config(cfg), rng) {}

template <class S>
TensorT<S> Model<S>::compute_loss(const Batch<S> &batch, bool training, Rng &rng,
                                  LossBreakdown *out) {
    check(out != nullptr, "compute_loss: breakdown output is required");
    const int b = batch.feats.dim(0);
    check(static_cast<int>(batch.ctc_targets.size()) == b &&
              static_cast<int>(batch.grp_in.size()) == b &&
              static_cast<int>(batch.grp_out.size()) == b &&
              static_cast<int>(batch.phn_in.size()) == b &&
              static_cast<int>(batch.phn_out.size()) == b &&
              static_cast<int>(batch.language.size()) == b,
          "compute_loss: batch field sizes disagree");

    EncoderOutput<S> enc = encoder_.forward(batch.feats, batch.feat_lens, training, rng);

    const TensorT<S> l_ctc = ctc_loss(enc.ctc_logprobs, batch.ctc_targets, enc.valid_lens);

    const int ug = max_len(batch.grp_in);
    const TensorT<S> grp_logits =
        grp_dec_.forward(pad_rows(batch.grp_in, ug, /*fill=*/0), b, ug, enc.states,
                         enc.valid_lens, training, rng);
    const TensorT<S> l_gr = ce_label_loss(grp_logits, batch.grp_out);

    const int up = max_len(batch.phn_in);
    const TensorT<S> phn_logits =
        phn_dec_.forward(pad_rows(batch.phn_in, up, /*fill=*/0), b, up, enc.states,
                         enc.valid_lens, training, rng);
    const TensorT<S> l_pr = ce_label_loss(phn_logits, batch.phn_out);

    const TensorT<S> lid_logits = lid_.forward(enc.states, enc.valid_lens);
    const TensorT<S> l_lid = cross_entropy(lid_logits, batch.language);

    return multitask_total(l_ctc, l_pr, l_gr, l_lid, cfg_.weights, out);
}

template <class S>
DecodeResult Model<S>::decode_utterance(const TensorT<S> &feats, int len, const NGramLM *lm,
                                        const Vocabulary *graphemes,
                                        const BeamConfig &beam_cfg) {
    check(feats.ndim() == 3 && feats.dim(0) == 1, "decode_utterance: expected (1, T, n_mels)");
    Rng rng(0);  // eval mode: dropout never draws
    EncoderOutput<S> enc =
        encoder_.forward(feats, std::vector<int>{len}, /*training=*/false, rng);

    const int tp = enc.valid_lens[0];
    const int v = enc.ctc_logprobs.dim(2);
    std::vector<double> grid(static_cast<size_t>(tp) * v);
    for (int t = 0; t < tp; ++t) {
        for (int k = 0; k < v; ++k) {
            grid[static_cast<size_t>(t) * v + k] =
                static_cast<double>(enc.ctc_logprobs.at({0, t, k}));
        }
    }

    DecodeResult res;
    res.nbest = ctc_beam_search(grid, tp, v, lm, graphemes, beam_cfg);
    res.greedy_labels = collapse_ctc(ctc_greedy_path(grid, tp, v));
    if (graphemes != nullptr) {
        res.greedy_text = decode_labels(res.greedy_labels, *graphemes).text;
    }

    const TensorT<S> lid_logits = lid_.forward(enc.states, enc.valid_lens);
    int best = 0;
    for (int k = 1; k < lid_logits.dim(1); ++k) {
        if (lid_logits.at({0, k}) > lid_logits.at({0, best})) best = k;
    }
    res.lid_class = best;
    return res;
}

template <class S>
std::vector<int> Model<S>::predict_language(const TensorT<S> &feats,
                                            const std::vector<int> &lens) {
    Rng rng(0);
    EncoderOutput<S> enc = encoder_.forward(feats, lens, /*training=*/false, rng);
    const TensorT<S> logits = lid_.forward(enc.states, enc.valid_lens);
    std::vector<int> out(static_cast<size_t>(logits.dim(0)));
    for (int bi = 0; bi < logits.dim(0); ++bi) {
        int best = 0;
        for (int k = 1; k < logits.dim(1); ++k) {
            if (logits.at({bi, k}) > logits.at({bi, best})) best = k;
        }
        out[static_cast<size_t>(bi)] = best;
    }
    return out;
}

template <class S>
ParamMap<S> Model<S>::params() {
    ParamMap<S> out;
    encoder_.collect("enc", out);
    grp_dec_.collect("grp", out);
    phn_dec_.collect("phn", out);
    lid_.collect("lid", out);
    return out;
}

template class Model<float>;
template class Model<double>;

}  // namespace koel
