#include "koel/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "koel/common.hpp"
#include "koel/losses.hpp"

namespace koel {

void TrainConfig::validate() const {
    model.validate();
    check(lr > 0, "train: lr must be positive");
    check(adam_beta1 > 0 && adam_beta1 < 1 && adam_beta2 > 0 && adam_beta2 < 1,
          "train: Adam betas must lie in (0, 1)");
    check(adam_eps > 0, "train: Adam eps must be positive");
    check(plateau_factor > 0 && plateau_factor < 1, "train: plateau factor must be in (0, 1)");
    check(plateau_patience >= 0, "train: plateau patience must be >= 0");
    check(epochs >= 0, "train: epochs must be >= 0");
    check(batch_size >= 1, "train: batch size must be >= 1");
    if (augment) {
        check(!speed_factors.empty(), "train: augment enabled with no speed factors");
        for (double f : speed_factors) check(f > 0, "train: speed factor must be positive");
    }
}

PreparedUtterance prepare_utterance(const UtteranceMeta &meta, const Vocabulary &graphemes,
                                    const Vocabulary &phonemes, bool keep_wave) {
    PreparedUtterance out;
    out.meta = meta;
    Waveform w = read_wav(meta.audio_path);
    check(w.sample_rate == meta.sample_rate, "utterance ", meta.utt_id, ": manifest says ",
          meta.sample_rate, " Hz but the file is ", w.sample_rate, " Hz");
    Waveform w16 = resample(w, FbankConfig{}.sample_rate);
    out.feats = compute_fbank(w16);
    out.feats.utt_id = meta.utt_id;
    out.feats.language = meta.language;
    out.targets = encode_target(meta.transcript, meta.phonemes, meta.language, graphemes,
                                phonemes);
    if (keep_wave) out.wave = std::move(w16);
    return out;
}

namespace {

// frames the fbank would produce for n samples at the ingestion rate
int frames_for_samples(int64_t n) {
    const FbankConfig cfg;
    const int win = static_cast<int>(std::lround(cfg.win_ms * cfg.sample_rate / 1000.0));
    const int hop = static_cast<int>(std::lround(cfg.hop_ms * cfg.sample_rate / 1000.0));
    if (n < win) return 0;
    return frame_count(n, win, hop);
}

void check_capacity(const PreparedUtterance &item, int frames, const char *what) {
    check(frames >= 7, "utterance ", item.meta.utt_id, ": only ", frames, " frames ", what,
          "; subsampling needs 7");
    const int need = ctc_min_frames(item.targets.ctc_labels);
    const int have = subsampled_len(frames);
    check(have >= need, "utterance ", item.meta.utt_id, ": CTC target needs ", need,
          " subsampled frames but audio provides ", have, " ", what);
}

std::vector<std::vector<int>> batch_indices(const std::vector<PreparedUtterance> &items,
                                            int batch_size) {
    std::vector<int> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        const auto &ia = items[static_cast<size_t>(a)], &ib = items[static_cast<size_t>(b)];
        if (ia.feats.valid_len != ib.feats.valid_len)
            return ia.feats.valid_len < ib.feats.valid_len;
        return ia.meta.utt_id < ib.meta.utt_id;
    });
    std::vector<std::vector<int>> batches;
    for (size_t i = 0; i < order.size(); i += static_cast<size_t>(batch_size)) {
        size_t end = std::min(order.size(), i + static_cast<size_t>(batch_size));
        batches.emplace_back(order.begin() + static_cast<long>(i),
                             order.begin() + static_cast<long>(end));
    }
    return batches;
}

}  // namespace

template <class S>
Trainer<S>::Trainer(const TrainConfig &cfg, const Vocabulary &graphemes,
                    const Vocabulary &phonemes)
    : cfg_((cfg.validate(), cfg)), graphemes_(&graphemes), phonemes_(&phonemes), rng_(0) {
    check(cfg_.model.grapheme_vocab == graphemes.size(), "train: config grapheme vocab ",
          cfg_.model.grapheme_vocab, " != built vocabulary ", graphemes.size());
    check(cfg_.model.phoneme_vocab == phonemes.size(), "train: config phoneme vocab ",
          cfg_.model.phoneme_vocab, " != built vocabulary ", phonemes.size());
    Rng boot(cfg_.seed);
    model_ = std::make_unique<Model<S>>(cfg_.model, boot);
    rng_ = boot.fork();
    params_ = model_->params();
    state_.lr = cfg_.lr;
    state_.best_dev = std::numeric_limits<double>::infinity();
    state_.adam_m.resize(params_.size());
    state_.adam_v.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        const size_t n = params_[i].second.data().size();
        state_.adam_m[i].assign(n, 0.0);
        state_.adam_v[i].assign(n, 0.0);
    }
}

template <class S>
void Trainer<S>::set_data(const std::vector<UtteranceMeta> &train_rows,
                          const std::vector<UtteranceMeta> &dev_rows) {
    check(!train_rows.empty(), "train: empty training manifest");
    const double max_factor =
        cfg_.augment ? *std::max_element(cfg_.speed_factors.begin(), cfg_.speed_factors.end())
                     : 1.0;

    train_items_.clear();
    for (const UtteranceMeta &row : train_rows) {
        PreparedUtterance item = prepare_utterance(row, *graphemes_, *phonemes_, cfg_.augment);
        check_capacity(item, item.feats.valid_len, "at base speed");
        if (cfg_.augment && max_factor > 1.0) {
            const int64_t fastest =
                std::llround(static_cast<double>(item.wave.samples.size()) / max_factor);
            check_capacity(item, frames_for_samples(fastest), "at the fastest speed factor");
        }
        train_items_.push_back(std::move(item));
    }
    dev_items_.clear();
    for (const UtteranceMeta &row : dev_rows) {
        PreparedUtterance item = prepare_utterance(row, *graphemes_, *phonemes_, false);
        check_capacity(item, item.feats.valid_len, "at base speed");
        dev_items_.push_back(std::move(item));
    }

    std::vector<const FeatureSequence *> train_feats;
    train_feats.reserve(train_items_.size());
    for (const PreparedUtterance &item : train_items_) train_feats.push_back(&item.feats);
    cmvn_ = compute_cmvn(train_feats);

    train_batches_ = batch_indices(train_items_, cfg_.batch_size);
    dev_batches_ = batch_indices(dev_items_, cfg_.batch_size);
    order_.clear();
    cursor_ = 0;
}

template <class S>
void Trainer<S>::restore(const Checkpoint &ck) {
    load_into(*model_, ck);
    if (!ck.cmvn.mean.empty()) cmvn_ = ck.cmvn;
    if (ck.has_trainer) {
        check(ck.trainer.adam_m.size() == params_.size(),
              "train: checkpoint Adam state does not match this model");
        state_ = ck.trainer;
        rng_.load_state(state_.rng_state);
    }
    order_.clear();
    cursor_ = 0;
}

template <class S>
Checkpoint Trainer<S>::make_checkpoint() {
    state_.rng_state = rng_.save_state();
    return snapshot(*model_, cmvn_, &state_);
}

template <class S>
void Trainer<S>::refresh_order() {
    order_.resize(train_batches_.size());
    std::iota(order_.begin(), order_.end(), 0);
    // Fisher-Yates with the training rng: batch order is part of the seeded state
    for (size_t i = order_.size(); i > 1; --i)
        std::swap(order_[i - 1], order_[static_cast<size_t>(rng_.uniform_int(static_cast<int>(i)))]);
    cursor_ = 0;
}

template <class S>
Batch<S> Trainer<S>::make_batch(const std::vector<int> &idx, bool training) {
    const bool augment = training && cfg_.augment;
    std::vector<FeatureSequence> feats;
    feats.reserve(idx.size());
    int t_max = 0;
    for (int i : idx) {
        const PreparedUtterance &item =
            training ? train_items_[static_cast<size_t>(i)] : dev_items_[static_cast<size_t>(i)];
        FeatureSequence f = item.feats;
        if (augment) {
            const double factor = cfg_.speed_factors[static_cast<size_t>(
                rng_.uniform_int(static_cast<int>(cfg_.speed_factors.size())))];
            if (factor != 1.0) f = compute_fbank(speed_perturb(item.wave, factor));
        }
        apply_cmvn(f, cmvn_);
        if (augment) f = spec_augment(f, cfg_.augment_policy, rng_);
        t_max = std::max(t_max, f.valid_len);
        feats.push_back(std::move(f));
    }

    Batch<S> batch;
    const int b = static_cast<int>(idx.size());
    const int n_mels = cfg_.model.encoder.n_mels;
    std::vector<S> grid(static_cast<size_t>(b) * t_max * n_mels, S(0));
    for (int bi = 0; bi < b; ++bi) {
        const FeatureSequence &f = feats[static_cast<size_t>(bi)];
        for (int t = 0; t < f.valid_len; ++t)
            for (int m = 0; m < n_mels; ++m)
                grid[static_cast<size_t>((bi * t_max + t) * n_mels + m)] =
                    static_cast<S>(f.at(t, m));
        batch.feat_lens.push_back(f.valid_len);
    }
    batch.feats = TensorT<S>::from({b, t_max, n_mels}, grid);
    for (int i : idx) {
        const TargetEncoding &e = training ? train_items_[static_cast<size_t>(i)].targets
                                           : dev_items_[static_cast<size_t>(i)].targets;
        batch.ctc_targets.push_back(e.ctc_labels);
        batch.grp_in.push_back(e.attn_in);
        batch.grp_out.push_back(e.attn_out);
        batch.phn_in.push_back(e.phn_in);
        batch.phn_out.push_back(e.phn_out);
        batch.language.push_back(e.language_idx);
    }
    return batch;
}

template <class S>
StepRecord Trainer<S>::step_batch(const std::vector<int> &idx) {
    Batch<S> batch = make_batch(idx, true);
    for (auto &[name, p] : params_) p.zero_grad();

    StepRecord rec;
    TensorT<S> loss = model_->compute_loss(batch, true, rng_, &rec.losses);
    if (!std::isfinite(rec.losses.total)) {
        std::ostringstream ids;
        for (int i : idx) ids << ' ' << train_items_[static_cast<size_t>(i)].meta.utt_id;
        fail("train: non-finite loss at step ", state_.step + 1, " on batch of:", ids.str());
    }
    loss.backward();
    apply_grads();
    state_.step += 1;
    rec.step = state_.step;
    rec.lr = state_.lr;
    return rec;
}

template <class S>
void Trainer<S>::apply_grads() {
    double norm_sq = 0.0;
    for (auto &[name, p] : params_)
        for (const S g : p.grad()) norm_sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(norm_sq);
    const double scale = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm)
                             ? cfg_.clip_norm / norm
                             : 1.0;

    state_.adam_t += 1;
    const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(state_.adam_t));
    const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(state_.adam_t));
    for (size_t i = 0; i < params_.size(); ++i) {
        auto &data = params_[i].second.leaf_data();
        const auto &grad = params_[i].second.grad();
        auto &m = state_.adam_m[i];
        auto &v = state_.adam_v[i];
        for (size_t k = 0; k < data.size(); ++k) {
            const double g = static_cast<double>(grad[k]) * scale;
            m[k] = cfg_.adam_beta1 * m[k] + (1.0 - cfg_.adam_beta1) * g;
            v[k] = cfg_.adam_beta2 * v[k] + (1.0 - cfg_.adam_beta2) * g * g;
            const double update =
                state_.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.adam_eps);
            data[k] = static_cast<S>(static_cast<double>(data[k]) - update);
        }
    }
}

template <class S>
std::vector<StepRecord> Trainer<S>::train_steps(int n, std::ostream *metrics) {
    check(!train_batches_.empty(), "train: set_data must run before training");
    std::vector<StepRecord> out;
    out.reserve(static_cast<size_t>(n));
    for (int s = 0; s < n; ++s) {
        if (cursor_ >= order_.size()) refresh_order();
        const StepRecord rec = step_batch(train_batches_[static_cast<size_t>(order_[cursor_++])]);
        if (metrics) {
            nlohmann::json j{{"step", rec.step},       {"l_ctc", rec.losses.l_ctc},
                             {"l_pr", rec.losses.l_pr}, {"l_gr", rec.losses.l_gr},
                             {"l_lid", rec.losses.l_lid}, {"total", rec.losses.total},
                             {"lr", rec.lr}};
            *metrics << j.dump() << '\n';
        }
        out.push_back(rec);
    }
    return out;
}

template <class S>
double Trainer<S>::run_epoch(std::ostream *metrics) {
    check(!train_batches_.empty(), "train: set_data must run before training");
    refresh_order();
    double weighted = 0.0;
    int64_t count = 0;
    const std::vector<StepRecord> recs =
        train_steps(static_cast<int>(train_batches_.size()), metrics);
    for (size_t i = 0; i < recs.size(); ++i) {
        const size_t bsz = train_batches_[static_cast<size_t>(order_[i])].size();
        weighted += recs[i].losses.total * static_cast<double>(bsz);
        count += static_cast<int64_t>(bsz);
    }
    return weighted / static_cast<double>(count);
}

template <class S>
double Trainer<S>::evaluate() {
    check(!dev_batches_.empty(), "train: no dev data to evaluate");
    double weighted = 0.0;
    int64_t count = 0;
    for (const std::vector<int> &idx : dev_batches_) {
        Batch<S> batch = make_batch(idx, false);
        LossBreakdown bd{};
        Rng dummy(0);  // eval mode draws nothing
        model_->compute_loss(batch, false, dummy, &bd);
        weighted += bd.total * static_cast<double>(idx.size());
        count += static_cast<int64_t>(idx.size());
    }
    return weighted / static_cast<double>(count);
}

template <class S>
void Trainer<S>::fit(std::ostream *metrics, const std::string &checkpoint_dir,
                     std::ostream *progress) {
    if (!checkpoint_dir.empty()) std::filesystem::create_directories(checkpoint_dir);
    while (state_.epoch < cfg_.epochs) {
        const double train_loss = run_epoch(metrics);
        const double dev = evaluate();
        state_.epoch += 1;
        const bool improved = dev < state_.best_dev;
        if (improved) {
            state_.best_dev = dev;
            state_.bad_epochs = 0;
            if (!checkpoint_dir.empty())
                save_checkpoint(
                    (std::filesystem::path(checkpoint_dir) / "best.ckpt").string(),
                    make_checkpoint());
        } else {
            state_.bad_epochs += 1;
            if (state_.bad_epochs > cfg_.plateau_patience) {
                state_.lr *= cfg_.plateau_factor;
                state_.bad_epochs = 0;
            }
        }
        if (!checkpoint_dir.empty())
            save_checkpoint((std::filesystem::path(checkpoint_dir) / "last.ckpt").string(),
                            make_checkpoint());
        if (progress)
            *progress << "epoch " << state_.epoch << "/" << cfg_.epochs
                      << "  train_loss=" << train_loss << "  dev_loss=" << dev
                      << "  lr=" << state_.lr << (improved ? "  (best)" : "") << "\n";
    }
}

Vocabulary build_graphemes_from_manifest(const std::vector<UtteranceMeta> &rows) {
    check(!rows.empty(), "vocab: empty manifest");
    std::map<std::string, std::vector<std::string>> corpora;
    for (const UtteranceMeta &row : rows) corpora[row.language].push_back(row.transcript);
    return build_grapheme_vocab(corpora);
}

Vocabulary build_phonemes_from_manifest(const std::vector<UtteranceMeta> &rows) {
    check(!rows.empty(), "vocab: empty manifest");
    std::set<std::string> tokens;
    for (const UtteranceMeta &row : rows)
        for (const std::string &tok : split_words(row.phonemes))
            if (tok != "<space>") tokens.insert(tok);  // the builder adds the special itself
    return build_phoneme_vocab(std::vector<std::string>(tokens.begin(), tokens.end()));
}

std::vector<std::string> lm_tokens(const UtteranceMeta &row) {
    std::vector<std::string> out;
    out.push_back(language_labels()[static_cast<size_t>(language_index(row.language))]);
    for (const std::string &cp : utf8_codepoints(row.transcript))
        out.push_back(cp == " " ? "<space>" : cp);
    return out;
}

std::vector<std::vector<std::string>> lm_corpus(const std::vector<UtteranceMeta> &rows) {
    std::vector<std::vector<std::string>> out;
    out.reserve(rows.size());
    for (const UtteranceMeta &row : rows) out.push_back(lm_tokens(row));
    return out;
}

template <class S>
std::vector<ScoredUtterance> decode_manifest(Model<S> &model, const Cmvn &cmvn,
                                             const std::vector<UtteranceMeta> &rows,
                                             const Vocabulary &graphemes,
                                             const Vocabulary &phonemes, const NGramLM *lm,
                                             const BeamConfig &beam,
                                             std::vector<DecodeResult> *details) {
    std::vector<ScoredUtterance> scored(rows.size());
    std::vector<DecodeResult> results(rows.size());
    std::vector<std::string> errors(rows.size());

    // eval-mode decoding only reads shared state; utterances are independent
#pragma omp parallel for schedule(dynamic)
    for (int64_t i = 0; i < static_cast<int64_t>(rows.size()); ++i) {
        try {
            const UtteranceMeta &row = rows[static_cast<size_t>(i)];
            PreparedUtterance item = prepare_utterance(row, graphemes, phonemes, false);
            apply_cmvn(item.feats, cmvn);
            const int t = item.feats.valid_len;
            std::vector<S> grid(item.feats.frames.begin(), item.feats.frames.end());
            TensorT<S> feats = TensorT<S>::from({1, t, item.feats.n_mels}, grid);
            DecodeResult res = model.decode_utterance(feats, t, lm, &graphemes, beam);

            ScoredUtterance &s = scored[static_cast<size_t>(i)];
            s.utt_id = row.utt_id;
            s.language = row.language;
            s.ref = row.transcript;
            s.hyp = res.nbest.empty() ? std::string() : res.nbest.front().text;
            results[static_cast<size_t>(i)] = std::move(res);
        } catch (const std::exception &e) {
            errors[static_cast<size_t>(i)] = e.what();
        }
    }
    for (const std::string &err : errors)
        if (!err.empty()) fail("decode: ", err);
    if (details) *details = std::move(results);
    return scored;
}

template <class S>
std::vector<SweepRow> sweep_phn_layers(const TrainConfig &base_cfg,
                                       const std::vector<UtteranceMeta> &train_rows,
                                       const std::vector<UtteranceMeta> &test_rows,
                                       const Vocabulary &graphemes,
                                       const Vocabulary &phonemes,
                                       const std::vector<int> &depths, std::ostream *csv) {
    check(!depths.empty(), "sweep: no depths requested");
    if (csv) *csv << "phn_layers,wer,cer,dev_loss\n";
    std::vector<SweepRow> rows;
    for (const int depth : depths) {
        TrainConfig cfg = base_cfg;
        cfg.model.phn_layers = depth;
        Trainer<S> trainer(cfg, graphemes, phonemes);
        trainer.set_data(train_rows, test_rows);
        trainer.fit(nullptr, "");

        const std::vector<ScoredUtterance> scored = decode_manifest(
            trainer.model(), trainer.cmvn(), test_rows, graphemes, phonemes, nullptr,
            BeamConfig{}, nullptr);
        const ScoreReport report = score_utterances(scored);

        SweepRow row;
        row.phn_layers = depth;
        row.dev_loss = trainer.evaluate();
        row.wer = report.wer();
        row.cer = report.cer();
        if (csv)
            *csv << depth << ',' << row.wer << ',' << row.cer << ',' << row.dev_loss << '\n';
        rows.push_back(row);
    }
    return rows;
}

#define KOEL_INSTANTIATE_TRAIN(S)                                                        \
    template class Trainer<S>;                                                           \
    template std::vector<ScoredUtterance> decode_manifest<S>(                            \
        Model<S> &, const Cmvn &, const std::vector<UtteranceMeta> &, const Vocabulary &, \
        const Vocabulary &, const NGramLM *, const BeamConfig &,                         \
        std::vector<DecodeResult> *);                                                    \
    template std::vector<SweepRow> sweep_phn_layers<S>(                                  \
        const TrainConfig &, const std::vector<UtteranceMeta> &,                         \
        const std::vector<UtteranceMeta> &, const Vocabulary &, const Vocabulary &,      \
        const std::vector<int> &, std::ostream *);

KOEL_INSTANTIATE_TRAIN(float)
KOEL_INSTANTIATE_TRAIN(double)

}  // namespace koel
