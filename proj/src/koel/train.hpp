#pragma once

// Training loop: Adam with global-norm gradient clipping, reduce-on-plateau
// learning-rate scheduling, sorted-length batching, optional augmentation
// (speed perturbation + SpecAugment), JSONL step metrics, and checkpointing
// with exact resume.  Also the PHN-DEC depth sweep and batch decoding.

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "koel/checkpoint.hpp"
#include "koel/manifest.hpp"
#include "koel/metrics.hpp"
#include "koel/ngram.hpp"

namespace koel {

struct TrainConfig {
    ModelConfig model;
    double lr = 0.001;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 5.0;        // global grad norm; <= 0 disables
    double plateau_factor = 0.5;   // lr multiplier after patience runs out
    int plateau_patience = 1;      // tolerated non-improving epochs
    int epochs = 30;
    int batch_size = 20;
    uint64_t seed = 1;
    bool augment = false;          // speed perturbation + SpecAugment
    std::vector<double> speed_factors{0.9, 1.0, 1.1};
    SpecAugmentPolicy augment_policy;

    void validate() const;
};

// one manifest row turned into model inputs: resampled audio, raw log-mel
// features (CMVN is applied at batch time), and encoded targets
struct PreparedUtterance {
    UtteranceMeta meta;
    Waveform wave;          // 16 kHz; samples kept only when requested
    FeatureSequence feats;  // (T, 40) log-mel, no CMVN
    TargetEncoding targets;
};

PreparedUtterance prepare_utterance(const UtteranceMeta &meta, const Vocabulary &graphemes,
                                    const Vocabulary &phonemes, bool keep_wave);

struct StepRecord {
    int64_t step = 0;
    LossBreakdown losses;
    double lr = 0.0;
};

template <class S>
class Trainer {
  public:
    Trainer(const TrainConfig &cfg, const Vocabulary &graphemes, const Vocabulary &phonemes);

    // Extracts features for both manifests and fits CMVN on the training set.
    // Errors if any utterance cannot carry its CTC target after subsampling
    // (including under the fastest configured speed factor).
    void set_data(const std::vector<UtteranceMeta> &train_rows,
                  const std::vector<UtteranceMeta> &dev_rows);

    // restore parameters, statistics, and trainer state saved by make_checkpoint
    void restore(const Checkpoint &ck);
    Checkpoint make_checkpoint();

    // n optimizer steps over the training batches (reshuffling per pass);
    // one StepRecord per step, also written to *metrics as JSONL when given
    std::vector<StepRecord> train_steps(int n, std::ostream *metrics);
    double run_epoch(std::ostream *metrics);  // full pass; mean total per utterance
    double evaluate();                        // dev loss, eval mode

    // the whole schedule: epochs, scheduler, best/last checkpoints (dir may
    // be empty to skip saving); resumes from the restored epoch; per-epoch
    // summaries go to *progress when given
    void fit(std::ostream *metrics, const std::string &checkpoint_dir,
             std::ostream *progress = nullptr);

    Model<S> &model() { return *model_; }
    const TrainConfig &config() const { return cfg_; }
    const TrainerState &state() const { return state_; }
    const Cmvn &cmvn() const { return cmvn_; }

  private:
    Batch<S> make_batch(const std::vector<int> &idx, bool training);
    StepRecord step_batch(const std::vector<int> &idx);
    void apply_grads();
    void refresh_order();

    TrainConfig cfg_;
    const Vocabulary *graphemes_;
    const Vocabulary *phonemes_;
    std::unique_ptr<Model<S>> model_;
    ParamMap<S> params_;
    Cmvn cmvn_;
    Rng rng_;
    TrainerState state_;
    std::vector<PreparedUtterance> train_items_, dev_items_;
    std::vector<std::vector<int>> train_batches_, dev_batches_;
    std::vector<int> order_;  // shuffled batch indices for the current pass
    size_t cursor_ = 0;
};

// vocabularies straight from manifest rows: graphemes from the transcripts
// grouped by language, phonemes from the unique tokens of the phoneme strings
// (specials like <space> are added by the builders, not collected here)
Vocabulary build_graphemes_from_manifest(const std::vector<UtteranceMeta> &rows);
Vocabulary build_phonemes_from_manifest(const std::vector<UtteranceMeta> &rows);

// LM token stream for one utterance: the language label, then the grapheme
// symbols of the transcript (space -> <space>).  This matches the symbol
// stream beam-search shallow fusion feeds the LM, so an LM trained on
// lm_corpus scores decoding prefixes consistently.
std::vector<std::string> lm_tokens(const UtteranceMeta &row);
std::vector<std::vector<std::string>> lm_corpus(const std::vector<UtteranceMeta> &rows);

// decode every utterance of a manifest (parallel across utterances, results
// in row order); `details`, when given, receives the full per-row DecodeResult
template <class S>
std::vector<ScoredUtterance> decode_manifest(Model<S> &model, const Cmvn &cmvn,
                                             const std::vector<UtteranceMeta> &rows,
                                             const Vocabulary &graphemes,
                                             const Vocabulary &phonemes, const NGramLM *lm,
                                             const BeamConfig &beam,
                                             std::vector<DecodeResult> *details = nullptr);

struct SweepRow {
    int phn_layers = 0;
    double dev_loss = 0.0;
    double wer = 0.0;
    double cer = 0.0;
};

// depth sweep: one model per phoneme-decoder depth (grapheme decoder fixed),
// trained with base_cfg and scored on test_rows; CSV written when given
template <class S>
std::vector<SweepRow> sweep_phn_layers(const TrainConfig &base_cfg,
                                       const std::vector<UtteranceMeta> &train_rows,
                                       const std::vector<UtteranceMeta> &test_rows,
                                       const Vocabulary &graphemes,
                                       const Vocabulary &phonemes,
                                       const std::vector<int> &depths, std::ostream *csv);

}  // namespace koel
