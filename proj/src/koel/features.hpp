#pragma once

// 40-dim log-mel filterbank features, SpecAugment, CMVN, feature cache files.

#include <string>
#include <vector>

#include "koel/audio.hpp"
#include "koel/common.hpp"

namespace koel {

struct FeatureSequence {
    std::vector<float> frames;  // (T, n_mels) row-major
    int valid_len = 0;          // == T
    int n_mels = 40;
    std::string utt_id;
    std::string language;

    float &at(int t, int m) { return frames[static_cast<size_t>(t) * n_mels + m]; }
    float at(int t, int m) const { return frames[static_cast<size_t>(t) * n_mels + m]; }
};

struct FbankConfig {
    int sample_rate = 16000;  // waveforms are resampled to this on ingestion
    double win_ms = 25.0;
    double hop_ms = 10.0;
    int n_mels = 40;
    int n_fft = 512;
    double floor_eps = 1e-10;  // added to power-spectrum bins before mel projection
};

// number of frames produced by the framing formula
int frame_count(int64_t n_samples, int win, int hop);

// Hann window, power spectrum, triangular mel bank spanning 0..Nyquist,
// natural log. The waveform must already be at cfg.sample_rate.
FeatureSequence compute_fbank(const Waveform &w, const FbankConfig &cfg = {});

struct SpecAugmentPolicy {
    int num_freq_masks = 2;
    int max_freq_width = 10;
    int num_time_masks = 2;
    int max_time_width = 40;
    bool fill_with_mean = true;  // per-utterance mean; otherwise fill_value
    float fill_value = 0.0f;
};

struct MaskSpan {
    bool freq = false;  // frequency mask (else time mask)
    int start = 0;
    int width = 0;
};

// Mask widths are uniform in [0, max]; starts uniform over valid positions.
// The spans actually applied are appended to *spans when given.
FeatureSequence spec_augment(const FeatureSequence &f, const SpecAugmentPolicy &p, Rng &rng,
                             std::vector<MaskSpan> *spans = nullptr);

struct Cmvn {
    std::vector<float> mean;     // (n_mels)
    std::vector<float> inv_std;  // (n_mels)
};

Cmvn compute_cmvn(const std::vector<const FeatureSequence *> &feats);
void apply_cmvn(FeatureSequence &f, const Cmvn &c);

// binary cache: magic, T, n_mels, then row-major float32
void write_feature_cache(const std::string &path, const FeatureSequence &f);
FeatureSequence read_feature_cache(const std::string &path);

// in-place radix-2 FFT, sizes must be powers of two (exposed for tests)
void fft_radix2(std::vector<double> &re, std::vector<double> &im);

} // namespace koel
