#include "koel/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace koel {

namespace {

constexpr uint32_t kFeatureMagic = 0x4b46'4541;  // "KFEA"

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// triangular filters as (n_mels, n_fft/2 + 1) weights
std::vector<double> build_mel_bank(int n_mels, int n_fft, int sample_rate) {
    const int n_bins = n_fft / 2 + 1;
    const double mel_max = hz_to_mel(sample_rate / 2.0);
    std::vector<double> centers(static_cast<size_t>(n_mels) + 2);
    for (int m = 0; m < n_mels + 2; ++m) {
        const double hz = mel_to_hz(mel_max * m / (n_mels + 1));
        centers[static_cast<size_t>(m)] = hz * n_fft / sample_rate;  // fractional fft bin
    }
    std::vector<double> bank(static_cast<size_t>(n_mels) * n_bins, 0.0);
    for (int m = 0; m < n_mels; ++m) {
        const double lo = centers[static_cast<size_t>(m)];
        const double mid = centers[static_cast<size_t>(m) + 1];
        const double hi = centers[static_cast<size_t>(m) + 2];
        double row_sum = 0.0;
        for (int k = 0; k < n_bins; ++k) {
            double w = 0.0;
            if (k > lo && k < mid)
                w = (k - lo) / (mid - lo);
            else if (k >= mid && k < hi)
                w = (hi - k) / (hi - mid);
            bank[static_cast<size_t>(m) * n_bins + k] = w;
            row_sum += w;
        }
        check(row_sum > 0.0, "mel filter ", m, " is empty; n_fft ", n_fft, " too small for ",
              n_mels, " mels");
    }
    return bank;
}

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

} // namespace

void fft_radix2(std::vector<double> &re, std::vector<double> &im) {
    const size_t n = re.size();
    check(im.size() == n && is_pow2(static_cast<int>(n)), "fft_radix2: size must be a power of 2");
    // bit-reversal permutation
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) {
            std::swap(re[i], re[j]);
            std::swap(im[i], im[j]);
        }
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
        const double wr = std::cos(ang), wi = std::sin(ang);
        for (size_t i = 0; i < n; i += len) {
            double cr = 1.0, ci = 0.0;
            for (size_t j = 0; j < len / 2; ++j) {
                const size_t a = i + j, b = i + j + len / 2;
                const double tr = re[b] * cr - im[b] * ci;
                const double ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                const double ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
    }
}

int frame_count(int64_t n_samples, int win, int hop) {
    check(win > 0 && hop > 0, "frame_count: bad win/hop");
    check(n_samples >= win, "audio shorter than one window: ", n_samples, " samples < ", win);
    return static_cast<int>((n_samples - win) / hop + 1);
}

FeatureSequence compute_fbank(const Waveform &w, const FbankConfig &cfg) {
    check(w.sample_rate == cfg.sample_rate, "compute_fbank: waveform at ", w.sample_rate,
          " Hz, expected ", cfg.sample_rate, " (resample first)");
    const int win = static_cast<int>(std::lround(cfg.sample_rate * cfg.win_ms / 1000.0));
    const int hop = static_cast<int>(std::lround(cfg.sample_rate * cfg.hop_ms / 1000.0));
    check(cfg.n_fft >= win && is_pow2(cfg.n_fft), "compute_fbank: n_fft ", cfg.n_fft,
          " must be a power of 2 and >= window ", win);
    const int t = frame_count(static_cast<int64_t>(w.samples.size()), win, hop);
    const int n_bins = cfg.n_fft / 2 + 1;
    const auto bank = build_mel_bank(cfg.n_mels, cfg.n_fft, cfg.sample_rate);

    std::vector<double> window(static_cast<size_t>(win));
    for (int i = 0; i < win; ++i)
        window[static_cast<size_t>(i)] =
            0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / (win - 1));

    FeatureSequence out;
    out.n_mels = cfg.n_mels;
    out.valid_len = t;
    out.frames.resize(static_cast<size_t>(t) * cfg.n_mels);

    std::vector<double> re(static_cast<size_t>(cfg.n_fft)), im(static_cast<size_t>(cfg.n_fft));
    std::vector<double> power(static_cast<size_t>(n_bins));
    for (int fr = 0; fr < t; ++fr) {
        std::fill(re.begin(), re.end(), 0.0);
        std::fill(im.begin(), im.end(), 0.0);
        const int64_t off = static_cast<int64_t>(fr) * hop;
        for (int i = 0; i < win; ++i)
            re[static_cast<size_t>(i)] =
                static_cast<double>(w.samples[static_cast<size_t>(off + i)]) *
                window[static_cast<size_t>(i)];
        fft_radix2(re, im);
        // floor_eps on the power bins keeps every mel energy strictly positive
        for (int k = 0; k < n_bins; ++k)
            power[static_cast<size_t>(k)] =
                re[static_cast<size_t>(k)] * re[static_cast<size_t>(k)] +
                im[static_cast<size_t>(k)] * im[static_cast<size_t>(k)] + cfg.floor_eps;
        for (int m = 0; m < cfg.n_mels; ++m) {
            double e = 0.0;
            for (int k = 0; k < n_bins; ++k)
                e += bank[static_cast<size_t>(m) * n_bins + k] * power[static_cast<size_t>(k)];
            out.frames[static_cast<size_t>(fr) * cfg.n_mels + m] =
                static_cast<float>(std::log(e));
        }
    }
    return out;
}

FeatureSequence spec_augment(const FeatureSequence &f, const SpecAugmentPolicy &p, Rng &rng,
                             std::vector<MaskSpan> *spans) {
    check(p.max_freq_width <= f.n_mels, "spec_augment: freq mask width ", p.max_freq_width,
          " exceeds ", f.n_mels, " mel bins");
    check(p.num_freq_masks >= 0 && p.num_time_masks >= 0 && p.max_freq_width >= 0 &&
              p.max_time_width >= 0,
          "spec_augment: negative policy field");
    FeatureSequence out = f;
    float fill = p.fill_value;
    if (p.fill_with_mean) {
        double acc = 0.0;
        for (const float v : f.frames) acc += v;
        fill = static_cast<float>(acc / static_cast<double>(f.frames.size()));
    }
    for (int i = 0; i < p.num_freq_masks; ++i) {
        const int width = rng.uniform_int(p.max_freq_width + 1);
        const int start = rng.uniform_int(f.n_mels - width + 1);
        if (spans) spans->push_back({true, start, width});
        for (int t = 0; t < out.valid_len; ++t)
            for (int m = start; m < start + width; ++m) out.at(t, m) = fill;
    }
    for (int i = 0; i < p.num_time_masks; ++i) {
        const int max_w = std::min(p.max_time_width, out.valid_len);
        const int width = rng.uniform_int(max_w + 1);
        const int start = rng.uniform_int(out.valid_len - width + 1);
        if (spans) spans->push_back({false, start, width});
        for (int t = start; t < start + width; ++t)
            for (int m = 0; m < out.n_mels; ++m) out.at(t, m) = fill;
    }
    return out;
}

Cmvn compute_cmvn(const std::vector<const FeatureSequence *> &feats) {
    check(!feats.empty(), "compute_cmvn: no features");
    const int n_mels = feats[0]->n_mels;
    std::vector<double> sum(static_cast<size_t>(n_mels)), sq(static_cast<size_t>(n_mels));
    int64_t frames = 0;
    for (const auto *f : feats) {
        check(f->n_mels == n_mels, "compute_cmvn: mixed feature dims");
        for (int t = 0; t < f->valid_len; ++t)
            for (int m = 0; m < n_mels; ++m) {
                const double v = f->at(t, m);
                sum[static_cast<size_t>(m)] += v;
                sq[static_cast<size_t>(m)] += v * v;
            }
        frames += f->valid_len;
    }
    check(frames > 0, "compute_cmvn: zero frames");
    Cmvn c;
    c.mean.resize(static_cast<size_t>(n_mels));
    c.inv_std.resize(static_cast<size_t>(n_mels));
    for (int m = 0; m < n_mels; ++m) {
        const double mean = sum[static_cast<size_t>(m)] / static_cast<double>(frames);
        const double var =
            std::max(0.0, sq[static_cast<size_t>(m)] / static_cast<double>(frames) - mean * mean);
        c.mean[static_cast<size_t>(m)] = static_cast<float>(mean);
        c.inv_std[static_cast<size_t>(m)] = static_cast<float>(1.0 / std::sqrt(var + 1e-8));
    }
    return c;
}

void apply_cmvn(FeatureSequence &f, const Cmvn &c) {
    check(static_cast<int>(c.mean.size()) == f.n_mels, "apply_cmvn: dim mismatch");
    for (int t = 0; t < f.valid_len; ++t)
        for (int m = 0; m < f.n_mels; ++m)
            f.at(t, m) = (f.at(t, m) - c.mean[static_cast<size_t>(m)]) *
                         c.inv_std[static_cast<size_t>(m)];
}

void write_feature_cache(const std::string &path, const FeatureSequence &f) {
    std::ofstream os(path, std::ios::binary);
    check(os.good(), "cannot write feature cache: ", path);
    const uint32_t magic = kFeatureMagic;
    const int32_t t = f.valid_len, d = f.n_mels;
    os.write(reinterpret_cast<const char *>(&magic), 4);
    os.write(reinterpret_cast<const char *>(&t), 4);
    os.write(reinterpret_cast<const char *>(&d), 4);
    os.write(reinterpret_cast<const char *>(f.frames.data()),
             static_cast<std::streamsize>(f.frames.size() * sizeof(float)));
    check(os.good(), "short write to feature cache: ", path);
}

FeatureSequence read_feature_cache(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "cannot open feature cache: ", path);
    uint32_t magic = 0;
    int32_t t = 0, d = 0;
    is.read(reinterpret_cast<char *>(&magic), 4);
    is.read(reinterpret_cast<char *>(&t), 4);
    is.read(reinterpret_cast<char *>(&d), 4);
    check(is.good() && magic == kFeatureMagic, "not a feature cache file: ", path);
    check(t >= 0 && d > 0, "corrupt feature cache header: ", path);
    FeatureSequence f;
    f.valid_len = t;
    f.n_mels = d;
    f.frames.resize(static_cast<size_t>(t) * d);
    is.read(reinterpret_cast<char *>(f.frames.data()),
            static_cast<std::streamsize>(f.frames.size() * sizeof(float)));
    check(is.good(), "truncated feature cache: ", path);
    return f;
}

} // namespace koel
