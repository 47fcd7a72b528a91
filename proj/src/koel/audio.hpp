#pragma once

// Mono WAV reading/writing and linear-interpolation resampling.

#include <string>
#include <vector>

namespace koel {

struct Waveform {
    std::vector<float> samples;  // in [-1, 1]
    int sample_rate = 0;         // Hz
};

// 16-bit PCM or 32-bit IEEE float, mono only
Waveform read_wav(const std::string &path);
// written as 16-bit PCM, samples clamped to [-1, 1]
void write_wav(const std::string &path, const Waveform &w);

// linear interpolation; returns the input unchanged when rates already match
Waveform resample(const Waveform &w, int target_rate);

// duration scaled by 1/factor via resampling; sample_rate field unchanged.
// factor 1.0 is a bit-identical pass-through.
Waveform speed_perturb(const Waveform &w, double factor);

} // namespace koel
