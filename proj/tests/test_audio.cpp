#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>

#include "koel/audio.hpp"
#include "koel/common.hpp"

using namespace koel;

namespace {

std::string temp_path(const std::string& name) {
    static const long long stamp =
        static_cast<long long>(std::chrono::steady_clock::now().time_since_epoch().count());
    return (std::filesystem::temp_directory_path() / ("koel_audio_" + std::to_string(stamp) + "_" + name))
        .string();
}

Waveform make_sine(double freq, int rate, double seconds, double amp = 0.5) {
    Waveform w;
    w.sample_rate = rate;
    const int n = static_cast<int>(std::llround(seconds * rate));
    w.samples.resize(n);
    for (int i = 0; i < n; ++i) {
        w.samples[i] = static_cast<float>(amp * std::sin(2.0 * M_PI * freq * i / rate));
    }
    return w;
}

}  // namespace

TEST_CASE("wav round trip preserves samples within PCM16 quantization") {
    Rng rng(11);
    Waveform w;
    w.sample_rate = 16000;
    w.samples.resize(2048);
    for (auto& s : w.samples) s = static_cast<float>(rng.uniform(-1.0, 1.0));

    const std::string path = temp_path("roundtrip.wav");
    write_wav(path, w);
    const Waveform r = read_wav(path);
    REQUIRE(r.sample_rate == w.sample_rate);
    REQUIRE(r.samples.size() == w.samples.size());
    double max_err = 0.0;
    for (size_t i = 0; i < w.samples.size(); ++i) {
        max_err = std::max(max_err, std::abs(static_cast<double>(r.samples[i]) - w.samples[i]));
    }
    CHECK(max_err <= 1.0 / 32767.0 + 1e-7);
    std::filesystem::remove(path);
}

TEST_CASE("wav writer clamps out-of-range samples") {
    Waveform w;
    w.sample_rate = 8000;
    w.samples = {2.0f, -3.0f, 0.25f};
    const std::string path = temp_path("clamp.wav");
    write_wav(path, w);
    const Waveform r = read_wav(path);
    CHECK(r.samples[0] == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(r.samples[1] == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(r.samples[2] == doctest::Approx(0.25).epsilon(1e-3));
    std::filesystem::remove(path);
}

TEST_CASE("wav reader rejects missing and malformed files") {
    CHECK_THROWS_AS(read_wav(temp_path("does_not_exist.wav")), KoelError);
    const std::string path = temp_path("garbage.wav");
    std::ofstream(path) << "this is not a RIFF file at all";
    CHECK_THROWS_AS(read_wav(path), KoelError);
    std::filesystem::remove(path);
}

TEST_CASE("resample is a pass-through at the same rate") {
    const Waveform w = make_sine(440.0, 16000, 0.1);
    const Waveform r = resample(w, 16000);
    REQUIRE(r.samples.size() == w.samples.size());
    CHECK(std::equal(r.samples.begin(), r.samples.end(), w.samples.begin()));
}

TEST_CASE("resample scales length and keeps low-frequency content") {
    const Waveform w = make_sine(200.0, 16000, 0.25);
    const Waveform r = resample(w, 8000);
    CHECK(r.sample_rate == 8000);
    CHECK(static_cast<long long>(r.samples.size()) ==
          std::llround(static_cast<double>(w.samples.size()) * 8000.0 / 16000.0));
    // a 200 Hz sine sampled at 8 kHz should match the analytic signal closely
    double max_err = 0.0;
    for (size_t i = 0; i < r.samples.size(); ++i) {
        const double expect = 0.5 * std::sin(2.0 * M_PI * 200.0 * static_cast<double>(i) / 8000.0);
        max_err = std::max(max_err, std::abs(r.samples[i] - expect));
    }
    CHECK(max_err < 5e-3);
}

TEST_CASE("resample of a linear ramp stays linear") {
    Waveform w;
    w.sample_rate = 1000;
    w.samples.resize(100);
    for (int i = 0; i < 100; ++i) w.samples[i] = i / 100.0f;
    const Waveform r = resample(w, 3000);
    // skip the tail: past the last input sample the edge value is held,
    // which breaks linearity by design
    const size_t linear_end = r.samples.size() - 8;
    for (size_t i = 1; i + 1 < linear_end; ++i) {
        const double second_diff = static_cast<double>(r.samples[i + 1]) - 2.0 * r.samples[i] + r.samples[i - 1];
        CHECK(std::abs(second_diff) < 1e-6);
    }
}

TEST_CASE("speed_perturb changes duration, not sample rate") {
    const Waveform w = make_sine(300.0, 16000, 0.2);
    for (const double factor : {0.9, 1.1}) {
        const Waveform p = speed_perturb(w, factor);
        CHECK(p.sample_rate == 16000);
        CHECK(static_cast<long long>(p.samples.size()) ==
              std::llround(static_cast<double>(w.samples.size()) / factor));
    }
    const Waveform same = speed_perturb(w, 1.0);
    REQUIRE(same.samples.size() == w.samples.size());
    CHECK(std::equal(same.samples.begin(), same.samples.end(), w.samples.begin()));
    CHECK_THROWS_AS(speed_perturb(w, 0.0), KoelError);
    CHECK_THROWS_AS(speed_perturb(w, -1.0), KoelError);
}
