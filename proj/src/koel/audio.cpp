#include "koel/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "koel/common.hpp"

namespace koel {

namespace {

uint32_t read_u32(const uint8_t *p) {
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
           static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}
uint16_t read_u16(const uint8_t *p) {
    return static_cast<uint16_t>(p[0] | p[1] << 8);
}

void put_u32(std::string &s, uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string &s, uint16_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
}

std::vector<float> interp_to_length(const std::vector<float> &in, int64_t out_len, double step) {
    std::vector<float> out(static_cast<size_t>(out_len));
    const int64_t n = static_cast<int64_t>(in.size());
    for (int64_t i = 0; i < out_len; ++i) {
        const double pos = static_cast<double>(i) * step;
        int64_t lo = static_cast<int64_t>(pos);
        if (lo >= n - 1) {
            out[static_cast<size_t>(i)] = in[static_cast<size_t>(n - 1)];
            continue;
        }
        const double frac = pos - static_cast<double>(lo);
        out[static_cast<size_t>(i)] = static_cast<float>(
            (1.0 - frac) * in[static_cast<size_t>(lo)] + frac * in[static_cast<size_t>(lo + 1)]);
    }
    return out;
}

} // namespace

Waveform read_wav(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "cannot open WAV file: ", path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    check(buf.size() >= 44, "WAV file too small: ", path);
    check(std::memcmp(buf.data(), "RIFF", 4) == 0 && std::memcmp(buf.data() + 8, "WAVE", 4) == 0,
          "not a RIFF/WAVE file: ", path);

    int fmt_code = -1, channels = 0, bits = 0, rate = 0;
    size_t data_off = 0, data_len = 0;
    size_t pos = 12;
    while (pos + 8 <= buf.size()) {
        const uint32_t chunk_len = read_u32(buf.data() + pos + 4);
        const uint8_t *chunk = buf.data() + pos + 8;
        check(pos + 8 + chunk_len <= buf.size(), "truncated WAV chunk in ", path);
        if (std::memcmp(buf.data() + pos, "fmt ", 4) == 0) {
            check(chunk_len >= 16, "malformed fmt chunk in ", path);
            fmt_code = read_u16(chunk);
            channels = read_u16(chunk + 2);
            rate = static_cast<int>(read_u32(chunk + 4));
            bits = read_u16(chunk + 14);
        } else if (std::memcmp(buf.data() + pos, "data", 4) == 0) {
            data_off = pos + 8;
            data_len = chunk_len;
        }
        pos += 8 + chunk_len + (chunk_len & 1);  // chunks are word-aligned
    }
    check(fmt_code != -1, "WAV file has no fmt chunk: ", path);
    check(data_off != 0, "WAV file has no data chunk: ", path);
    check(channels == 1, "only mono WAV supported, got ", channels, " channels: ", path);
    check(rate > 0, "bad sample rate in ", path);

    Waveform w;
    w.sample_rate = rate;
    const uint8_t *data = buf.data() + data_off;
    if (fmt_code == 1 && bits == 16) {
        const size_t n = data_len / 2;
        w.samples.resize(n);
        for (size_t i = 0; i < n; ++i) {
            int16_t v;
            std::memcpy(&v, data + 2 * i, 2);
            // same scale as the writer so a round trip only loses the
            // half-step rounding error; -32768 clamps to stay in [-1, 1]
            w.samples[i] = std::max(-1.0f, static_cast<float>(v) / 32767.0f);
        }
    } else if (fmt_code == 3 && bits == 32) {
        const size_t n = data_len / 4;
        w.samples.resize(n);
        std::memcpy(w.samples.data(), data, n * 4);
    } else {
        fail("unsupported WAV encoding (format ", fmt_code, ", ", bits, " bits): ", path);
    }
    check(!w.samples.empty(), "WAV file has no samples: ", path);
    return w;
}

void write_wav(const std::string &path, const Waveform &w) {
    check(w.sample_rate > 0 && !w.samples.empty(), "write_wav: empty waveform");
    const uint32_t data_len = static_cast<uint32_t>(w.samples.size() * 2);
    std::string out;
    out.reserve(44 + data_len);
    out += "RIFF";
    put_u32(out, 36 + data_len);
    out += "WAVEfmt ";
    put_u32(out, 16);
    put_u16(out, 1);  // PCM
    put_u16(out, 1);  // mono
    put_u32(out, static_cast<uint32_t>(w.sample_rate));
    put_u32(out, static_cast<uint32_t>(w.sample_rate) * 2);  // byte rate
    put_u16(out, 2);                                         // block align
    put_u16(out, 16);                                        // bits
    out += "data";
    put_u32(out, data_len);
    for (const float s : w.samples) {
        const float c = std::clamp(s, -1.0f, 1.0f);
        const int16_t v = static_cast<int16_t>(std::lrint(c * 32767.0f));
        out.push_back(static_cast<char>(v & 0xff));
        out.push_back(static_cast<char>((v >> 8) & 0xff));
    }
    std::ofstream os(path, std::ios::binary);
    check(os.good(), "cannot write WAV file: ", path);
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    check(os.good(), "short write to WAV file: ", path);
}

Waveform resample(const Waveform &w, int target_rate) {
    check(target_rate > 0, "resample: bad target rate ", target_rate);
    if (w.sample_rate == target_rate) return w;
    const int64_t n = static_cast<int64_t>(w.samples.size());
    const int64_t out_len = std::max<int64_t>(
        1, std::llround(static_cast<double>(n) * target_rate / w.sample_rate));
    Waveform out;
    out.sample_rate = target_rate;
    out.samples =
        interp_to_length(w.samples, out_len, static_cast<double>(w.sample_rate) / target_rate);
    return out;
}

Waveform speed_perturb(const Waveform &w, double factor) {
    check(factor > 0.0, "speed_perturb: factor must be positive, got ", factor);
    if (factor == 1.0) return w;
    const int64_t n = static_cast<int64_t>(w.samples.size());
    const int64_t out_len = std::max<int64_t>(1, std::llround(static_cast<double>(n) / factor));
    Waveform out;
    out.sample_rate = w.sample_rate;
    out.samples = interp_to_length(w.samples, out_len, factor);
    return out;
}

} // namespace koel
