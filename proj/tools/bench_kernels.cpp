// Micro-benchmark: the OpenMP kernels against their serial reference twins,
// verifying bitwise agreement on the way.  Median-of-repeats wall time per
// call, one row per (kernel, size).
//
//   bench_kernels [--repeats N] [--threads N]

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "koel/common.hpp"
#include "koel/kernels.hpp"

using namespace koel;
using Clock = std::chrono::steady_clock;

namespace {

int g_repeats = 7;

std::vector<float> random_buf(size_t n, Rng &rng) {
    std::vector<float> out(n);
    for (float &v : out) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return out;
}

double median_seconds(const std::function<void()> &fn) {
    std::vector<double> times;
    times.reserve(static_cast<size_t>(g_repeats));
    fn();  // warm up
    for (int r = 0; r < g_repeats; ++r) {
        const auto t0 = Clock::now();
        fn();
        const auto t1 = Clock::now();
        times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    std::sort(times.begin(), times.end());
    return times[times.size() / 2];
}

void report(const std::string &name, double flops, double serial_s, double parallel_s,
            bool bitwise) {
    std::printf("%-28s %10.3f ms %10.3f ms   x%-5.2f %8.2f GFLOP/s  %s\n", name.c_str(),
                serial_s * 1e3, parallel_s * 1e3, serial_s / parallel_s,
                flops / parallel_s / 1e9, bitwise ? "bitwise-equal" : "MISMATCH");
}

void bench_matmul(int m, int k, int n, Rng &rng) {
    const std::vector<float> a = random_buf(static_cast<size_t>(m) * k, rng);
    const std::vector<float> b = random_buf(static_cast<size_t>(k) * n, rng);
    std::vector<float> c_ser(static_cast<size_t>(m) * n), c_par = c_ser;

    const double serial_s =
        median_seconds([&] { kernels::matmul_nn_serial(a.data(), b.data(), c_ser.data(), m, k, n); });
    const double parallel_s =
        median_seconds([&] { kernels::matmul_nn(a.data(), b.data(), c_par.data(), m, k, n); });
    const bool bitwise =
        std::memcmp(c_ser.data(), c_par.data(), c_ser.size() * sizeof(float)) == 0;
    report("matmul_nn " + std::to_string(m) + "x" + std::to_string(k) + "x" + std::to_string(n),
           2.0 * m * k * n, serial_s, parallel_s, bitwise);
}

void bench_conv2d(int batch, int ci, int h, int w, int co, int kk, int stride, Rng &rng) {
    const std::vector<float> in = random_buf(static_cast<size_t>(batch) * ci * h * w, rng);
    const std::vector<float> wt = random_buf(static_cast<size_t>(co) * ci * kk * kk, rng);
    const std::vector<float> bias = random_buf(static_cast<size_t>(co), rng);
    const int ho = (h - kk) / stride + 1, wo = (w - kk) / stride + 1;
    std::vector<float> out_ser(static_cast<size_t>(batch) * co * ho * wo), out_par = out_ser;

    const double serial_s = median_seconds([&] {
        kernels::conv2d_forward_serial(in.data(), wt.data(), bias.data(), out_ser.data(), batch,
                                       ci, h, w, co, kk, kk, stride);
    });
    const double parallel_s = median_seconds([&] {
        kernels::conv2d_forward(in.data(), wt.data(), bias.data(), out_par.data(), batch, ci, h,
                                w, co, kk, kk, stride);
    });
    const bool bitwise =
        std::memcmp(out_ser.data(), out_par.data(), out_ser.size() * sizeof(float)) == 0;
    report("conv2d b" + std::to_string(batch) + " " + std::to_string(ci) + "->" +
               std::to_string(co) + " " + std::to_string(h) + "x" + std::to_string(w),
           2.0 * batch * co * ho * wo * ci * kk * kk, serial_s, parallel_s, bitwise);
}

void bench_dwconv(int batch, int t, int c, int k, Rng &rng) {
    const std::vector<float> x = random_buf(static_cast<size_t>(batch) * t * c, rng);
    const std::vector<float> w = random_buf(static_cast<size_t>(c) * k, rng);
    const std::vector<float> bias = random_buf(static_cast<size_t>(c), rng);
    std::vector<float> out_ser(x.size()), out_par(x.size());

    const double serial_s = median_seconds([&] {
        kernels::dwconv1d_forward_serial(x.data(), w.data(), bias.data(), out_ser.data(), batch,
                                         t, c, k);
    });
    const double parallel_s = median_seconds([&] {
        kernels::dwconv1d_forward(x.data(), w.data(), bias.data(), out_par.data(), batch, t, c,
                                  k);
    });
    const bool bitwise =
        std::memcmp(out_ser.data(), out_par.data(), out_ser.size() * sizeof(float)) == 0;
    report("dwconv1d b" + std::to_string(batch) + " t" + std::to_string(t) + " c" +
               std::to_string(c) + " k" + std::to_string(k),
           2.0 * batch * t * c * k, serial_s, parallel_s, bitwise);
}

}  // namespace

int main(int argc, char **argv) {
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--repeats" && i + 1 < argc) {
            g_repeats = std::max(1, std::atoi(argv[++i]));
        } else if (arg == "--threads" && i + 1 < argc) {
#ifdef _OPENMP
            omp_set_num_threads(std::max(1, std::atoi(argv[++i])));
#else
            ++i;
#endif
        } else {
            std::cerr << "usage: bench_kernels [--repeats N] [--threads N]\n";
            return 1;
        }
    }

#ifdef _OPENMP
    std::printf("OpenMP: %d threads\n", omp_get_max_threads());
#else
    std::printf("OpenMP: disabled at build time\n");
#endif
    std::printf("%-28s %13s %13s   %-6s %10s\n", "kernel", "serial", "parallel", "speedup",
                "rate");

    Rng rng(42);
    bench_matmul(64, 64, 64, rng);
    bench_matmul(256, 256, 256, rng);
    bench_matmul(512, 512, 512, rng);
    bench_conv2d(8, 1, 200, 40, 32, 3, 2, rng);
    bench_conv2d(8, 32, 99, 19, 32, 3, 2, rng);
    bench_dwconv(8, 200, 256, 15, rng);
    return 0;
}
