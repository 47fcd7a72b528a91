#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace koel {

// All recoverable failures surface as KoelError with a descriptive message.
class KoelError : public std::runtime_error {
  public:
    explicit KoelError(const std::string &msg) : std::runtime_error(msg) {}
};

template <typename... Args>
[[noreturn]] void fail(Args &&...parts) {
    std::ostringstream os;
    (os << ... << parts);
    throw KoelError(os.str());
}

template <typename... Args>
void check(bool cond, Args &&...parts) {
    if (!cond) fail(std::forward<Args>(parts)...);
}

// Deterministic RNG, passed explicitly wherever randomness is needed.
// Transforms are hand-rolled so streams do not depend on the standard
// library's distribution implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed = 0) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    int uniform_int(int n) {
        return n <= 1 ? 0 : static_cast<int>(uniform() * n);
    }

    // standard normal via Box-Muller, one value per call pair
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u = 1.0 - uniform();
        const double v = uniform();
        const double r = std::sqrt(-2.0 * std::log(u));
        const double a = 6.283185307179586 * v;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // derive an independent child stream
    Rng fork() { return Rng(next_u64() ^ 0x9e3779b97f4a7c15ull); }

    std::string save_state() const {
        std::ostringstream os;
        os << engine_ << " " << (have_spare_ ? 1 : 0) << " " << spare_;
        return os.str();
    }

    void load_state(const std::string &s) {
        std::istringstream is(s);
        int flag = 0;
        is >> engine_ >> flag >> spare_;
        check(!is.fail(), "Rng: malformed saved state");
        have_spare_ = flag != 0;
    }

  private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace koel
