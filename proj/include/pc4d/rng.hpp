#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace pc4d {

// Deterministic RNG used everywhere. std::mt19937_64 has a fully specified
// output sequence; the distributions below are hand-rolled because the
// stdlib distribution algorithms are implementation-defined and would break
// bit-reproducibility across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // uniform in [0,1)
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller, one spare cached
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // uniform integer in [0, n)
    std::uint64_t integer(std::uint64_t n) {
        if (n == 0) return 0;
        std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % n);
        std::uint64_t x = eng_();
        while (x >= limit) x = eng_();
        return x % n;
    }

    // derive an independent stream; splitmix on (seed, stream id)
    Rng fork(std::uint64_t stream) {
        std::uint64_t z = eng_() + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return Rng(z ^ (z >> 31));
    }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace pc4d
