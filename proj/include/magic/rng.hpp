#pragma once

#include <cmath>
#include <cstdint>

namespace magic {

/// Deterministic, trivially serializable PRNG (splitmix64 core). Used instead
/// of <random> engines so that runs are bit-reproducible across standard
/// library versions and the whole state is two words.
class Rng {
public:
    explicit Rng(uint64_t seed = 0x9e3779b97f4a7c15ull) : state_(seed), calls_(0) {}

    uint64_t next_u64() {
        ++calls_;
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0,1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo,hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Integer in [0,n).
    uint64_t below(uint64_t n) { return next_u64() % n; }

    /// Standard normal via Box-Muller. No cached spare: state stays two words.
    double gaussian() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    uint64_t state() const { return state_; }
    uint64_t calls() const { return calls_; }
    void restore(uint64_t state, uint64_t calls) {
        state_ = state;
        calls_ = calls;
    }

    /// Derive an independent stream (for per-component seeding).
    Rng fork(uint64_t salt) {
        uint64_t s = next_u64() ^ (salt * 0xda942042e4dd58b5ull);
        return Rng(s);
    }

private:
    uint64_t state_;
    uint64_t calls_;
};

}  // namespace magic
