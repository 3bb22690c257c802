#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace rnm {

// SplitMix64 used in counter mode: the i-th output is finalize(key + i*GAMMA).
// Counter-based so that streams are pure functions of (key, counter) and seeds
// stay portable across platforms and thread schedules.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t key) : key_(key) {}

    std::uint64_t next_u64() {
        std::uint64_t z = key_ + (++counter_) * kGamma;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; the second variate of each pair is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // u1 in (0, 1] so the log is finite.
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Deterministic sub-stream keys: derive(k, s) != derive(k, s') for s != s'
    // with overwhelming probability, and chaining gives multi-index streams.
    static std::uint64_t derive(std::uint64_t key, std::uint64_t stream) {
        std::uint64_t z = key + kGamma;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z ^= stream * 0x9FB21C651E98DF25ULL + 0x2545F4914F6CDD1DULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    template <typename... Rest>
    static std::uint64_t derive(std::uint64_t key, std::uint64_t stream, Rest... rest) {
        return derive(derive(key, stream), rest...);
    }

private:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace rnm
