#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace sphere_ssm {

// Deterministic, platform-portable RNG. std::mt19937_64 output is pinned by the
// standard; the std <random> *distributions* are implementation-defined, so all
// transformations (uniform, normal, bounded int, shuffle) are implemented here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed), seed_(seed) {}

    // Independent child stream: hashing (seed, stream) avoids overlap without
    // needing jump-ahead.
    Rng derive(std::uint64_t stream) const;

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0,1) with 53 random bits.
    double uniform01() { return double(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Standard normal via Box-Muller (second value cached).
    double normal();

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    // Normal(0, sigma) rejected outside [-2 sigma, 2 sigma].
    double truncated_normal(double sigma);

    // Uniform integer in [0, n) by rejection (unbiased, portable).
    std::uint64_t uniform_int(std::uint64_t n);

    // Fisher-Yates; permutes idx in place.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = std::size_t(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::uint64_t seed_used() const { return seed_; }

private:
    std::mt19937_64 eng_;
    std::uint64_t seed_ = 0;
    bool have_cached_ = false;
    double cached_ = 0.0;
};

} // namespace sphere_ssm
