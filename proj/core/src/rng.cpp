#include "sphere_ssm/rng.hpp"

#include <cmath>

namespace sphere_ssm {

namespace {
// splitmix64 finalizer; good avalanche for stream derivation.
std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}
} // namespace

Rng Rng::derive(std::uint64_t stream) const {
    return Rng(mix(seed_ ^ mix(stream + 0x51ed2701)));
}

double Rng::normal() {
    if (have_cached_) {
        have_cached_ = false;
        return cached_;
    }
    // Box-Muller; u1 in (0,1] so log is finite.
    double u1 = 1.0 - uniform01();
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
}

double Rng::truncated_normal(double sigma) {
    for (;;) {
        double x = normal();
        if (x >= -2.0 && x <= 2.0) return sigma * x;
    }
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
    if (n == 0) return 0;
    // Rejection below the largest multiple of n (unbiased).
    std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % n);
    for (;;) {
        std::uint64_t x = eng_();
        if (x < limit) return x % n;
    }
}

} // namespace sphere_ssm
