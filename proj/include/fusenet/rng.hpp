#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace fusenet {

// Deterministic random source. mt19937_64 gives a portable bit stream; the
// variate transforms are hand-rolled because the standard distributions are
// not pinned down across library implementations, and reproducibility of
// every emitted number is part of the contract.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : seed_(seed), eng_(seed) {}

    std::uint64_t bits() { return eng_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller; the second variate of each pair is cached.
    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_normal_;
        }
        double u1 = uniform();
        while (u1 == 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
        cached_normal_ = r * std::sin(theta);
        has_cached_ = true;
        return r * std::cos(theta);
    }

    // Uniform index in [0, n), rejection-sampled to avoid modulo bias.
    std::size_t index(std::size_t n) {
        if (n == 0) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = eng_();
        while (x >= limit) x = eng_();
        return static_cast<std::size_t>(x % n);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

    // Derived stream: same (seed, tag) always yields the same child. Used to
    // give init / dropout / batching / moddrop their own independent streams.
    Rng child(std::string_view tag) const { return Rng(mix(seed_, tag)); }

    // splitmix64 finalizer over an FNV-1a hash of the tag, folded into seed.
    static std::uint64_t mix(std::uint64_t seed, std::string_view tag) {
        std::uint64_t h = 1469598103934665603ull;
        for (const char c : tag) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ull;
        }
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ull + h;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

  private:
    std::uint64_t seed_;
    std::mt19937_64 eng_;
    double cached_normal_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace fusenet
