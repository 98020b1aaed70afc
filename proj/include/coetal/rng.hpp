#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace coetal {

// 64-bit FNV-1a. Used for string-keyed embeddings, config hashes and
// file checksums; must stay byte-stable across platforms.
inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Deterministic random source. Deliberately avoids <random> distributions,
// whose output differs between standard library implementations; everything
// here is specified down to the bit so seeded runs are reproducible anywhere.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : root_(seed), state_(seed) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // unbiased integer in [0, n), n >= 1 (rejection sampling)
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // standard normal via Box-Muller; consumes two draws per call
    double normal() {
        const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; // (0, 1]
        const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;         // [0, 1)
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Independent stream derived from the root seed and a tag, not from the
    // current state; lets validation sampling run without perturbing the
    // training stream.
    Rng child(std::string_view tag) const {
        std::uint64_t s = root_ ^ (fnv1a64(tag) * 0x9e3779b97f4a7c15ull);
        return Rng(splitmix64(s));
    }

    std::uint64_t root_seed() const { return root_; }

  private:
    std::uint64_t root_;
    std::uint64_t state_;
};

} // namespace coetal
