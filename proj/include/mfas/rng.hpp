#pragma once
// Counter-based random streams. Every draw is a pure function of
// (seed, counter), so sequences are identical across platforms and runs;
// std::random distributions are implementation-defined and deliberately
// not used anywhere.

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace mfas {

// SplitMix64 finalizer, used as the mixing function for all streams.
inline std::uint64_t mix_bits(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t hash_tag(std::string_view tag) {
    // FNV-1a
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64() { return mix_bits(seed_ ^ mix_bits(++counter_)); }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller. Consumes two draws, returns one value;
    // no cached second value so the state stays (seed, counter) only.
    double next_gaussian() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t next_below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // Independent child stream identified by a tag; does not consume draws,
    // so derivation order cannot perturb the parent sequence.
    RngStream derive(std::string_view tag) const {
        return RngStream(mix_bits(seed_ ^ hash_tag(tag)));
    }
    RngStream derive(std::uint64_t tag) const {
        return RngStream(mix_bits(seed_ ^ mix_bits(tag ^ 0x5851f42d4c957f2dull)));
    }

    // Child stream seeded from the next draw (advances the parent).
    RngStream split() { return RngStream(next_u64()); }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

template <typename T>
void shuffle(std::vector<T>& items, RngStream& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.next_below(i));
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace mfas
