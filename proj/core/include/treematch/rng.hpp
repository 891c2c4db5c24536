#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace treematch {

// Deterministic 64-bit generator (splitmix64). Used everywhere randomness is
// needed so that outputs are reproducible across platforms and standard-library
// implementations; std::uniform_*_distribution is deliberately avoided.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t limit = ~0ull - (~0ull % n);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(below(n)); }

    template <typename T>
    void shuffle(std::span<T> items) {
        if (items.size() < 2) return;
        for (std::size_t i = items.size() - 1; i > 0; --i) {
            std::size_t j = index(i + 1);
            std::swap(items[i], items[j]);
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        shuffle(std::span<T>(items));
    }

    // Independent child stream; stable under call order at the parent.
    Rng fork() { return Rng(next_u64() ^ 0xa5a5a5a5deadbeefull); }

private:
    std::uint64_t state_;
};

// FNV-1a; stable alternative to std::hash for seeding from strings.
inline std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Derive a per-item seed from a base seed and a label (tensor name, resample
// index rendered as text, ...). Construction-order independent.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label) {
    Rng r(base ^ fnv1a64(label));
    return r.next_u64();
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    Rng r(base ^ (0x9e3779b97f4a7c15ull * (index + 1)));
    return r.next_u64();
}

}  // namespace treematch
