#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace dk::util {

// xoshiro256** with splitmix64 seeding. Self-contained so that streams are
// reproducible across compilers and the full state (four words) can be
// serialized into checkpoints.
class Rng {
public:
    using State = std::array<std::uint64_t, 4>;

    Rng() : Rng(0x9e3779b97f4a7c15ull) {}

    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& word : s_) {
            // splitmix64
            x += 0x9e3779b97f4a7c15ull;
            std::uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
            word = z ^ (z >> 31);
        }
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). Fixed algorithm, not std::uniform_int_distribution,
    // so sequences are stable everywhere.
    std::uint64_t bounded(std::uint64_t n) {
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via Box-Muller (cosine branch only; no cached spare, so
    // the state alone fully describes the stream).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Derive an independent child stream; used to split one run seed into
    // per-purpose streams (init, shuffle, dropout, fixtures).
    Rng split(std::uint64_t stream_tag) {
        return Rng(next_u64() ^ (stream_tag * 0xd1342543de82ef95ull + 0x2545f4914f6cdd1dull));
    }

    // Fisher-Yates permutation of 0..n-1.
    std::vector<std::uint32_t> permutation(std::uint32_t n) {
        std::vector<std::uint32_t> p(n);
        for (std::uint32_t i = 0; i < n; ++i) p[i] = i;
        for (std::uint32_t i = n; i > 1; --i) {
            const auto j = static_cast<std::uint32_t>(bounded(i));
            std::swap(p[i - 1], p[j]);
        }
        return p;
    }

    State state() const { return s_; }
    void set_state(const State& s) { s_ = s; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    State s_{};
};

}  // namespace dk::util
