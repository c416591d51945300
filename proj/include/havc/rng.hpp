#pragma once

// Portable pseudo-random source for the synthetic generators.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. The std:: distributions are implementation-defined, so every
// derived quantity is computed here from raw 64-bit draws:
//   uniform01()     = (x >> 11) * 2^-53                       in [0, 1)
//   below(n)        = rejection sampling on x to remove modulo bias
//   normal()        = Box-Muller on two uniform01() draws (first output only)
// Child streams are seeded with splitmix64(seed ^ splitmix64(stream_id)) so
// record i of a corpus does not depend on how many draws record i-1 used.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace havc {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

    /// Independent stream keyed by (seed, stream_id).
    static Rng stream(std::uint64_t seed, std::uint64_t stream_id)
    {
        return Rng(seed ^ splitmix64(stream_id + 0x5eed));
    }

    std::uint64_t next() { return engine_(); }

    double uniform01() { return double(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n)
    {
        if (n <= 1) return 0;
        const std::uint64_t limit = std::uint64_t(-1) - (std::uint64_t(-1) % n);
        std::uint64_t x;
        do {
            x = next();
        } while (x >= limit);
        return x % n;
    }

    /// Uniform integer in [lo, hi].
    std::int64_t between(std::int64_t lo, std::int64_t hi)
    {
        return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    double normal()
    {
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();
        const double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::mt19937_64 engine_;
};

} // namespace havc
