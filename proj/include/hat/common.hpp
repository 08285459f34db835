#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hat {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad arguments / invalid domain objects.
struct ValidationError : Error {
    using Error::Error;
};

// Tensor shape mismatches.
struct DimensionError : Error {
    using Error::Error;
};

// File format / missing artifact problems.
struct IoError : Error {
    using Error::Error;
};

// Non-finite loss during training.
struct DivergenceError : Error {
    using Error::Error;
};

// No architecture in the space satisfies the latency constraint.
struct InfeasibleConstraintError : Error {
    using Error::Error;
};

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Deterministic random source. All draws are implemented on top of the raw
// mt19937_64 output stream so results do not depend on standard-library
// distribution internals.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, n), rejection-sampled to avoid modulo bias.
    std::uint64_t next_below(std::uint64_t n) {
        if (n == 0) throw ValidationError("Rng::next_below: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    // Inclusive bounds.
    int uniform_int(int lo, int hi) {
        if (hi < lo) throw ValidationError("Rng::uniform_int: empty range");
        return lo + static_cast<int>(next_below(static_cast<std::uint64_t>(hi - lo) + 1));
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform_real() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform_real(); }

    bool bernoulli(double p) { return uniform_real() < p; }

    template <class T>
    const T& pick(const std::vector<T>& v) {
        if (v.empty()) throw ValidationError("Rng::pick: empty choice list");
        return v[static_cast<std::size_t>(next_below(v.size()))];
    }

  private:
    std::mt19937_64 gen_;
};

// Named derived stream: every pipeline stage draws from its own child so
// adding draws to one stage never shifts another.
inline Rng derive_rng(std::uint64_t seed, std::string_view tag) {
    return Rng(splitmix64(seed ^ fnv1a64(tag)));
}

}  // namespace hat
