#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace textlearn {

// Error taxonomy. Shape/value/index/input errors signal bad call arguments or
// bad user data; contract errors signal misuse of an API's stated protocol;
// numeric errors signal NaN/Inf escaping a computation; io errors cover file
// parsing and (de)serialization.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ValueError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct IndexError : std::out_of_range {
    using std::out_of_range::out_of_range;
};
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// splitmix64 finalizer; used to derive well-mixed child seeds.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and up to two indices
/// (grid point, repetition, fold, ...). Mixing avoids collisions between
/// index combinations that a plain XOR would alias.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    return mix64(mix64(base ^ mix64(a + 1)) ^ mix64(b + 0x51ed2701));
}

// Deterministic RNG wrapper. All draws go through explicit, documented
// constructions (53-bit uniforms, Box-Muller gaussians, Lemire bounded ints)
// so traces are reproducible for a given seed independent of the standard
// library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform double in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    std::size_t uniform_index(std::size_t n) {
        if (n == 0) throw ValueError("uniform_index: n must be positive");
        using u128 = unsigned __int128;
        return static_cast<std::size_t>((u128(gen_()) * u128(n)) >> 64);
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller with a cached spare.
    double gaussian(double mean = 0.0, double stddev = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + stddev * spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return mean + stddev * r * std::cos(theta);
    }

    /// Fisher-Yates shuffle.
    template <class T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[uniform_index(i)]);
        }
    }

    /// Independent child stream.
    Rng split(std::uint64_t stream) { return Rng(derive_seed(gen_(), stream)); }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace textlearn
