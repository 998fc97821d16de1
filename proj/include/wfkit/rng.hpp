#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace wfkit {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace detail

/// Derives an independent stream seed from a base seed and up to two stream
/// indices. Used so that per-trace / per-fold / per-epoch RNG streams never
/// overlap: stream(seed, i) and stream(seed, j) are unrelated for i != j.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t s = detail::splitmix64(base);
    s = detail::splitmix64(s ^ detail::splitmix64(a ^ 0x5851f42d4c957f2dULL));
    s = detail::splitmix64(s ^ detail::splitmix64(b ^ 0x14057b7ef767814fULL));
    return s;
}

/// Deterministic random stream. mt19937_64 is fully specified by the standard,
/// and the distribution transforms below are hand-written, so identical seeds
/// give identical draws on every platform and standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    Rng(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0)
        : engine_(derive_seed(base, a, b)) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

    /// Uniform integer in [lo, hi], inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(engine_() % span);
    }

    /// Rayleigh(scale) via inverse CDF.
    double rayleigh(double scale) {
        const double u = uniform(); // in [0,1)
        return scale * std::sqrt(-2.0 * std::log1p(-u));
    }

    /// Standard normal via Box-Muller (one draw per pair of uniforms).
    double normal() {
        double u1 = uniform();
        const double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Log-normal with the given log-space parameters; median = exp(mu).
    double lognormal(double mu, double sigma) { return std::exp(normal(mu, sigma)); }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

} // namespace wfkit
