#pragma once

// Seeded xoshiro256++ with Gaussian draws via Box-Muller. The generator and
// the uniform->normal transform are fixed here so identical seeds give
// identical streams everywhere the artifact runs.

#include <cmath>
#include <cstdint>

#include "liera/error.hpp"
#include "liera/tensor.hpp"

namespace liera {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& s : s_) s = splitmix64(sm);
    }

    // Independent stream for (seed, stream) pairs, e.g. per-trial seeds.
    static Rng derive(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t sm = seed;
        const std::uint64_t a = splitmix64(sm);
        sm ^= stream * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL;
        return Rng(a ^ splitmix64(sm));
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in (0, 1]; never zero, so ln(u) below is safe.
    double next_uniform() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

    // Standard normal; Box-Muller, exactly two uniforms per pair of samples.
    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = next_uniform();
        const double u2 = next_uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool have_spare_ = false;
};

template <typename S>
Tensor<S> gaussian(const Shape& shape, double mean, double stddev, Rng& rng) {
    if (!std::isfinite(mean) || !std::isfinite(stddev)) throw NumericError("gaussian: non-finite mean/stddev");
    if (stddev <= 0.0) throw NumericError("gaussian: stddev must be positive");
    Tensor<S> t(shape);
    for (std::uint64_t i = 0; i < t.numel(); ++i)
        t[i] = static_cast<S>(mean + stddev * rng.next_gaussian());
    return check_finite(t, "gaussian");
}

} // namespace liera
