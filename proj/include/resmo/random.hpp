#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <utility>

namespace resmo {

/// Seeded generator used for every random decision in the project
/// (initialization, shuffles, dropout masks, synthetic data).
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Distributions are derived here rather than through <random>
/// distributions (whose algorithms are implementation-defined), so a given
/// seed reproduces the same values with any conforming toolchain:
///   - uniform():  top 53 bits of one draw times 2^-53, in [0, 1)
///   - below(n):   rejection sampling on one draw, unbiased in [0, n)
///   - normal():   Box-Muller on two uniform() draws, no cached spare
///   - shuffle():  Fisher-Yates from the last element down, using below()
class Rng
{
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t below(std::uint64_t n)
    {
        if (n <= 1)
            return 0;
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = engine_();
            if (r >= threshold)
                return r % n;
        }
    }

    double normal()
    {
        const double u1 = 1.0 - uniform(); // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <typename T>
    void shuffle(std::span<T> items)
    {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

} // namespace resmo
