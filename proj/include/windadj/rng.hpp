#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace windadj {

/// Derive a child seed from a root seed, a purpose tag, and an index.
/// Mixing is splitmix64 over (root, fnv1a(tag), index), so every
/// (tag, index) pair owns an independent, reproducible stream and results
/// do not depend on thread count or evaluation order.
std::uint64_t seed_for(std::uint64_t root, std::string_view tag, std::uint64_t index);

/// Percent-point function (inverse CDF) of the standard normal,
/// Wichura's PPND16 rational approximation (~1e-15 absolute accuracy).
/// p must lie in (0,1).
double normal_inv_cdf(double p);

/// Deterministic random stream: std::mt19937_64 raw bits, with all
/// variate mappings implemented here (not via std::*_distribution, whose
/// algorithms vary across standard libraries).
class RngStream {
  public:
    explicit RngStream(std::uint64_t seed) : eng_(seed) {}

    /// Uniform on [0,1): top 53 bits scaled by 2^-53.
    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    /// Uniform on (0,1), strictly interior (safe for inverse-CDF sampling).
    double uniform_open() {
        return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via inverse CDF.
    double normal() { return normal_inv_cdf(uniform_open()); }

    /// Gamma(shape, rate) via Marsaglia–Tsang squeeze (boosted for shape < 1).
    double gamma(double shape, double rate);

    /// Uniform integer in [0, n), n >= 1, by rejection on the high bits.
    std::uint64_t uniform_below(std::uint64_t n);

    /// Fisher–Yates shuffle (stable across standard libraries).
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    /// k distinct indices from [0, n), in random order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

    std::mt19937_64& engine() { return eng_; }

  private:
    std::mt19937_64 eng_;
};

}  // namespace windadj
