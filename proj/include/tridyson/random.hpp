#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace tridyson {

using Rng = std::mt19937_64;

// Independent stream for (seed, stream); replicas use stream = replica index.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      0x9e3779b9u};
    return Rng(seq);
}

inline double standard_normal(Rng& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    return d(rng);
}

// chi with nu degrees of freedom, as the square root of a Gamma(nu/2, scale 2) variate.
inline double chi(double nu, Rng& rng) {
    std::gamma_distribution<double> g(nu / 2.0, 2.0);
    return std::sqrt(g(rng));
}

}  // namespace tridyson
