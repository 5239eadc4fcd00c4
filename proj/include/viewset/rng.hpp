#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace viewset {

// Deterministic random source. All randomness in the project flows from one
// master seed through named substreams (e.g. "data", "init", "dropout",
// "view-perm") so that two runs with the same seed are bitwise identical and
// ablations share every stream except the one under study. Distributions are
// implemented here rather than via std:: distributions, which are
// implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    static Rng substream(std::uint64_t seed, std::string_view name);

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0,1) with 53 bits of mantissa.
    double uniform01();

    double uniform(double lo, double hi);

    // Standard normal via Box-Muller; one spare value is cached.
    double normal();

    // Uniform index in [0,n). n must be positive.
    std::size_t index(std::size_t n);

    std::vector<std::size_t> permutation(std::size_t n);

    // k distinct indices drawn uniformly from [0,n), in draw order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace viewset
