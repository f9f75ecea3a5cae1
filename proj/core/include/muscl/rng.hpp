#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

namespace muscl {

/// xoshiro256** seeded through splitmix64. Identical seeds give bit-identical
/// streams on any platform (no libc distributions involved).
///
/// Independent sub-streams: substream(seed, {ids...}) folds each id through
/// splitmix64 before seeding, so (seed, video_index) and (seed, epoch, batch)
/// style derivations never collide with the base stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed);
    static Rng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> ids);

    std::uint64_t next_u64();

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform();
    double uniform(double lo, double hi);

    /// Unbiased integer in [0, n).
    std::size_t uniform_index(std::size_t n);

    /// Standard normal via Box-Muller (deterministic; one spare cached).
    double normal();

    /// Gamma(shape, 1) via Marsaglia-Tsang; shape < 1 handled by the
    /// Gamma(shape+1) boost. shape must be > 0.
    double gamma(double shape);

    /// Beta(a, b) as the ratio of two Gamma draws. a, b must be > 0.
    double beta(double a, double b);

    /// Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    /// k distinct indices from [0, n), in draw order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

private:
    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Draw from Beta(alpha, beta); throws std::invalid_argument on non-positive
/// parameters.
double beta_sample(double alpha, double beta, Rng& rng);

}  // namespace muscl
