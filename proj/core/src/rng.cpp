#include "muscl/rng.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace muscl {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : s_) s = splitmix64(x);
}

Rng Rng::substream(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
    std::uint64_t x = seed;
    std::uint64_t mixed = splitmix64(x);
    for (std::uint64_t id : ids) {
        x = mixed ^ (id + 0x9e3779b97f4a7c15ull);
        mixed = splitmix64(x);
    }
    return Rng(mixed);
}

std::uint64_t Rng::next_u64() {
    std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::size_t Rng::uniform_index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::uniform_index: n must be > 0");
    // rejection sampling on the top bits to stay unbiased
    std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1, u2;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

double Rng::gamma(double shape) {
    if (!(shape > 0.0))
        throw std::invalid_argument("Rng::gamma: shape must be > 0, got " + std::to_string(shape));
    if (shape < 1.0) {
        double u;
        do {
            u = uniform();
        } while (u <= 0.0);
        return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        double u = uniform();
        double x2 = x * x;
        if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
    }
}

double Rng::beta(double a, double b) {
    double x = gamma(a);
    double y = gamma(b);
    double s = x + y;
    if (s <= 0.0) return 0.5;  // both gammas underflowed to 0 (astronomically small params)
    return x / s;
}

std::vector<std::size_t> Rng::sample_without_replacement(std::size_t n, std::size_t k) {
    if (k > n)
        throw std::invalid_argument("sample_without_replacement: k=" + std::to_string(k) +
                                    " > n=" + std::to_string(n));
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + uniform_index(n - i);
        std::swap(pool[i], pool[j]);
        out.push_back(pool[i]);
    }
    return out;
}

double beta_sample(double alpha, double beta, Rng& rng) {
    if (!(alpha > 0.0) || !(beta > 0.0))
        throw std::invalid_argument("beta_sample: parameters must be positive, got alpha=" +
                                    std::to_string(alpha) + " beta=" + std::to_string(beta));
    return rng.beta(alpha, beta);
}

}  // namespace muscl
