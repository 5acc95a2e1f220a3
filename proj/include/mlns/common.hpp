#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mlns {

inline constexpr const char* kVersion = "1.0.0";

// Thrown when a forward pass produces a non-finite activation. Carries the
// layer index so sweeps can record where the run blew up.
class divergence_error : public std::runtime_error {
public:
    divergence_error(int layer, const std::string& what)
        : std::runtime_error(what), layer_(layer) {}
    int layer() const { return layer_; }

private:
    int layer_;
};

class config_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class io_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Derive an independent stream seed from (seed, stream id).
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream));
}

// Deterministic random stream. mt19937_64's output sequence is pinned by the
// standard; the uniform/normal transforms are written out here instead of
// using std::*_distribution, whose mappings are implementation-defined.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1)
    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // standard normal via Box-Muller; two uniforms per draw, no caching
    double normal() {
        double u1 = static_cast<double>((eng_() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // index in [0, bound)
    size_t index(size_t bound) { return static_cast<size_t>(eng_() % bound); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
};

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

}  // namespace mlns
