#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace vseg {

// All randomness in a run flows from one master seed, split into independent
// streams keyed by purpose ("sampling", "init", "augment", "attack_noise", ...).
class RngPool {
public:
    explicit RngPool(std::uint64_t seed) : seed_(seed) {}

    std::mt19937_64 stream(std::string_view purpose) const {
        return std::mt19937_64(seed_ ^ fnv1a(purpose));
    }

    std::uint64_t seed() const { return seed_; }

    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (char ch : s) {
            h ^= static_cast<unsigned char>(ch);
            h *= 0x100000001b3ULL;
        }
        return h;
    }

private:
    std::uint64_t seed_;
};

inline int uniform_int(std::mt19937_64& g, int lo, int hi) {  // inclusive bounds
    std::uniform_int_distribution<int> d(lo, hi);
    return d(g);
}

inline double uniform_real(std::mt19937_64& g, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(g);
}

}  // namespace vseg
