#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace fedci {

// Splitmix64-based generator. std:: distributions are implementation-defined,
// so everything that must be reproducible across toolchains goes through this.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n), unbiased enough for shuffles and masks at our scales
    int64_t uniform_int(int64_t n) {
        return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
    }

    double normal() {
        if (has_cached_) {
            has_cached_ = false;
            return cached_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return r * std::cos(a);
    }

    template <class Vec>
    void shuffle(Vec& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            int64_t j = uniform_int(i + 1);
            std::swap(v[i], v[j]);
        }
    }

private:
    uint64_t state_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

// Derives independent, named RNG streams from one experiment seed.
inline uint64_t mix_seed(uint64_t seed, std::string_view stream, uint64_t id = 0) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : stream) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    h ^= seed + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h ^= id * 0xd1342543de82ef95ULL + 1;
    // one splitmix round to decorrelate nearby ids
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
    return h ^ (h >> 31);
}

}  // namespace fedci
