#include "hali/rng.hpp"

#include <cmath>

namespace hali {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

SeededRng::SeededRng(uint64_t seed, uint64_t stream) {
    inc_ = (splitmix64(stream ^ 0xda3e39cb94b95bdbULL) << 1u) | 1u;
    state_ = 0;
    next_u32();
    state_ += splitmix64(seed);
    next_u32();
}

uint32_t SeededRng::next_u32() {
    uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
    uint32_t rot = static_cast<uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
}

uint64_t SeededRng::next_u64() {
    uint64_t hi = next_u32();
    uint64_t lo = next_u32();
    return (hi << 32) | lo;
}

double SeededRng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

float SeededRng::next_float() {
    return static_cast<float>(next_u32() >> 8) * 0x1.0p-24f;
}

float SeededRng::normal() {
    double u1;
    do {
        u1 = next_double();
    } while (u1 <= 0.0);
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    return static_cast<float>(r * std::cos(2.0 * 3.14159265358979323846 * u2));
}

void SeededRng::fill_normal(std::span<float> out, float mean, float stddev) {
    for (float& v : out) v = mean + stddev * normal();
}

void SeededRng::fill_uniform(std::span<float> out, float lo, float hi) {
    for (float& v : out) v = lo + (hi - lo) * next_float();
}

uint32_t SeededRng::below(uint32_t n) {
    // rejection sampling over the top of the range keeps this unbiased
    uint32_t threshold = (0u - n) % n;
    for (;;) {
        uint32_t r = next_u32();
        if (r >= threshold) return r % n;
    }
}

} // namespace hali
