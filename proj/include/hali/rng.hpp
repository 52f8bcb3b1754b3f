#pragma once

#include <cstdint>
#include <span>

namespace hali {

uint64_t splitmix64(uint64_t x);

// PCG32 with an explicit stream id. The whole generator state is two
// 64-bit words, so it serializes into checkpoints trivially and the
// sequence is reproducible for a given (seed, stream, call sequence).
class SeededRng {
public:
    explicit SeededRng(uint64_t seed = 0, uint64_t stream = 0);

    uint32_t next_u32();
    uint64_t next_u64();
    double next_double(); // uniform [0,1), 53-bit
    float next_float();   // uniform [0,1)

    // Standard normal via Box-Muller. Two uniforms are consumed per call;
    // nothing is cached, so the state stays a pure (state, inc) pair.
    float normal();
    void fill_normal(std::span<float> out, float mean = 0.0f, float stddev = 1.0f);
    void fill_uniform(std::span<float> out, float lo = 0.0f, float hi = 1.0f);

    // Uniform integer in [0, n), n > 0. Unbiased via rejection.
    uint32_t below(uint32_t n);

    struct State {
        uint64_t state = 0;
        uint64_t inc = 0;
    };
    State save() const { return {state_, inc_}; }
    void restore(const State& s) {
        state_ = s.state;
        inc_ = s.inc;
    }

private:
    uint64_t state_ = 0;
    uint64_t inc_ = 0;
};

} // namespace hali
