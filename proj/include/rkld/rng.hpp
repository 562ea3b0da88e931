#pragma once

// Counter-based random numbers (Philox4x32-10). A draw is a pure function of
// (key, step, slot), so chains can be replayed, resumed from a checkpoint, and
// coupled mode-by-mode across different truncation levels.

#include <array>
#include <cstdint>
#include <span>

namespace rkld {

enum class Stream : std::uint32_t {
    noise = 1,
    minibatch = 2,
    data = 3,
    init = 4,
};

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

std::uint64_t splitmix64(std::uint64_t x);

// Stream key for one chain; distinct (seed, chain_id, stream) triples give
// statistically independent streams.
std::uint64_t derive_key(std::uint64_t seed, std::uint64_t chain_id, Stream stream);

class CounterRng {
public:
    CounterRng() = default;
    explicit CounterRng(std::uint64_t key) : key_(key) {}

    std::uint64_t key() const { return key_; }

    // 128 random bits for (step, slot).
    std::array<std::uint32_t, 4> block(std::uint64_t step, std::uint32_t slot) const;

    // Uniform in [0, 1) with 53 random bits.
    double uniform(std::uint64_t step, std::uint32_t slot) const;

    // Integer in [0, bound) by 64-bit multiply-high.
    std::uint64_t below(std::uint64_t step, std::uint32_t slot, std::uint64_t bound) const;

    // i.i.d. standard normals for one step; out[k] depends only on (step, k).
    void normals(std::uint64_t step, std::span<double> out) const;

private:
    std::uint64_t key_ = 0;
};

}  // namespace rkld
