#include "rkld/rng.hpp"

#include <cmath>
#include <numbers>

namespace rkld {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

inline double to_unit(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32 | lo) >> 11;
    return static_cast<double>(bits) * 0x1.0p-53;
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kMul0, ctr[0], hi0, lo0);
        mulhilo(kMul1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t derive_key(std::uint64_t seed, std::uint64_t chain_id, Stream stream) {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ chain_id);
    return splitmix64(h ^ (static_cast<std::uint64_t>(stream) << 56));
}

std::array<std::uint32_t, 4> CounterRng::block(std::uint64_t step, std::uint32_t slot) const {
    return philox4x32({slot, static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32), 0u},
                      {static_cast<std::uint32_t>(key_), static_cast<std::uint32_t>(key_ >> 32)});
}

double CounterRng::uniform(std::uint64_t step, std::uint32_t slot) const {
    const auto b = block(step, slot);
    return to_unit(b[0], b[1]);
}

std::uint64_t CounterRng::below(std::uint64_t step, std::uint32_t slot, std::uint64_t bound) const {
    const auto b = block(step, slot);
    const std::uint64_t r = static_cast<std::uint64_t>(b[0]) << 32 | b[1];
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(r) * bound) >> 64);
}

void CounterRng::normals(std::uint64_t step, std::span<double> out) const {
    const std::size_t n = out.size();
    for (std::size_t pair = 0; 2 * pair < n; ++pair) {
        const auto b = block(step, static_cast<std::uint32_t>(pair));
        // u1 in (0, 1] keeps the logarithm finite.
        const double u1 = 1.0 - to_unit(b[0], b[1]);
        const double u2 = to_unit(b[2], b[3]);
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        out[2 * pair] = r * std::cos(theta);
        if (2 * pair + 1 < n) out[2 * pair + 1] = r * std::sin(theta);
    }
}

}  // namespace rkld
