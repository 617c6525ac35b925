#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <sstream>
#include <string>

#include "cpbayes/errors.hpp"

namespace cpbayes {

/// All randomness flows through a single engine type so that chains are
/// reproducible and checkpoints can capture the exact generator state.
using Rng = std::mt19937_64;

/// Standard normal draw.  A fresh distribution object is used per call so
/// the engine state alone determines the stream (distributions may cache).
inline double draw_normal(Rng& rng) {
    return std::normal_distribution<double>{0.0, 1.0}(rng);
}

/// Uniform draw on [0, 1).
inline double draw_uniform(Rng& rng) {
    return std::uniform_real_distribution<double>{0.0, 1.0}(rng);
}

/// Uniform integer draw on {0, ..., n - 1}.
inline std::int64_t draw_index(Rng& rng, std::int64_t n) {
    if (n <= 0) throw structural_error("draw_index: n must be positive");
    return std::uniform_int_distribution<std::int64_t>{0, n - 1}(rng);
}

/// splitmix64 step, used to derive independent child seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Mixes a master seed with a list of stream identifiers (chain index,
/// setting id, repetition, ...) into a well-separated child seed.
inline std::uint64_t derive_seed(std::uint64_t master,
                                 std::initializer_list<std::uint64_t> parts) {
    std::uint64_t state = master;
    std::uint64_t out = splitmix64(state);
    for (std::uint64_t p : parts) {
        state ^= p + 0x9e3779b97f4a7c15ULL + (state << 6) + (state >> 2);
        out = splitmix64(state);
    }
    return out;
}

/// Serializes the full engine state as a hex token (stable across runs of
/// the same standard library; round-trips bit-exactly).
inline std::string rng_to_hex(const Rng& rng) {
    std::ostringstream text;
    text << rng;
    std::string raw = text.str();
    static const char* digits = "0123456789abcdef";
    std::string hex;
    hex.reserve(2 * raw.size());
    for (unsigned char c : raw) {
        hex.push_back(digits[c >> 4]);
        hex.push_back(digits[c & 0xf]);
    }
    return hex;
}

inline Rng rng_from_hex(const std::string& hex) {
    if (hex.size() % 2 != 0) throw io_error("rng token: odd hex length");
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        throw io_error("rng token: invalid hex digit");
    };
    std::string raw;
    raw.reserve(hex.size() / 2);
    for (std::size_t i = 0; i < hex.size(); i += 2) {
        raw.push_back(static_cast<char>((nibble(hex[i]) << 4) | nibble(hex[i + 1])));
    }
    std::istringstream text(raw);
    Rng rng;
    text >> rng;
    if (text.fail()) throw io_error("rng token: unparsable engine state");
    return rng;
}

}  // namespace cpbayes
