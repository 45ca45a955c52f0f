#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>

namespace techembed {

/// 64-bit FNV-1a. Used wherever a platform-independent hash is required.
constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t seed = 1469598103934665603ULL) {
    std::uint64_t h = seed;
    for (const char c : bytes) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and a label.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label,
                                 std::uint64_t index = 0) {
    return splitmix64(base ^ fnv1a64(label) ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

/// Seeded generator whose outputs are identical on every platform.
///
/// The standard distributions are implementation-defined, so sampling is
/// done by hand on top of mt19937_64 (whose sequence is fixed by the standard).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_index(std::uint64_t n) { return engine_() % n; }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller.
    double normal();

    template <typename Vec>
    void shuffle(Vec& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_index(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Hex rendering of a 64-bit value, zero padded to 16 digits.
std::string to_hex(std::uint64_t v);

/// Reads a whole file as bytes. Throws Error when the file cannot be opened.
std::string read_file(const std::filesystem::path& path);

/// Writes bytes to a file, creating parent directories as needed.
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace techembed
