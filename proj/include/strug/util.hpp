#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>

namespace strug {

/// 64-bit FNV-1a. Stable across platforms, used for content hashes and seed derivation.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

std::uint64_t splitmix64(std::uint64_t x);

/// Per-example RNG seed from (seed, epoch, example_id).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t epoch, std::string_view example_id);

std::string hex64(std::uint64_t v);

/// Portable random source. std::mt19937_64 output is fixed by the standard; the
/// std distributions are not, so the draws are done here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_index(std::uint64_t n);
    /// Uniform double in [0, 1).
    double uniform01();
    double normal(double mean, double stddev);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

std::string format_double(double v);

}  // namespace strug
