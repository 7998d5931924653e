// Shared error types, deterministic RNG helpers, and small numeric utilities.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace asyppo {

inline constexpr const char* kVersion = "0.1.0";

// Bad user-supplied configuration (file keys, ranges, incompatible knobs).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dimension mismatch between an input and what a network/table expects.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A caller violated an API contract (stepping a done state, stale record, ...).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite losses/ratios detected mid-training.
struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// splitmix64; used to derive independent seed streams from (seed, tags...).
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t seed_stream(std::uint64_t seed) { return mix64(seed); }

template <typename... Tags>
std::uint64_t seed_stream(std::uint64_t seed, std::uint64_t tag, Tags... rest) {
  return seed_stream(mix64(seed ^ mix64(tag)), rest...);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed_stream(seed)); }

template <typename... Tags>
Rng make_rng(std::uint64_t seed, std::uint64_t tag, Tags... rest) {
  return Rng(seed_stream(seed, tag, rest...));
}

// Uniform double in [0, 1). Hand-scaled from the raw 64-bit draw so the
// sequence is identical across standard library implementations.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

// Uniform integer in [0, n). n must be > 0.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  // Multiply-shift rejection-free mapping; bias is < 2^-53 for desk-scale n.
  return static_cast<std::uint64_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

// Fisher-Yates with our own index draws, deterministic across platforms.
template <typename T>
void shuffle_inplace(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace asyppo
