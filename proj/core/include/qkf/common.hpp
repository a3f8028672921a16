#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace qkf {

// Vector norms below this are treated as zero (cosine and friends reject them).
inline constexpr double kZeroNormEps = 1e-12;

/// Seeded 64-bit token hash (FNV-1a core with a final avalanche mix).
/// Stable across platforms; the basis for every hashed-feature lookup.
std::uint64_t hash64(std::string_view data, std::uint64_t seed);

/// Splits on runs of ASCII whitespace. No empty tokens are produced.
std::vector<std::string> split_whitespace(std::string_view text);

/// Joins tokens with single spaces (inverse of split_whitespace for
/// canonical single-spaced text).
std::string join_tokens(const std::vector<std::string>& tokens,
                        std::size_t begin, std::size_t end);

/// Deterministic uniform doubles on top of mt19937_64. The standard
/// distributions are implementation-defined, so the mapping from raw bits
/// to [0,1) is done by hand to keep outputs identical everywhere.
class DetRng {
 public:
  explicit DetRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double next_double() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // [0, n)
  std::size_t next_index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("DetRng::next_index: n == 0");
    return static_cast<std::size_t>(engine_() % n);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[next_index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace qkf
