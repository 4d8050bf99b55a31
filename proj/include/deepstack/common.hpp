#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace deepstack {

inline constexpr const char* kToolName = "deepstack";
inline constexpr const char* kToolVersion = "0.1.0";

// Error taxonomy. Every failure surfaces as one of these; the CLI maps
// them to exit codes.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shapes do not line up for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// An API precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A character id is outside the owning vocabulary.
class VocabError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Missing or unusable input data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents; the message carries the line number.
class ParseError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// UTF-8 <-> UTF-32
// ---------------------------------------------------------------------------

inline void utf8_append(std::string& out, char32_t c) {
  if (c < 0x80) {
    out.push_back(static_cast<char>(c));
  } else if (c < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (c >> 6)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else if (c < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (c >> 12)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (c >> 18)));
    out.push_back(static_cast<char>(0x80 | ((c >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((c >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (c & 0x3F)));
  }
}

inline std::string utf8_encode(std::u32string_view s) {
  std::string out;
  out.reserve(s.size() * 3);
  for (char32_t c : s) utf8_append(out, c);
  return out;
}

inline std::u32string utf8_decode(std::string_view s, std::size_t line = 0) {
  std::u32string out;
  out.reserve(s.size());
  std::size_t i = 0;
  auto fail = [&] {
    std::string where = line ? " at line " + std::to_string(line) : "";
    throw ParseError("invalid UTF-8 byte sequence" + where);
  };
  while (i < s.size()) {
    unsigned char b0 = static_cast<unsigned char>(s[i]);
    std::size_t len;
    char32_t c;
    if (b0 < 0x80) {
      len = 1;
      c = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      c = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      c = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      c = b0 & 0x07;
    } else {
      fail();
      return out;
    }
    if (i + len > s.size()) fail();
    for (std::size_t k = 1; k < len; ++k) {
      unsigned char b = static_cast<unsigned char>(s[i + k]);
      if ((b & 0xC0) != 0x80) fail();
      c = (c << 6) | (b & 0x3F);
    }
    out.push_back(c);
    i += len;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Deterministic random source. All sampling used for initialization,
// shuffling and corpus synthesis goes through this class so that a seed
// pins byte-identical behavior.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9E3779B97F4A7C15ULL) {}

  std::uint64_t next_u64() {
    // xorshift* generator; fixed algorithm keeps streams portable.
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545F4914F6CDD1DULL;
  }

  // Uniform double in [0, 1).
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Unbiased index in [0, n).
  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw ContractError("uniform_index: n must be positive");
    std::uint64_t bound = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= bound);
    return static_cast<std::size_t>(x % n);
  }

  // Box-Muller normal sampler; the second value of each pair is cached.
  double normal(double mean, double stddev) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = 1.0 - next_unit();  // (0, 1]
    double u2 = next_unit();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return mean + stddev * r * std::cos(theta);
  }

  // Fisher-Yates; fixed traversal order makes shuffles reproducible.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// FNV-1a over raw bytes; used to fingerprint referenced model files.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace deepstack
