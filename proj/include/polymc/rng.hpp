#pragma once

#include <cmath>
#include <cstdint>

namespace polymc::rng {

// Counter-based 64-bit generator used everywhere in this project.
//
// The generator is fully specified here so that any reimplementation (in any
// language) reproduces identical streams:
//
//   mix64(x):   x ^= x >> 30;  x *= 0xBF58476D1CE4E5B9
//               x ^= x >> 27;  x *= 0x94D049BB133111EB
//               x ^= x >> 31
//   u64(key,i): mix64(key + (i+1) * 0x9E3779B97F4A7C15)
//   child(key,tag): mix64(key ^ mix64(tag ^ 0xA0761D6478BD642F))
//
// A stream is identified by a 64-bit key; the i-th variate of a stream is a
// pure function of (key, i), so substreams can be evaluated out of order and
// in parallel without any shared state. Derived keys (per replica, per role)
// come from child(), never from consuming variates.

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
inline constexpr std::uint64_t kTagSalt = 0xA0761D6478BD642FULL;

inline std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

struct Key {
  std::uint64_t v = 0;

  Key child(std::uint64_t tag) const { return Key{mix64(v ^ mix64(tag ^ kTagSalt))}; }

  std::uint64_t u64_at(std::uint64_t i) const { return mix64(v + (i + 1) * kGolden); }

  // Uniform in [0,1) with 53 significant bits.
  double uniform_at(std::uint64_t i) const {
    return static_cast<double>(u64_at(i) >> 11) * 0x1.0p-53;
  }
};

// Role tags for derived streams. Values are arbitrary but frozen; changing
// them changes every output of the program.
namespace tag {
inline constexpr std::uint64_t kField = 1;
inline constexpr std::uint64_t kEpsilon = 2;
inline constexpr std::uint64_t kWalk = 3;
inline constexpr std::uint64_t kInner = 4;
inline constexpr std::uint64_t kPsi = 5;
inline constexpr std::uint64_t kReplica = 6;
inline constexpr std::uint64_t kGrid = 7;
} // namespace tag

// Sequential view over a keyed stream.
class Stream {
public:
  explicit Stream(Key k) : key_(k) {}
  Stream(Key k, std::uint64_t start) : key_(k), ctr_(start) {}

  std::uint64_t u64() { return key_.u64_at(ctr_++); }
  double uniform() { return key_.uniform_at(ctr_++); }

  // Box-Muller without rejection: two uniforms -> one normal. The sine twin
  // is discarded to keep the draw count fixed per call.
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log1p(-u1));
    return r * std::cos(6.283185307179586476925286766559 * u2);
  }

  std::uint64_t counter() const { return ctr_; }
  Key key() const { return key_; }

private:
  Key key_;
  std::uint64_t ctr_ = 0;
};

// Signed coordinate -> unsigned zigzag code, for hashing lattice sites.
inline std::uint64_t zigzag(std::int64_t c) {
  return (static_cast<std::uint64_t>(c) << 1) ^ static_cast<std::uint64_t>(c >> 63);
}

// Key for a space-time site (n, z). Pure in (key, n, z): field values looked
// up through this function are independent of window shape, horizon and
// worker scheduling.
inline Key site_key(Key base, std::int64_t n, const std::int64_t* z, int d) {
  std::uint64_t h = base.v;
  h = mix64(h ^ (zigzag(n) + kGolden));
  for (int j = 0; j < d; ++j) h = mix64(h ^ (zigzag(z[j]) + 2 * kGolden));
  return Key{h};
}

} // namespace polymc::rng
