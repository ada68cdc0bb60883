#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <vector>

namespace polymc::lattice {

// Dense row-major addressing for the cube [-B..B]^d. Layer data lives in
// such boxes; l1-ball geometry restricts which segments are touched.
struct LayerBox {
  int d = 0;
  std::int64_t B = 0;
  std::size_t size = 0;
  std::vector<std::int64_t> strides; // strides[j] for coordinate j; last == 1
  std::size_t origin = 0;            // linear index of z = 0

  std::size_t index(const std::int64_t* z) const {
    std::int64_t idx = 0;
    for (int j = 0; j < d; ++j) idx += (z[j] + B) * strides[static_cast<std::size_t>(j)];
    return static_cast<std::size_t>(idx);
  }
  bool inside(const std::int64_t* z) const {
    for (int j = 0; j < d; ++j)
      if (z[j] < -B || z[j] > B) return false;
    return true;
  }
};

inline LayerBox make_box(int d, std::int64_t B) {
  LayerBox box;
  box.d = d;
  box.B = B;
  box.strides.assign(static_cast<std::size_t>(d), 1);
  const std::int64_t side = 2 * B + 1;
  for (int j = d - 2; j >= 0; --j)
    box.strides[static_cast<std::size_t>(j)] = box.strides[static_cast<std::size_t>(j + 1)] * side;
  box.size = static_cast<std::size_t>(box.strides[0] * side);
  std::int64_t o = 0;
  for (int j = 0; j < d; ++j) o += B * box.strides[static_cast<std::size_t>(j)];
  box.origin = static_cast<std::size_t>(o);
  return box;
}

// Visits every row of the l1 ball {|z|_1 <= r}: for each choice of the first
// d-1 coordinates `row` with partial l1 norm s <= r, calls
//   fn(row, s, base) where base = linear index of (row..., z_d = 0).
// The admissible last coordinate then spans [-(r-s), r-s].
template <typename Fn>
void for_each_ball_row(const LayerBox& box, std::int64_t r, Fn&& fn) {
  const int d = box.d;
  if (d == 1) {
    fn(static_cast<const std::int64_t*>(nullptr), static_cast<std::int64_t>(0), box.origin);
    return;
  }
  std::vector<std::int64_t> row(static_cast<std::size_t>(d - 1), 0);
  // odometer over the first d-1 coordinates restricted to |row|_1 <= r
  for (int j = 0; j < d - 1; ++j) row[static_cast<std::size_t>(j)] = -r;
  // start from the first admissible combination
  for (;;) {
    std::int64_t s = 0;
    for (int j = 0; j < d - 1; ++j) s += std::llabs(row[static_cast<std::size_t>(j)]);
    if (s <= r) {
      std::int64_t base = box.origin;
      for (int j = 0; j < d - 1; ++j) base += row[static_cast<std::size_t>(j)] * box.strides[static_cast<std::size_t>(j)];
      fn(row.data(), s, static_cast<std::size_t>(base));
    }
    int j = d - 2;
    for (; j >= 0; --j) {
      if (row[static_cast<std::size_t>(j)] < r) {
        ++row[static_cast<std::size_t>(j)];
        for (int k = j + 1; k < d - 1; ++k) row[static_cast<std::size_t>(k)] = -r;
        break;
      }
    }
    if (j < 0) break;
  }
}

// Number of lattice points in the d-dimensional l1 ball of radius r.
inline std::uint64_t l1_ball_count(int d, std::int64_t r) {
  if (r < 0) return 0;
  if (d == 0) return 1;
  std::uint64_t total = 0;
  for (std::int64_t k = -r; k <= r; ++k) total += l1_ball_count(d - 1, r - std::llabs(k));
  return total;
}

} // namespace polymc::lattice
