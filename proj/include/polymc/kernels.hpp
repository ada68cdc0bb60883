#pragma once

#include <cstddef>
#include <string>

namespace polymc::kernels {

// Data-parallel inner loops of the simulation, dispatched at runtime between
// a scalar reference implementation and an AVX2 variant. Both implementations
// follow the same evaluation order (4-lane blocked reductions, mul-then-add
// without FMA contraction), so their results are bitwise identical; the
// equivalence tests assert exactly that.

struct Table {
  // x[0..n) = v
  void (*fill)(double* x, double v, std::size_t n);
  // x[0..n) *= c
  void (*scale)(double* x, double c, std::size_t n);
  // dst[0..n) += a * src[0..n)   (src may be unaligned / shifted)
  void (*axpy)(double* dst, const double* src, double a, std::size_t n);
  // out[0..n) = a * prev[0..n) + c * noise[0..n)
  void (*ar1_update)(double* out, const double* prev, const double* noise,
                     double a, double c, std::size_t n);
  // max over x[0..n); n == 0 -> -inf
  double (*reduce_max)(const double* x, std::size_t n);
  // 4-lane blocked sum: acc[j] = sum over i = j (mod 4), combined as
  // ((acc0+acc1)+(acc2+acc3)), then remaining tail added sequentially.
  double (*reduce_sum)(const double* x, std::size_t n);
  const char* name;
};

enum class Backend { kAuto, kScalar, kAvx2 };

extern const Table scalar_table;
extern const Table avx2_table; // name == nullptr when compiled out

bool avx2_supported();

// Active table. Defaults to the best supported backend; set_backend overrides
// (kAvx2 on unsupported hardware falls back to scalar).
const Table& active();
void set_backend(Backend b);
Backend parse_backend(const std::string& name); // "auto" | "scalar" | "avx2"

} // namespace polymc::kernels
