#include "polymc/kernels.hpp"

#include <limits>

namespace polymc::kernels {
namespace {

void fill_scalar(double* x, double v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = v;
}

void scale_scalar(double* x, double c, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = x[i] * c;
}

void axpy_scalar(double* dst, const double* src, double a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = dst[i] + a * src[i];
}

void ar1_scalar(double* out, const double* prev, const double* noise, double a,
                double c, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a * prev[i] + c * noise[i];
}

double max_scalar(const double* x, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) m = x[i] > m ? x[i] : m;
  return m;
}

double sum_scalar(const double* x, std::size_t n) {
  double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
  const std::size_t n4 = n & ~static_cast<std::size_t>(3);
  for (std::size_t i = 0; i < n4; i += 4) {
    acc0 = acc0 + x[i];
    acc1 = acc1 + x[i + 1];
    acc2 = acc2 + x[i + 2];
    acc3 = acc3 + x[i + 3];
  }
  double s = (acc0 + acc1) + (acc2 + acc3);
  for (std::size_t i = n4; i < n; ++i) s = s + x[i];
  return s;
}

} // namespace

const Table scalar_table = {fill_scalar, scale_scalar,  axpy_scalar,
                            ar1_scalar,  max_scalar,    sum_scalar,
                            "scalar"};

} // namespace polymc::kernels
