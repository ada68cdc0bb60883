#include "polymc/kernels.hpp"

#include <atomic>

#include "polymc/errors.hpp"

namespace polymc::kernels {
namespace {

std::atomic<const Table*> g_active{nullptr};

const Table* pick_default() {
  if (avx2_table.name != nullptr && avx2_supported()) return &avx2_table;
  return &scalar_table;
}

} // namespace

bool avx2_supported() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

const Table& active() {
  const Table* t = g_active.load(std::memory_order_acquire);
  if (t == nullptr) {
    t = pick_default();
    g_active.store(t, std::memory_order_release);
  }
  return *t;
}

void set_backend(Backend b) {
  switch (b) {
    case Backend::kAuto:
      g_active.store(pick_default(), std::memory_order_release);
      break;
    case Backend::kScalar:
      g_active.store(&scalar_table, std::memory_order_release);
      break;
    case Backend::kAvx2:
      g_active.store(avx2_table.name != nullptr && avx2_supported() ? &avx2_table
                                                                    : &scalar_table,
                     std::memory_order_release);
      break;
  }
}

Backend parse_backend(const std::string& name) {
  if (name == "auto") return Backend::kAuto;
  if (name == "scalar") return Backend::kScalar;
  if (name == "avx2") return Backend::kAvx2;
  throw ConfigError("kernels.backend: unknown backend '" + name +
                    "' (expected auto|scalar|avx2)");
}

} // namespace polymc::kernels
