#pragma once

namespace polymc {

inline constexpr const char* kVersion = "polymc 0.1.0";

} // namespace polymc
