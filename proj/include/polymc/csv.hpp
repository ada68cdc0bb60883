#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "polymc/errors.hpp"

namespace polymc::csv {

// Shortest round-trip decimal representation (std::to_chars).
inline std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string fmt(std::int64_t v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string fmt(std::uint64_t v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string fmt(int v) { return fmt(static_cast<std::int64_t>(v)); }
inline std::string fmt(bool v) { return v ? "1" : "0"; }
inline std::string fmt(const std::string& v) { return v; }

class Writer {
public:
  Writer(const std::string& path, const std::string& header) : out_(path, std::ios::binary) {
    if (!out_) throw NumericalError("cannot open output file: " + path);
    out_ << header << "\n";
  }

  template <typename... Ts>
  void row(const Ts&... fields) {
    bool first = true;
    ((out_ << (first ? "" : ","), first = false, out_ << fmt(fields)), ...);
    out_ << "\n";
    ++rows_;
  }

  std::size_t rows() const { return rows_; }

private:
  std::ofstream out_;
  std::size_t rows_ = 0;
};

} // namespace polymc::csv
