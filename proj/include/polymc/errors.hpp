#pragma once

#include <stdexcept>
#include <string>

namespace polymc {

// Error categories map onto CLI exit codes: config -> 2, numerical -> 3,
// resource cap -> 4.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class NumericalError : public std::runtime_error {
public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

class ResourceCapError : public std::runtime_error {
public:
  explicit ResourceCapError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace polymc
