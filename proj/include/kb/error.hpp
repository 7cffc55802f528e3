#pragma once

#include <stdexcept>
#include <string>

namespace kb {

// configuration / usage problems map to CLI exit code 2;
// domain and verification failures map to exit code 1
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace kb
