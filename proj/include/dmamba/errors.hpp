#pragma once

#include <stdexcept>
#include <string>

namespace dmamba {

// CLI exit code 2
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// CLI exit code 3
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// CLI exit code 4
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dmamba
