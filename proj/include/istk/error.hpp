#pragma once

#include <stdexcept>
#include <string>

namespace istk {

// One exception type for the whole toolkit. The kind maps onto the CLI
// exit-code contract: Usage/Config -> 1, Io -> 2, Numeric -> 3.
class Error : public std::runtime_error {
public:
  enum class Kind {
    Parse,
    UnsupportedTopology,
    Degenerate,
    Shape,
    Contract,
    Parameter,
    Config,
    Io,
    Numeric,
    EmptySurface,
    KTooSmall,
  };

  Error(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}

  Kind kind() const { return kind_; }

  int exit_code() const {
    switch (kind_) {
      case Kind::Io:
        return 2;
      case Kind::Numeric:
        return 3;
      default:
        return 1;
    }
  }

private:
  Kind kind_;
};

}  // namespace istk
