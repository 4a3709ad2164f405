#pragma once

#include <stdexcept>
#include <string>

namespace obf {

/// Invalid model, policy or experiment parameters.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of a function (negative SINR, probability > 1).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Dimension mismatch between a policy, a vector and a matrix.
class ShapeError : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// Operation applied to a rule or policy of the wrong kind.
class KindError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Caller violated an operation's precondition on policy structure.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace obf
