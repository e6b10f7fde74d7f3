#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tic {

inline constexpr const char* kToolVersion = "0.1.0";

using Vec = std::vector<double>;
using ConstSpan = std::span<const double>;
using MutSpan = std::span<double>;

// Argument outside the mathematical domain of an operation (off-lattice point,
// control outside U, h <= 0, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// The operation needs data the problem does not provide (e.g. no G_y).
class UnsupportedOperation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed configuration or data file. `where` is a JSON pointer or file:line.
class InputError : public std::runtime_error {
 public:
  InputError(std::string where, const std::string& what)
      : std::runtime_error(where.empty() ? what : where + ": " + what),
        where_(std::move(where)) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

double norm2(ConstSpan v);
double dot(ConstSpan a, ConstSpan b);

}  // namespace tic
