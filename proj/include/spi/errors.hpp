#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace spi {

// Structural problems: malformed factors, bad net files, invalid partitions.
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failures while answering a query: zero-mass evidence, blown rewrite budget.
class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Expression syntax error, with a character offset into the input text.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " (at offset " + std::to_string(position) + ")"),
        position_(position) {}

  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

}  // namespace spi
