// Copyright 2026 the moekit authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEKIT_ERRORS_HPP_
#define MOEKIT_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace moekit {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape / dimension mismatches.
struct DimensionError : Error {
  using Error::Error;
};

// Invalid static configuration (expert counts, capacities, strategy fields).
struct ConfigError : Error {
  using Error::Error;
};

// Invalid runtime input (out-of-range indices, empty inputs).
struct InputError : Error {
  using Error::Error;
};

// Numerical failure during evaluation (non-finite values, failed probes).
struct EvalError : Error {
  using Error::Error;
};

// Config-file syntax or schema violations; message carries line numbers.
struct ParseError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace moekit

#endif  // MOEKIT_ERRORS_HPP_
