// Copyright 2026 The zorephrase Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace zorephrase {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidDimensionError : public Error {
 public:
  using Error::Error;
};

/// A loss evaluation produced NaN or infinity.
class NumericOverflowError : public Error {
 public:
  using Error::Error;
};

class InvalidConfigError : public Error {
 public:
  using Error::Error;
};

class SchemaViolationError : public Error {
 public:
  using Error::Error;
};

class AlignmentError : public Error {
 public:
  using Error::Error;
};

class TemplateError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class CacheCorruptionError : public Error {
 public:
  using Error::Error;
};

/// Failure reported by a chat backend. Transient failures (timeouts, rate
/// limits) are eligible for retry; everything else surfaces immediately.
class BackendError : public Error {
 public:
  BackendError(const std::string& what, bool transient)
      : Error(what), transient_(transient) {}
  bool transient() const noexcept { return transient_; }

 private:
  bool transient_;
};

class RetriesExhaustedError : public Error {
 public:
  RetriesExhaustedError(const std::string& last_failure, int attempts)
      : Error("retries exhausted after " + std::to_string(attempts) +
              " attempts: " + last_failure),
        last_failure_(last_failure),
        attempts_(attempts) {}
  const std::string& last_failure() const noexcept { return last_failure_; }
  int attempts() const noexcept { return attempts_; }

 private:
  std::string last_failure_;
  int attempts_;
};

}  // namespace zorephrase
