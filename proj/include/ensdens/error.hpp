#pragma once

#include <stdexcept>
#include <string>

namespace ensdens {

/// Caller violated a precondition (bad dimensions, empty input, bad flag).
class UsageError : public std::invalid_argument {
 public:
  explicit UsageError(const std::string& what) : std::invalid_argument(what) {}
};

/// A single EM fit degenerated; the caller decides whether that is fatal.
class FitFailure : public std::runtime_error {
 public:
  explicit FitFailure(const std::string& what) : std::runtime_error(what) {}
};

/// A pipeline stage could not produce any result at all.
class PipelineError : public std::runtime_error {
 public:
  explicit PipelineError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ensdens
