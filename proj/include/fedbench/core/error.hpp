#pragma once

#include <stdexcept>
#include <string>

namespace fedbench {

// Root of every error the library throws. Callers that only care about
// "something in the benchmark failed" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent model specs, layouts, strategy or experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Violated operation precondition (empty batch, delta <= 0, ...).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced inside the network. Carries the offending layer.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::size_t layer)
      : Error(what + " (layer " + std::to_string(layer) + ")"), layer_(layer) {}
  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

class IngestionError : public Error {
 public:
  IngestionError(const std::string& file, const std::string& what)
      : Error(file + ": " + what), file_(file) {}
  const std::string& file() const noexcept { return file_; }

 private:
  std::string file_;
};

class PartitionError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

// Local computation produced a non-finite loss or gradient.
class DivergedError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedbench
