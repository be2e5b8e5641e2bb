#pragma once

#include <stdexcept>
#include <string>

namespace pdm {

// Error taxonomy shared by every module. The CLI maps these to exit codes.

struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed or undecodable input data (images, non-finite tensors).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// An object was used in the wrong lifecycle state (e.g. unfrozen scaler).
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

struct IntegrationError : std::runtime_error {
  IntegrationError(const std::string& what, double t)
      : std::runtime_error(what), time(t) {}
  double time;
};

struct TrainingError : std::runtime_error {
  TrainingError(const std::string& what, std::string diagnostic_json)
      : std::runtime_error(what), diagnostic(std::move(diagnostic_json)) {}
  std::string diagnostic;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace pdm
