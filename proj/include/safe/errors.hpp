#pragma once

#include <stdexcept>
#include <string>

namespace safe {

// Invalid user-supplied configuration or spec (CLI exit code 2).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or unusable input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Detector received a non-finite sample; it refuses further steps until reset.
class StreamPoisoned : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss; the predictor has been rolled back.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace safe
