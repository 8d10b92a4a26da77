#pragma once

#include <stdexcept>
#include <string>

namespace medlasa {

/// Incompatible matrix or vector dimensions.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A documented precondition of an operation was violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Token id outside the model vocabulary.
class VocabError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Malformed or incompatible file contents (checkpoints, traces, datasets).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Benchmark generation could not satisfy its structural requirements.
class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pretraining ended without reaching the requested accuracy.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, double final_accuracy)
      : std::runtime_error(what), final_accuracy_(final_accuracy) {}
  double final_accuracy() const noexcept { return final_accuracy_; }

 private:
  double final_accuracy_;
};

/// Invalid experiment configuration (unknown key, wrong type, out-of-range value).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An artifact produced by an earlier pipeline command is missing.
class UpstreamError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace medlasa
