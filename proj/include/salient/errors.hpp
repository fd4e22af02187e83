#pragma once

#include <stdexcept>
#include <string>

namespace salient {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Sequence longer than the model's max_seq_len.
class LengthError : public Error {
 public:
  using Error::Error;
};

// Token id outside [0, vocab_size).
class VocabularyError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Operation invoked in the wrong order (e.g. backward before forward, double hook install).
class StateError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Checkpoint magic bytes wrong or file otherwise unparseable.
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

class TruncatedError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

}  // namespace salient
