#pragma once

#include <stdexcept>
#include <string>

namespace hybridflow {

// Shape or argument contract violated by the caller.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computation produced NaN/Inf or a value outside its domain (log of <= 0).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training loss or validation loss became non-finite.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, int epoch, int batch)
      : NumericError(what), epoch_(epoch), batch_(batch) {}
  int epoch() const { return epoch_; }
  int batch() const { return batch_; }

 private:
  int epoch_;
  int batch_;
};

}  // namespace hybridflow
