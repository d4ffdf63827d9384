#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace sabre {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Image embedding produced by the frozen encoder.
using Embedding = Vector;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class UnsupportedOperation : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Raised for inputs that make an operation numerically meaningless
/// (zero-norm embeddings, single-class detector data, ...).
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

}  // namespace sabre
