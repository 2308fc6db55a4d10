#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace wal {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Bad input, bad configuration, malformed files. Maps to CLI exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite loss or gradient during training. Maps to CLI exit code 2.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace wal
