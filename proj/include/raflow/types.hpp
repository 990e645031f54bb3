#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace raflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Row-major dense array. Rows index the batch, columns index features.
using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Error taxonomy. The CLI maps these onto its exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// Operand shapes or dimensions do not agree.
struct ShapeError : Error {
  using Error::Error;
};
/// An argument lies outside the domain of the operation.
struct DomainError : Error {
  using Error::Error;
};
/// A file or document does not follow its schema.
struct SchemaError : Error {
  using Error::Error;
};
/// An iteration produced non-finite values.
struct NumericError : Error {
  using Error::Error;
};

std::string shape_str(Index rows, Index cols);

template <typename Derived>
std::string shape_of(const Eigen::DenseBase<Derived>& m) {
  return shape_str(m.rows(), m.cols());
}

}  // namespace raflow
