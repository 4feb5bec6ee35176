#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace episodic {

using Index = Eigen::Index;

template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = VectorT<double>;
using Matrix = MatrixT<double>;

// Error taxonomy shared by every module.

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class EmptyStoreError : public std::runtime_error {
 public:
  EmptyStoreError() : std::runtime_error("episodic store is empty") {}
};

class SolverFailure : public std::runtime_error {
 public:
  SolverFailure(const std::string& what, double lo, double hi)
      : std::runtime_error(what), lo_(lo), hi_(hi) {}
  double lo() const { return lo_; }
  double hi() const { return hi_; }

 private:
  double lo_;
  double hi_;
};

class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace episodic
