/*
 Copyright 2026 The cmon-rti Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#ifndef CMON_TYPES_HPP
#define CMON_TYPES_HPP

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace cmon {

using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Matrix = Eigen::MatrixXd;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite or otherwise unusable model input.
class InvalidStateError : public Error {
 public:
  using Error::Error;
};

/// Two adjacent chain masses coincide; the spring force is undefined.
class SingularGeometryError : public Error {
 public:
  using Error::Error;
};

/// The integrator produced a non-finite intermediate state.
class IntegrationBlowupError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent dimensions while assembling a QP.
class AssemblyError : public Error {
 public:
  using Error::Error;
};

/// An iterate update violated a contract (e.g. negative inequality multipliers).
class ContractViolationError : public Error {
 public:
  using Error::Error;
};

/// The QP has no feasible point. `certificate_residual` is the primal
/// infeasibility the solver could not reduce.
class QpInfeasibleError : public Error {
 public:
  QpInfeasibleError(const std::string& what, double certificate_residual)
      : Error(what), certificate_residual_(certificate_residual) {}
  double certificate_residual() const { return certificate_residual_; }

 private:
  double certificate_residual_;
};

/// The QP solver hit its iteration limit.
class QpNonConvergenceError : public Error {
 public:
  QpNonConvergenceError(const std::string& what, Vector best_iterate, double best_residual)
      : Error(what), best_iterate_(std::move(best_iterate)), best_residual_(best_residual) {}
  const Vector& best_iterate() const { return best_iterate_; }
  double best_residual() const { return best_residual_; }

 private:
  Vector best_iterate_;
  double best_residual_;
};

/// A matrix is too close to singular for the requested operation.
class NearSingularError : public Error {
 public:
  NearSingularError(const std::string& what, double sigma_min)
      : Error(what), sigma_min_(sigma_min) {}
  double sigma_min() const { return sigma_min_; }

 private:
  double sigma_min_;
};

/// The full-step SQP iteration is diverging.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Filesystem or parse failure in the harness.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Configuration rejected during validation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

}  // namespace cmon

#endif  // CMON_TYPES_HPP
