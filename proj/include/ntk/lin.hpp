#pragma once

// The network linearized around its initialization,
//   f_lin(x, theta) = f(x, theta0) + J(x, theta0) (theta - theta0),
// and its training dynamics in parameter space. Closed forms are pushed
// through to the N x N kernel: every iterate is theta0 + J0^T c for an
// N-vector of coefficients c.

#include <cstddef>
#include <optional>

#include "ntk/kernel.hpp"
#include "ntk/linalg.hpp"
#include "ntk/net.hpp"

namespace ntk {

class LinearizedState {
 public:
  enum class Storage { dense, matrix_free };

  /// Linearization of `arch` at `params0` on the training inputs. Dense
  /// storage materializes J0 (N x p, frozen columns zero); matrix-free
  /// storage applies it through forward and reverse passes instead.
  LinearizedState(const MlpArchitecture& arch, const ParamVector& params0, const Matrix& x_train,
                  Storage storage = Storage::dense,
                  const std::optional<Matrix>& x_test = std::nullopt);

  const MlpArchitecture& arch() const { return arch_; }
  const ParamVector& theta0() const { return theta0_; }
  const Matrix& x_train() const { return x_train_; }
  const Vector& f0_train() const { return f0_train_; }
  /// f(x_test, theta0); empty without test points.
  const Vector& f0_test() const { return f0_test_; }
  const std::optional<Matrix>& x_test() const { return x_test_; }
  Storage storage() const { return storage_; }
  /// Throws InvalidArgument for matrix-free storage.
  const Matrix& jacobian() const;
  Eigen::Index train_size() const { return x_train_.rows(); }

  /// J0 v for a parameter-shaped v (frozen entries ignored).
  Vector apply_jacobian(const Vector& v) const;
  /// J0^T c, zero on frozen blocks.
  Vector apply_transpose(const Vector& c) const;
  /// Theta = J0 J0^T over trainable blocks.
  const GramMatrix& gram() const { return gram_; }

  /// f_lin(x, theta).
  Vector predict(const ParamVector& theta, const Matrix& x) const;
  Vector predict_train(const ParamVector& theta) const;

  /// theta0 + J0^T c.
  ParamVector params_from_coefficients(const Vector& c) const;

 private:
  MlpArchitecture arch_;
  ParamVector theta0_;
  Matrix x_train_;
  std::optional<Matrix> x_test_;
  Storage storage_;
  Matrix jac_;
  ForwardPass pass0_;
  std::vector<Matrix> sens0_;
  Vector f0_train_;
  Vector f0_test_;
  GramMatrix gram_;
};

/// Coefficients c(t) = (I - e^{-eta0 (Theta + beta I) t}) (Theta + beta I)^{-1} (y - f0)
/// of linearized gradient flow; t may be +infinity.
Vector lin_coefficients_flow(const LinearizedState& state, const Vector& y, double beta,
                             double eta0, double t);

/// Coefficients after `steps` steps of linearized gradient descent.
/// Throws DivergentLearningRate under the same rule as lin_prediction_gd.
Vector lin_coefficients_gd(const LinearizedState& state, const Vector& y, double beta,
                           double eta0, std::size_t steps);

/// theta_lin(t) of linearized gradient flow.
ParamVector lin_params_closed_form(const LinearizedState& state, const Vector& y, double beta,
                                   double eta0, double t);

/// Runs theta_k = theta_{k-1} - eta0 (J0^T g_lin(theta_{k-1}) + beta (theta_{k-1} - theta0))
/// step by step in parameter space.
ParamVector lin_params_gd_iterate(const LinearizedState& state, const Vector& y, double beta,
                                  double eta0, std::size_t steps);

/// l2 distance over trainable blocks. Throws LayoutMismatch.
double param_frobenius_diff(const ParamVector& theta_net, const ParamVector& theta_lin);

/// max_i |a_i - b_i|. Throws DimensionMismatch.
double function_sup_diff(const Vector& net_preds, const Vector& lin_preds);

}  // namespace ntk
