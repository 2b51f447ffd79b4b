#pragma once

// Regularized full-batch training of finite networks:
//   L(theta) = 1/2 |f(X, theta) - y|^2 + beta/2 |theta - theta0|^2
// by gradient descent or fourth-order Runge-Kutta integration of the flow,
// plus the standard-parametrization trainer and shifted-network training.

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "ntk/data.hpp"
#include "ntk/linalg.hpp"
#include "ntk/net.hpp"

namespace ntk {

struct TrainConfig {
  double beta = 0.0;
  /// Learning rate; unset means 1 / (lambda_max + beta) of the kernel that
  /// drives the update.
  std::optional<double> eta0;
  std::size_t max_steps = 200000;
  double grad_tol = 1e-8;
  /// Runge-Kutta time step (flow_integrate only).
  double flow_step = 0.1;
  /// Integrate up to this time (flow_integrate only); unset runs until
  /// grad_tol or max_steps.
  std::optional<double> flow_time;
  std::size_t record_every = 10;
  std::optional<Matrix> probe_points;
  /// |J(theta_t) - J(theta0)|_F on the training points, per record.
  bool record_jacobian_drift = false;
  /// std_train: the same rate eta0 / n on every parameter instead of eta0 H.
  bool uniform_learning_rate = false;
  /// Keep a full parameter snapshot at each record.
  bool keep_parameter_history = false;
  /// Allow the reduced representation of a wide first trainable layer.
  bool allow_factored = true;
  /// Coefficients c of a reference trajectory theta0 + J(theta0)^T c(t),
  /// evaluated at each recorded step (or time); the trace then records the
  /// distance of theta_t to it.
  std::function<Vector(double)> reference_coefficients;

  /// Throws InvalidArgument on nonpositive tolerances or step sizes.
  void validate() const;
};

struct TraceRecord {
  double step = 0.0;  // step index, or time for the flow integrator
  double loss = 0.0;
  double grad_norm = 0.0;
  double dist_from_init = 0.0;
  double jacobian_drift = 0.0;     // NaN unless recorded
  double reference_distance = 0.0;  // NaN unless a reference is configured
  Vector probe_predictions;
};

struct TrainTrace {
  std::vector<TraceRecord> records;

  std::vector<double> column(double TraceRecord::*field) const;
};

struct TrainResult {
  ParamVector params;
  TrainTrace trace;
  std::vector<ParamVector> history;  // with keep_parameter_history
  std::size_t steps = 0;
  double time = 0.0;
  double eta0 = 0.0;
  bool converged = false;
  bool factored = false;  // reduced representation was used
};

double reg_loss(const MlpArchitecture& arch, const ParamVector& params,
                const ParamVector& params0, const Dataset& data, double beta);

/// J^T g + beta (theta - theta0), zero on frozen blocks.
Vector reg_grad(const MlpArchitecture& arch, const ParamVector& params,
                const ParamVector& params0, const Dataset& data, double beta);

/// 1 / (lambda_max(Theta) + beta) for the masked empirical NTK on x.
double auto_learning_rate(const MlpArchitecture& arch, const ParamVector& params0,
                          const Matrix& x, double beta);

/// theta <- theta - eta0 grad L until |grad L| <= grad_tol or max_steps.
/// Throws Diverged when the loss exceeds 1e6 times its initial value.
TrainResult gd_train(const MlpArchitecture& arch, const ParamVector& params0,
                     const Dataset& data, const TrainConfig& config);

/// d theta / dt = -eta0 grad L with classical RK4 at fixed step flow_step.
TrainResult flow_integrate(const MlpArchitecture& arch, const ParamVector& params0,
                           const Dataset& data, const TrainConfig& config);

/// Gradient descent in standard parametrization with rate eta0 H and penalty
/// beta/2 (theta - theta0)^T H^{-1} (theta - theta0). Its iterates are
/// H^{1/2} times those of gd_train on the NTK-parametrized problem. With
/// uniform_learning_rate every parameter uses eta0 / n instead.
TrainResult std_train(const MlpArchitecture& arch_standard, const ParamVector& params0_std,
                      const Dataset& data, const TrainConfig& config);

/// Share of each part of the network in the trace of the standard
/// parametrization kernel J J^T that drives uniform-rate training.
struct UniformRateShares {
  double first_layer = 0.0;  // first-layer weights
  double biases = 0.0;       // all biases
  double total_trace = 0.0;  // tr(J J^T) / n
};

UniformRateShares uniform_rate_shares(const MlpArchitecture& arch_standard,
                                      const ParamVector& params_std, const Matrix& x);

/// |J(params) - J(params0)|_F on x over trainable blocks.
double jacobian_drift(const MlpArchitecture& arch, const ParamVector& params,
                      const ParamVector& params0, const Matrix& x);

/// Trained shifted network x -> f(x, theta) - f(x, theta0) + m(x).
struct ShiftedPredictor {
  MlpArchitecture arch;
  ParamVector params;
  ParamVector params0;
  PriorMean prior;

  Vector evaluate(const Matrix& x) const;
  /// The predictor frozen as a prior for a later task.
  PriorMean as_prior() const;
};

struct ShiftedTrainResult {
  ShiftedPredictor predictor;
  TrainResult train;
};

/// Trains f on the shifted labels y + f(x, theta0) - m(x). With no training
/// data the predictor equals the prior.
ShiftedTrainResult shifted_train(const MlpArchitecture& arch, const ParamVector& params0,
                                 const Dataset& data, const PriorMean& prior,
                                 const TrainConfig& config);

}  // namespace ntk
