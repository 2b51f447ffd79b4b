#pragma once

// Empirical kernels and the closed-form predictions they induce.

#include <cstdint>
#include <optional>

#include "ntk/linalg.hpp"
#include "ntk/net.hpp"

namespace ntk {

enum class KernelKind { ntk, nngp };

/// Kernel matrix between a row point set (N') and a column point set (N).
struct GramMatrix {
  Matrix values;
  KernelKind kind = KernelKind::ntk;
  std::size_t width_used = 0;
  std::uint64_t seed_used = 0;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
  /// Symmetric view; throws InvalidArgument when not square/symmetric.
  SymMatrix symmetric() const { return SymMatrix(values, 1e-10); }
};

/// Throws InvalidArgument unless the matrix is symmetric within 1e-10 and its
/// smallest eigenvalue is at least -1e-8 times the largest.
void check_psd(const GramMatrix& k);

/// J_test J_train^T restricted to the architecture's trainable blocks.
GramMatrix empirical_ntk(const Matrix& jac_test, const Matrix& jac_train,
                         const MlpArchitecture& arch);

/// Same kernel without materializing Jacobians: per layer the Jacobian of a
/// weight block is the outer product of the output sensitivity and the
/// layer input, so inner products factor into two small Gram matrices.
GramMatrix empirical_ntk(const MlpArchitecture& arch, const ParamVector& params,
                         const Matrix& x_test, const Matrix& x_train,
                         bool trainable_only = true);

/// Kernel between two point sets whose forward passes and sensitivities are
/// already available.
Matrix ntk_from_passes(const MlpArchitecture& arch, const ParamVector& params,
                       const ForwardPass& pass_a, const std::vector<Matrix>& sens_a,
                       const ForwardPass& pass_b, const std::vector<Matrix>& sens_b,
                       bool trainable_only);

/// m_test + K_tx (K_xx + beta I)^{-1} (y - m_train).
Vector posterior_mean(const GramMatrix& k_xx, const GramMatrix& k_tx, const Vector& y,
                      const Vector& m_train, const Vector& m_test, double beta);

/// (1 - e^{-eta s t}) / s, continuous through s = 0: the spectral filter of
/// linearized gradient flow for an eigenvalue s of Theta + beta I.
double flow_filter(double s, double eta, double t);

/// (1 - (1 - eta s)^k) / s, continuous through s = 0: the discrete analogue
/// after k gradient-descent steps.
double descent_filter(double s, double eta, std::size_t steps);

/// Linearized gradient-flow prediction at time t (t may be +infinity).
Vector lin_prediction_flow(const GramMatrix& k_tx, const GramMatrix& k_xx,
                           const Vector& f0_test, const Vector& f0_train, const Vector& y,
                           double beta, double eta0, double t);

/// Number of steps with a learning rate outside the convergence window that
/// lin_prediction_gd tolerates before raising DivergentLearningRate.
inline constexpr std::size_t kDivergenceSteps = 10;

/// Stability ceiling 2 / (lambda_max + beta) of discrete linearized dynamics.
double learning_rate_ceiling(double lambda_max, double beta);

/// Linearized gradient-descent prediction after `steps` steps.
Vector lin_prediction_gd(const GramMatrix& k_tx, const GramMatrix& k_xx, const Vector& f0_test,
                         const Vector& f0_train, const Vector& y, double beta, double eta0,
                         std::size_t steps);

/// sigma_w^2 (x^L . x'^L) / n + sigma_b^2 from penultimate features
/// (rows are points).
GramMatrix empirical_nngp(const Matrix& features_train, const Matrix& features_test,
                          double sigma_w_last, double sigma_b_last);

/// NNGP kernel of an initialized network: its penultimate features combined
/// with the output layer's sigma_w / sigma_b.
GramMatrix empirical_nngp(const MlpArchitecture& arch, const ParamVector& params,
                          const Matrix& x_test, const Matrix& x_train);

struct EnsembleMoments {
  Vector mean;
  Matrix covariance;
};

/// Mean and covariance over initializations of the converged linearized
/// network: mu = A y and Sigma = K_tt + A K_xx A^T - A K_xt - K_tx A^T with
/// A = Theta_tx (Theta_xx + beta I)^{-1}.
EnsembleMoments ensemble_moments(const GramMatrix& theta_tx, const GramMatrix& theta_xx,
                                 const GramMatrix& k_tt, const GramMatrix& k_tx,
                                 const GramMatrix& k_xx, const Vector& y, double beta);

}  // namespace ntk
