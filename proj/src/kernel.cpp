#include "ntk/kernel.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "ntk/error.hpp"

namespace ntk {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionMismatch(what);
}

}  // namespace

double flow_filter(double s, double eta, double t) {
  if (s == 0.0) return eta * t;
  return -std::expm1(-eta * s * t) / s;
}

double descent_filter(double s, double eta, std::size_t steps) {
  if (s == 0.0) return eta * static_cast<double>(steps);
  const double k = static_cast<double>(steps);
  const double step = eta * s;
  if (std::abs(step) < 0.5) return -std::expm1(k * std::log1p(-step)) / s;
  return (1.0 - std::pow(1.0 - step, k)) / s;
}

void check_psd(const GramMatrix& k) {
  const SymMatrix sym = k.symmetric();
  const EigDecomp eig = sym_eig(sym);
  const double lo = eig.eigenvalues(0);
  const double hi = eig.eigenvalues(eig.eigenvalues.size() - 1);
  if (lo < -1e-8 * std::max(hi, 0.0)) {
    throw InvalidArgument("Gram matrix is not PSD: min eigenvalue " + std::to_string(lo) +
                          ", max " + std::to_string(hi));
  }
}

GramMatrix empirical_ntk(const Matrix& jac_test, const Matrix& jac_train,
                         const MlpArchitecture& arch) {
  require(jac_test.cols() == jac_train.cols(), "empirical_ntk: Jacobians have different p");
  require(static_cast<std::size_t>(jac_train.cols()) == arch.param_count(),
          "empirical_ntk: Jacobian width does not match the architecture");
  Vector mask = Vector::Zero(jac_train.cols());
  for (const Block& b : arch.layout()) {
    if (b.trainable)
      mask.segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.size()))
          .setOnes();
  }
  GramMatrix g;
  g.values = jac_test * mask.asDiagonal() * jac_train.transpose();
  g.kind = KernelKind::ntk;
  g.width_used = arch.depth() > 0 ? arch.width(1) : arch.input_dim;
  return g;
}

Matrix ntk_from_passes(const MlpArchitecture& arch, const ParamVector& params,
                       const ForwardPass& pass_a, const std::vector<Matrix>& sens_a,
                       const ForwardPass& pass_b, const std::vector<Matrix>& sens_b,
                       bool trainable_only) {
  Matrix k = Matrix::Zero(pass_a.batch_size(), pass_b.batch_size());
  for (std::size_t layer = 0; layer < arch.num_layers(); ++layer) {
    const bool w_on = !trainable_only || params.block(layer, BlockKind::weight).trainable;
    const bool b_on = !trainable_only || params.block(layer, BlockKind::bias).trainable;
    if (!w_on && !b_on) continue;
    const Matrix sens_gram = sens_a[layer] * sens_b[layer].transpose();
    if (w_on) {
      const double s = arch.layer_scale(layer);
      const Matrix input_gram = pass_a.inputs[layer] * pass_b.inputs[layer].transpose();
      k.noalias() += (s * s) * sens_gram.cwiseProduct(input_gram);
    }
    if (b_on) k += sens_gram;
  }
  return k;
}

GramMatrix empirical_ntk(const MlpArchitecture& arch, const ParamVector& params,
                         const Matrix& x_test, const Matrix& x_train, bool trainable_only) {
  std::size_t lowest = 0;
  if (trainable_only) {
    lowest = arch.num_layers() - 1;
    for (std::size_t k = 0; k < arch.num_layers(); ++k) {
      if (arch.is_trainable(k, BlockKind::weight) || arch.is_trainable(k, BlockKind::bias)) {
        lowest = k;
        break;
      }
    }
  }
  const ForwardPass pa = forward_pass(arch, params, x_test);
  const ForwardPass pb = forward_pass(arch, params, x_train);
  const auto sa = output_sensitivities(arch, params, pa, lowest);
  const auto sb = output_sensitivities(arch, params, pb, lowest);
  GramMatrix g;
  g.values = ntk_from_passes(arch, params, pa, sa, pb, sb, trainable_only);
  g.kind = KernelKind::ntk;
  g.width_used = arch.depth() > 0 ? arch.width(1) : arch.input_dim;
  return g;
}

Vector posterior_mean(const GramMatrix& k_xx, const GramMatrix& k_tx, const Vector& y,
                      const Vector& m_train, const Vector& m_test, double beta) {
  if (beta < 0.0) throw InvalidArgument("posterior_mean: beta must be nonnegative");
  require(k_xx.rows() == k_xx.cols(), "posterior_mean: K_xx must be square");
  require(k_tx.cols() == k_xx.rows(), "posterior_mean: K_tx columns must match K_xx");
  require(y.size() == k_xx.rows() && m_train.size() == y.size(),
          "posterior_mean: y / m_train length mismatch");
  require(m_test.size() == k_tx.rows(), "posterior_mean: m_test length mismatch");
  if (k_xx.rows() == 0) return m_test;
  const Vector alpha = Cholesky(k_xx.symmetric(), beta).solve(Vector(y - m_train));
  return m_test + k_tx.values * alpha;
}

Vector lin_prediction_flow(const GramMatrix& k_tx, const GramMatrix& k_xx,
                           const Vector& f0_test, const Vector& f0_train, const Vector& y,
                           double beta, double eta0, double t) {
  if (beta < 0.0) throw InvalidArgument("lin_prediction_flow: beta must be nonnegative");
  if (!(eta0 > 0.0)) throw InvalidArgument("lin_prediction_flow: eta0 must be positive");
  if (!(t >= 0.0)) throw InvalidArgument("lin_prediction_flow: t must be nonnegative");
  require(k_tx.cols() == k_xx.rows() && k_xx.rows() == k_xx.cols(),
          "lin_prediction_flow: kernel shapes");
  require(f0_test.size() == k_tx.rows() && f0_train.size() == k_xx.rows() &&
              y.size() == k_xx.rows(),
          "lin_prediction_flow: vector lengths");
  if (t == 0.0 || k_xx.rows() == 0) return f0_test;
  if (std::isinf(t)) return posterior_mean(k_xx, k_tx, y, f0_train, f0_test, beta);
  const EigDecomp eig = sym_eig(k_xx.symmetric());
  const Matrix coeffs = spectral_apply(
      eig, [&](double lambda) { return flow_filter(lambda + beta, eta0, t); },
      Matrix(y - f0_train));
  return f0_test + k_tx.values * coeffs.col(0);
}

double learning_rate_ceiling(double lambda_max, double beta) {
  return 2.0 / (lambda_max + beta);
}

Vector lin_prediction_gd(const GramMatrix& k_tx, const GramMatrix& k_xx, const Vector& f0_test,
                         const Vector& f0_train, const Vector& y, double beta, double eta0,
                         std::size_t steps) {
  if (beta < 0.0) throw InvalidArgument("lin_prediction_gd: beta must be nonnegative");
  if (!(eta0 > 0.0)) throw InvalidArgument("lin_prediction_gd: eta0 must be positive");
  require(k_tx.cols() == k_xx.rows() && k_xx.rows() == k_xx.cols(),
          "lin_prediction_gd: kernel shapes");
  require(f0_test.size() == k_tx.rows() && f0_train.size() == k_xx.rows() &&
              y.size() == k_xx.rows(),
          "lin_prediction_gd: vector lengths");
  if (steps == 0 || k_xx.rows() == 0) return f0_test;
  const EigDecomp eig = sym_eig(k_xx.symmetric());
  const double lambda_max = eig.eigenvalues(eig.eigenvalues.size() - 1);
  const double ceiling = learning_rate_ceiling(lambda_max, beta);
  if (eta0 >= ceiling && steps > kDivergenceSteps) {
    throw DivergentLearningRate("lin_prediction_gd: eta0 = " + std::to_string(eta0) +
                                " is outside the convergence window (ceiling " +
                                std::to_string(ceiling) + ")");
  }
  const Matrix coeffs = spectral_apply(
      eig, [&](double lambda) { return descent_filter(lambda + beta, eta0, steps); },
      Matrix(y - f0_train));
  return f0_test + k_tx.values * coeffs.col(0);
}

GramMatrix empirical_nngp(const Matrix& features_train, const Matrix& features_test,
                          double sigma_w_last, double sigma_b_last) {
  require(features_train.cols() == features_test.cols(),
          "empirical_nngp: feature widths differ");
  require(features_train.cols() > 0, "empirical_nngp: empty features");
  const double n = static_cast<double>(features_train.cols());
  GramMatrix g;
  g.values = (sigma_w_last * sigma_w_last / n) * (features_test * features_train.transpose());
  g.values.array() += sigma_b_last * sigma_b_last;
  g.kind = KernelKind::nngp;
  g.width_used = static_cast<std::size_t>(features_train.cols());
  return g;
}

GramMatrix empirical_nngp(const MlpArchitecture& arch, const ParamVector& params,
                          const Matrix& x_test, const Matrix& x_train) {
  const std::size_t last = arch.num_layers() - 1;
  const ForwardPass pa = forward_pass(arch, params, x_test);
  const ForwardPass pb = forward_pass(arch, params, x_train);
  return empirical_nngp(pb.inputs[last], pa.inputs[last], arch.sigma_w[last],
                        arch.sigma_b[last]);
}

EnsembleMoments ensemble_moments(const GramMatrix& theta_tx, const GramMatrix& theta_xx,
                                 const GramMatrix& k_tt, const GramMatrix& k_tx,
                                 const GramMatrix& k_xx, const Vector& y, double beta) {
  const Eigen::Index n = theta_xx.rows();
  const Eigen::Index m = theta_tx.rows();
  require(theta_xx.cols() == n && theta_tx.cols() == n, "ensemble_moments: Theta shapes");
  require(k_xx.rows() == n && k_xx.cols() == n, "ensemble_moments: K_xx shape");
  require(k_tx.rows() == m && k_tx.cols() == n, "ensemble_moments: K_tx shape");
  require(k_tt.rows() == m && k_tt.cols() == m, "ensemble_moments: K_tt shape");
  require(y.size() == n, "ensemble_moments: y length");

  // A = Theta_tx (Theta_xx + beta I)^{-1}, via the symmetric solve of A^T.
  const Matrix a_t = Cholesky(theta_xx.symmetric(), beta).solve(Matrix(theta_tx.values.transpose()));
  const Matrix a = a_t.transpose();
  EnsembleMoments out;
  out.mean = a * y;
  const Matrix cross = a * k_tx.values.transpose();
  Matrix sigma = k_tt.values + a * k_xx.values * a_t - cross - cross.transpose();
  out.covariance = 0.5 * (sigma + sigma.transpose());
  return out;
}

}  // namespace ntk
