#include "ntk/lin.hpp"

#include <cmath>
#include <string>

#include "ntk/error.hpp"

namespace ntk {

namespace {

std::size_t lowest_trainable(const std::vector<Block>& layout) {
  for (const Block& b : layout) {
    if (b.trainable) return b.layer;
  }
  return layout.back().layer;
}

void check_targets(const LinearizedState& state, const Vector& y, double beta) {
  if (y.size() != state.train_size()) {
    throw DimensionMismatch("linearized dynamics: y has " + std::to_string(y.size()) +
                            " entries for " + std::to_string(state.train_size()) + " points");
  }
  if (!(beta >= 0.0)) throw InvalidArgument("linearized dynamics: beta must be nonnegative");
}

}  // namespace

LinearizedState::LinearizedState(const MlpArchitecture& arch, const ParamVector& params0,
                                 const Matrix& x_train, Storage storage,
                                 const std::optional<Matrix>& x_test)
    : arch_(arch), theta0_(params0), x_train_(x_train), x_test_(x_test), storage_(storage) {
  arch_.validate();
  if (params0.size() != arch.param_count() || params0.layout() != arch.layout()) {
    throw LayoutMismatch("LinearizedState: parameter layout does not match the architecture");
  }
  pass0_ = forward_pass(arch_, theta0_, x_train_);
  sens0_ = output_sensitivities(arch_, theta0_, pass0_, lowest_trainable(theta0_.layout()));
  f0_train_ = pass0_.output();
  if (x_test_) f0_test_ = forward(arch_, theta0_, *x_test_);
  if (storage_ == Storage::dense) {
    jac_ = ntk::jacobian(arch_, theta0_, x_train_) * trainable_mask(theta0_).asDiagonal();
    gram_.values = jac_ * jac_.transpose();
    gram_.kind = KernelKind::ntk;
    gram_.width_used = arch_.depth() > 0 ? arch_.width(1) : arch_.input_dim;
  } else {
    gram_.values = ntk_from_passes(arch_, theta0_, pass0_, sens0_, pass0_, sens0_, true);
    gram_.kind = KernelKind::ntk;
    gram_.width_used = arch_.depth() > 0 ? arch_.width(1) : arch_.input_dim;
  }
  gram_.values = 0.5 * (gram_.values + gram_.values.transpose()).eval();
}

const Matrix& LinearizedState::jacobian() const {
  if (storage_ != Storage::dense) {
    throw InvalidArgument("LinearizedState: Jacobian is not materialized in matrix-free storage");
  }
  return jac_;
}

Vector LinearizedState::apply_jacobian(const Vector& v) const {
  if (static_cast<std::size_t>(v.size()) != theta0_.size()) {
    throw DimensionMismatch("apply_jacobian: vector length does not match the parameter count");
  }
  if (storage_ == Storage::dense) return jac_ * v;
  Vector masked = v;
  apply_trainable_mask(theta0_.layout(), masked);
  return jvp(arch_, theta0_, pass0_, masked);
}

Vector LinearizedState::apply_transpose(const Vector& c) const {
  if (c.size() != train_size()) {
    throw DimensionMismatch("apply_transpose: coefficient length does not match N");
  }
  if (storage_ == Storage::dense) return jac_.transpose() * c;
  return vjp(arch_, theta0_, pass0_, sens0_, c, true);
}

Vector LinearizedState::predict(const ParamVector& theta, const Matrix& x) const {
  if (!theta.same_layout(theta0_)) throw LayoutMismatch("LinearizedState::predict: layouts differ");
  Vector delta = theta.values() - theta0_.values();
  apply_trainable_mask(theta0_.layout(), delta);
  const ForwardPass pass = forward_pass(arch_, theta0_, x);
  return pass.output() + jvp(arch_, theta0_, pass, delta);
}

Vector LinearizedState::predict_train(const ParamVector& theta) const {
  if (!theta.same_layout(theta0_)) throw LayoutMismatch("LinearizedState::predict: layouts differ");
  return f0_train_ + apply_jacobian(theta.values() - theta0_.values());
}

ParamVector LinearizedState::params_from_coefficients(const Vector& c) const {
  return theta0_.with_values(theta0_.values() + apply_transpose(c));
}

Vector lin_coefficients_flow(const LinearizedState& state, const Vector& y, double beta,
                             double eta0, double t) {
  check_targets(state, y, beta);
  if (!(t >= 0.0)) throw InvalidArgument("lin_coefficients_flow: t must be nonnegative");
  if (!std::isinf(t) && !(eta0 > 0.0)) {
    throw InvalidArgument("lin_coefficients_flow: eta0 must be positive");
  }
  const Vector r = y - state.f0_train();
  if (t == 0.0 || r.size() == 0) return Vector::Zero(r.size());
  if (std::isinf(t)) return Cholesky(state.gram().symmetric(), beta).solve(r);
  const EigDecomp eig = sym_eig(state.gram().symmetric());
  return spectral_apply(
             eig, [&](double lambda) { return flow_filter(lambda + beta, eta0, t); }, Matrix(r))
      .col(0);
}

Vector lin_coefficients_gd(const LinearizedState& state, const Vector& y, double beta,
                           double eta0, std::size_t steps) {
  check_targets(state, y, beta);
  if (!(eta0 > 0.0)) throw InvalidArgument("lin_coefficients_gd: eta0 must be positive");
  const Vector r = y - state.f0_train();
  if (steps == 0 || r.size() == 0) return Vector::Zero(r.size());
  const EigDecomp eig = sym_eig(state.gram().symmetric());
  const double ceiling =
      learning_rate_ceiling(eig.eigenvalues(eig.eigenvalues.size() - 1), beta);
  if (eta0 >= ceiling && steps > kDivergenceSteps) {
    throw DivergentLearningRate("lin_coefficients_gd: eta0 = " + std::to_string(eta0) +
                                " is outside the convergence window (ceiling " +
                                std::to_string(ceiling) + ")");
  }
  return spectral_apply(
             eig, [&](double lambda) { return descent_filter(lambda + beta, eta0, steps); },
             Matrix(r))
      .col(0);
}

ParamVector lin_params_closed_form(const LinearizedState& state, const Vector& y, double beta,
                                   double eta0, double t) {
  return state.params_from_coefficients(lin_coefficients_flow(state, y, beta, eta0, t));
}

ParamVector lin_params_gd_iterate(const LinearizedState& state, const Vector& y, double beta,
                                  double eta0, std::size_t steps) {
  check_targets(state, y, beta);
  if (!(eta0 > 0.0)) throw InvalidArgument("lin_params_gd_iterate: eta0 must be positive");
  if (steps > kDivergenceSteps && state.train_size() > 0) {
    const double lambda = max_eigenvalue(state.gram().symmetric());
    const double ceiling = learning_rate_ceiling(lambda, beta);
    if (eta0 >= ceiling) {
      throw DivergentLearningRate("lin_params_gd_iterate: eta0 = " + std::to_string(eta0) +
                                  " is outside the convergence window (ceiling " +
                                  std::to_string(ceiling) + ")");
    }
  }
  const Vector& theta0 = state.theta0().values();
  Vector theta = theta0;
  for (std::size_t k = 0; k < steps; ++k) {
    const Vector delta = theta - theta0;
    const Vector g = state.f0_train() + state.apply_jacobian(delta) - y;
    Vector penalty = beta * delta;
    apply_trainable_mask(state.theta0().layout(), penalty);
    theta -= eta0 * (state.apply_transpose(g) + penalty);
  }
  return state.theta0().with_values(std::move(theta));
}

double param_frobenius_diff(const ParamVector& theta_net, const ParamVector& theta_lin) {
  if (!theta_net.same_layout(theta_lin)) {
    throw LayoutMismatch("param_frobenius_diff: parameter layouts differ");
  }
  double sum = 0.0;
  for (const Block& b : theta_net.layout()) {
    if (!b.trainable) continue;
    const auto off = static_cast<Eigen::Index>(b.offset);
    const auto n = static_cast<Eigen::Index>(b.size());
    sum += (theta_net.values().segment(off, n) - theta_lin.values().segment(off, n)).squaredNorm();
  }
  return std::sqrt(sum);
}

double function_sup_diff(const Vector& net_preds, const Vector& lin_preds) {
  if (net_preds.size() != lin_preds.size()) {
    throw DimensionMismatch("function_sup_diff: prediction vectors differ in length");
  }
  if (net_preds.size() == 0) return 0.0;
  return (net_preds - lin_preds).cwiseAbs().maxCoeff();
}

}  // namespace ntk
