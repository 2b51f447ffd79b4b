#include "ntk/train.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "ntk/error.hpp"
#include "ntk/kernel.hpp"

namespace ntk {

namespace {

constexpr double kDivergenceFactor = 1e6;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
// Convergence is tested on recorded steps and every kNormCheckEvery steps.
constexpr std::size_t kNormCheckEvery = 10;

bool norm_step(std::size_t step, const TrainConfig& config) {
  return step % config.record_every == 0 || step % kNormCheckEvery == 0;
}

void check_problem(const MlpArchitecture& arch, const ParamVector& params0, const Dataset& data) {
  arch.validate();
  if (params0.size() != arch.param_count() || params0.layout() != arch.layout()) {
    throw LayoutMismatch("training: parameter layout does not match the architecture");
  }
  if (data.y.size() != data.x.rows()) {
    throw DimensionMismatch("training: x has " + std::to_string(data.x.rows()) + " rows but y has " +
                            std::to_string(data.y.size()) + " entries");
  }
  if (data.x.rows() > 0 && static_cast<std::size_t>(data.x.cols()) != arch.input_dim) {
    throw DimensionMismatch("training: inputs have " + std::to_string(data.x.cols()) +
                            " columns, architecture expects " + std::to_string(arch.input_dim));
  }
}

std::size_t lowest_trainable_layer(const std::vector<Block>& layout) {
  for (const Block& b : layout) {
    if (b.trainable) return b.layer;
  }
  return layout.back().layer;
}

// d f / d block, contracted with v over the batch.
void block_gradient(const MlpArchitecture& arch, const Block& b, const ForwardPass& pass,
                    const std::vector<Matrix>& sens, const Vector& v, double* out) {
  if (b.kind == BlockKind::weight) {
    const Matrix g = arch.layer_scale(b.layer) *
                     (sens[b.layer].transpose() * v.asDiagonal() * pass.inputs[b.layer]);
    WeightMap(out, static_cast<Eigen::Index>(b.rows), static_cast<Eigen::Index>(b.cols)) = g;
  } else {
    Eigen::Map<Vector>(out, static_cast<Eigen::Index>(b.size())) = sens[b.layer].transpose() * v;
  }
}

// Squared Frobenius distance between the per-example Jacobians of one block
// at two parameter values.
double block_drift_sq(const MlpArchitecture& arch, const Block& b, const ForwardPass& pa,
                      const std::vector<Matrix>& sa, const ForwardPass& pb,
                      const std::vector<Matrix>& sb) {
  const std::size_t k = b.layer;
  if (b.kind == BlockKind::bias) return (sa[k] - sb[k]).squaredNorm();
  // a x^T - c z^T = (a - c) x^T + c (x - z)^T per example; expanding in the
  // differences avoids cancellation when the two Jacobians nearly agree.
  const double s2 = arch.layer_scale(k) * arch.layer_scale(k);
  const Matrix da = sa[k] - sb[k];
  const Matrix dx = pa.inputs[k] - pb.inputs[k];
  const Vector aa = da.rowwise().squaredNorm();
  const Vector xx = pa.inputs[k].rowwise().squaredNorm();
  const Vector cc = sb[k].rowwise().squaredNorm();
  const Vector zz = dx.rowwise().squaredNorm();
  const Vector ac = da.cwiseProduct(sb[k]).rowwise().sum();
  const Vector xz = pa.inputs[k].cwiseProduct(dx).rowwise().sum();
  const double sum = (aa.cwiseProduct(xx) + cc.cwiseProduct(zz) + 2.0 * ac.cwiseProduct(xz)).sum();
  return s2 * std::max(sum, 0.0);
}

// Per-block rate multiplier p and penalty metric m: the update is
// -eta0 p (grad_b f-term + beta m (theta_b - theta0_b)).
enum class Metric { ntk, layerwise, uniform };

struct BlockMetric {
  double rate = 1.0;
  double penalty = 1.0;
};

BlockMetric block_metric(const MlpArchitecture& arch, const Block& b, Metric metric) {
  if (metric == Metric::ntk) return {};
  const double h = b.kind == BlockKind::weight ? 1.0 / static_cast<double>(arch.width(b.layer)) : 1.0;
  if (metric == Metric::layerwise) return {h, 1.0 / h};
  const double n = static_cast<double>(arch.depth() > 0 ? arch.width(1) : arch.input_dim);
  return {1.0 / n, 1.0 / h};
}

Eigen::VectorBlock<const Vector> block_values(const ParamVector& p, const Block& b) {
  return p.values().segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.size()));
}

// Optimization state over the trainable coordinates z. When every layer
// below the lowest trainable one is frozen and that layer's fan-in exceeds
// the number of training points, its weights are kept as W0 + C X with X the
// (fixed) layer input on the training set: gradient steps never leave that
// affine subspace, so the representation is exact and costs O(n N) instead
// of O(n^2). z stores T = C^T (N x n_out) so every product stays in the
// points-by-units layout of the forward pass.
class Problem {
 public:
  struct Eval {
    double loss = 0.0;
    double grad_norm = kNaN;  // NaN when evaluate() skipped it
    double dist = 0.0;
    Vector direction;  // preconditioned gradient, same shape as z
    ForwardPass pass;
    std::vector<Matrix> sens;
    Matrix gram_t;  // G T, factored representation only
  };

  Problem(const MlpArchitecture& arch, const ParamVector& params0, const Dataset& data,
          double beta, Metric metric, bool allow_factored)
      : arch_(arch), theta0_(params0), working_(params0), x_(data.x), y_(data.y), beta_(beta) {
    const auto& layout = params0.layout();
    lowest_ = lowest_trainable_layer(layout);
    pass0_ = forward_pass(arch_, theta0_, x_);
    sens0_ = output_sensitivities(arch_, theta0_, pass0_, lowest_);

    const Block& w = params0.block(lowest_, BlockKind::weight);
    factored_ = allow_factored && w.trainable && w.cols > static_cast<std::size_t>(x_.rows()) &&
                x_.rows() > 0;
    Eigen::Index offset = 0;
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const Block& b = layout[i];
      if (!b.trainable) continue;
      if (factored_ && b.layer == lowest_ && b.kind == BlockKind::weight) continue;
      segments_.push_back({b, offset, block_metric(arch_, b, metric)});
      offset += static_cast<Eigen::Index>(b.size());
    }
    dense_size_ = offset;
    if (factored_) {
      factored_metric_ = block_metric(arch_, w, metric);
      const Matrix& xl = pass0_.inputs[lowest_];
      gram_ = xl * xl.transpose();
      gram_ = (0.5 * (gram_ + gram_.transpose())).eval();
      base_ = xl * theta0_.weight(lowest_).transpose();
      c_rows_ = static_cast<Eigen::Index>(w.rows);
      offset += c_rows_ * x_.rows();
    }
    size_ = offset;
  }

  bool factored() const { return factored_; }
  Eigen::Index size() const { return size_; }
  const std::vector<Matrix>& sens0() const { return sens0_; }
  const ForwardPass& pass0() const { return pass0_; }

  Vector initial() const {
    Vector z = Vector::Zero(size_);
    for (const Segment& s : segments_) z.segment(s.z_offset, s.size()) = block_values(theta0_, s.block);
    return z;
  }

  // The factored block's gradient norm costs a second N x N x n product, so
  // it is only formed on request.
  Eval evaluate(const Vector& z, bool with_grad_norm = true) {
    load(z);
    Eval e;
    if (factored_) {
      // Frozen layers below stay in pass0_; only the batch itself is copied
      // (batch_size() reads it). inputs[1..lowest] and pre[0..lowest-1] are
      // left empty.
      e.pass.inputs.resize(pass0_.inputs.size());
      e.pass.pre.resize(pass0_.pre.size());
      e.pass.slope.resize(pass0_.pre.size());
      e.pass.inputs[0] = pass0_.inputs[0];
      const auto t = factored_coords(z);
      e.gram_t.noalias() = gram_ * t;
      const double s = arch_.layer_scale(lowest_);
      Matrix pre = (s * (base_ + e.gram_t)).rowwise() + working_.bias(lowest_).transpose();
      if (lowest_ + 1 == arch_.num_layers()) {
        e.pass.inputs[lowest_ + 1] = pre;
      } else {
        activate_both(arch_.activation, pre, e.pass.inputs[lowest_ + 1], e.pass.slope[lowest_]);
      }
      e.pass.pre[lowest_] = std::move(pre);
      complete_forward(arch_, working_, e.pass, lowest_ + 1);
    } else {
      e.pass = forward_pass(arch_, working_, x_);
    }
    const Vector r = e.pass.output() - y_;
    e.sens = output_sensitivities(arch_, working_, e.pass, lowest_);

    e.direction.resize(size_);
    double grad_sq = 0.0;
    double dist_sq = 0.0;
    double penalty = 0.0;
    for (const Segment& seg : segments_) {
      double* out = e.direction.data() + seg.z_offset;
      block_gradient(arch_, seg.block, e.pass, e.sens, r, out);
      auto d = e.direction.segment(seg.z_offset, seg.size());
      const Vector delta = z.segment(seg.z_offset, seg.size()) - block_values(theta0_, seg.block);
      const double delta_sq = delta.squaredNorm();
      d += (beta_ * seg.metric.penalty) * delta;
      grad_sq += d.squaredNorm();
      dist_sq += delta_sq;
      penalty += seg.metric.penalty * delta_sq;
      d *= seg.metric.rate;
    }
    if (factored_) {
      const auto t = factored_coords(z);
      Eigen::Map<Matrix> d(e.direction.data() + dense_size_, x_.rows(), c_rows_);
      const double t_sq = std::max(e.gram_t.cwiseProduct(t).sum(), 0.0);
      d.noalias() = arch_.layer_scale(lowest_) * (r.asDiagonal() * e.sens[lowest_]) +
                    (beta_ * factored_metric_.penalty) * t;
      if (with_grad_norm) grad_sq += std::max((gram_ * d).cwiseProduct(d).sum(), 0.0);
      dist_sq += t_sq;
      penalty += factored_metric_.penalty * t_sq;
      d *= factored_metric_.rate;
    }
    e.loss = 0.5 * r.squaredNorm() + 0.5 * beta_ * penalty;
    if (with_grad_norm || !factored_) e.grad_norm = std::sqrt(grad_sq);
    e.dist = std::sqrt(dist_sq);
    return e;
  }

  double drift(const Eval& e) const {
    double sum = 0.0;
    for (const Block& b : theta0_.layout()) {
      if (!b.trainable) continue;
      // The factored block's layer input is the frozen one kept in pass0_.
      const bool frozen_input = factored_ && b.layer == lowest_ && b.kind == BlockKind::weight;
      sum += block_drift_sq(arch_, b, frozen_input ? pass0_ : e.pass, e.sens, pass0_, sens0_);
    }
    return std::sqrt(sum);
  }

  // |theta(z) - (theta0 + J0^T c)| over trainable blocks.
  double reference_distance(const Vector& z, const Vector& coeffs) const {
    if (coeffs.size() != x_.rows()) {
      throw DimensionMismatch("reference coefficients must have one entry per training point");
    }
    double sum = 0.0;
    for (const Segment& seg : segments_) {
      Vector ref(seg.size());
      block_gradient(arch_, seg.block, pass0_, sens0_, coeffs, ref.data());
      ref += block_values(theta0_, seg.block);
      sum += (z.segment(seg.z_offset, seg.size()) - ref).squaredNorm();
    }
    if (factored_) {
      const Matrix delta =
          factored_coords(z) - arch_.layer_scale(lowest_) * (coeffs.asDiagonal() * sens0_[lowest_]);
      sum += std::max((gram_ * delta).cwiseProduct(delta).sum(), 0.0);
    }
    return std::sqrt(sum);
  }

  ParamVector materialize(const Vector& z) const {
    ParamVector out = theta0_;
    for (const Segment& seg : segments_) {
      out.values().segment(static_cast<Eigen::Index>(seg.block.offset), seg.size()) =
          z.segment(seg.z_offset, seg.size());
    }
    if (factored_) {
      out.weight(lowest_) += factored_coords(z).transpose() * pass0_.inputs[lowest_];
    }
    return out;
  }

  // Cached frozen part of the forward pass on a fixed point set.
  struct Probe {
    ForwardPass pass;
    Matrix base;   // x_l W0^T
    Matrix cross;  // x_l X_l^T
  };

  Probe make_probe(const Matrix& points) const {
    Probe p;
    p.pass = forward_pass(arch_, theta0_, points);
    if (factored_) {
      const Matrix& pl = p.pass.inputs[lowest_];
      p.base = pl * theta0_.weight(lowest_).transpose();
      p.cross = pl * pass0_.inputs[lowest_].transpose();
    }
    return p;
  }

  Vector predict(const Vector& z, Probe& probe) {
    load(z);
    if (!factored_) {
      complete_forward(arch_, working_, probe.pass, lowest_);
      return probe.pass.output();
    }
    Matrix pre = probe.base + probe.cross * factored_coords(z);
    const double s = arch_.layer_scale(lowest_);
    if (s != 1.0) pre *= s;
    pre.rowwise() += working_.bias(lowest_).transpose();
    const bool last = lowest_ + 1 == arch_.num_layers();
    probe.pass.inputs[lowest_ + 1] = last ? pre : activate(arch_.activation, pre);
    probe.pass.pre[lowest_] = std::move(pre);
    probe.pass.slope[lowest_].resize(0, 0);
    complete_forward(arch_, working_, probe.pass, lowest_ + 1);
    return probe.pass.output();
  }

  /// Kernel J P J^T of the preconditioned update at theta0 (training points).
  Matrix update_kernel() const {
    Matrix k = Matrix::Zero(x_.rows(), x_.rows());
    for (const Block& b : theta0_.layout()) {
      if (!b.trainable) continue;
      const std::size_t l = b.layer;
      const Matrix sg = sens0_[l] * sens0_[l].transpose();
      if (b.kind == BlockKind::bias) {
        k += metric_of(b).rate * sg;
      } else {
        const double s = arch_.layer_scale(l);
        const Matrix ig = pass0_.inputs[l] * pass0_.inputs[l].transpose();
        k.noalias() += (metric_of(b).rate * s * s) * sg.cwiseProduct(ig);
      }
    }
    return k;
  }

  /// Largest rate * penalty product; bounds the penalty's curvature in the
  /// preconditioned metric.
  double max_penalty_curvature() const {
    double m = 0.0;
    for (const Block& b : theta0_.layout()) {
      if (b.trainable) m = std::max(m, metric_of(b).rate * metric_of(b).penalty);
    }
    return m;
  }

 private:
  struct Segment {
    Block block;
    Eigen::Index z_offset;
    BlockMetric metric;
    Eigen::Index size() const { return static_cast<Eigen::Index>(block.size()); }
  };

  BlockMetric metric_of(const Block& b) const {
    if (factored_ && b.layer == lowest_ && b.kind == BlockKind::weight) return factored_metric_;
    for (const Segment& s : segments_) {
      if (s.block == b) return s.metric;
    }
    return {};
  }

  Eigen::Map<const Matrix> factored_coords(const Vector& z) const {
    return {z.data() + dense_size_, x_.rows(), c_rows_};
  }

  void load(const Vector& z) {
    for (const Segment& seg : segments_) {
      working_.values().segment(static_cast<Eigen::Index>(seg.block.offset), seg.size()) =
          z.segment(seg.z_offset, seg.size());
    }
  }

  const MlpArchitecture& arch_;
  ParamVector theta0_;
  ParamVector working_;
  Matrix x_;
  Vector y_;
  double beta_;
  std::size_t lowest_ = 0;
  ForwardPass pass0_;
  std::vector<Matrix> sens0_;
  bool factored_ = false;
  std::vector<Segment> segments_;
  BlockMetric factored_metric_;
  Eigen::Index dense_size_ = 0;
  Eigen::Index c_rows_ = 0;
  Eigen::Index size_ = 0;
  Matrix gram_;
  Matrix base_;
};

double resolve_learning_rate(const Problem& problem, const TrainConfig& config) {
  if (config.eta0) return *config.eta0;
  const Matrix k = problem.update_kernel();
  const double lambda = k.rows() > 0 ? max_eigenvalue(SymMatrix(k, 1e-8)) : 0.0;
  const double denom = lambda + config.beta * problem.max_penalty_curvature();
  if (!(denom > 0.0)) throw InvalidArgument("auto learning rate: kernel and penalty both vanish");
  return 1.0 / denom;
}

class Recorder {
 public:
  Recorder(Problem& problem, const TrainConfig& config, TrainResult& result)
      : problem_(problem), config_(config), result_(result) {
    if (config.probe_points) probe_.emplace(problem.make_probe(*config.probe_points));
  }

  void record(double step, const Vector& z, const Problem::Eval& e) {
    TraceRecord r;
    r.step = step;
    r.loss = e.loss;
    r.grad_norm = e.grad_norm;
    r.dist_from_init = e.dist;
    r.jacobian_drift = config_.record_jacobian_drift ? problem_.drift(e) : kNaN;
    r.reference_distance = config_.reference_coefficients
                               ? problem_.reference_distance(z, config_.reference_coefficients(step))
                               : kNaN;
    if (probe_) r.probe_predictions = problem_.predict(z, *probe_);
    result_.trace.records.push_back(std::move(r));
    if (config_.keep_parameter_history) result_.history.push_back(problem_.materialize(z));
    last_ = step;
  }

  bool recorded(double step) const { return last_ && *last_ == step; }

 private:
  Problem& problem_;
  const TrainConfig& config_;
  TrainResult& result_;
  std::optional<Problem::Probe> probe_;
  std::optional<double> last_;
};

void check_divergence(const Problem::Eval& e, double initial_loss, double where) {
  if (!std::isfinite(e.loss) || e.loss > kDivergenceFactor * std::max(initial_loss, 1e-300)) {
    throw Diverged("training diverged at " + std::to_string(where) + ": loss " +
                   std::to_string(e.loss) + " vs initial " + std::to_string(initial_loss));
  }
}

TrainResult run_descent(const MlpArchitecture& arch, const ParamVector& params0,
                        const Dataset& data, const TrainConfig& config, Metric metric) {
  config.validate();
  check_problem(arch, params0, data);
  Problem problem(arch, params0, data, config.beta, metric, config.allow_factored);
  TrainResult result;
  result.factored = problem.factored();
  result.eta0 = resolve_learning_rate(problem, config);
  Recorder recorder(problem, config, result);

  Vector z = problem.initial();
  Problem::Eval e = problem.evaluate(z);
  const double initial_loss = e.loss;
  recorder.record(0.0, z, e);
  std::size_t step = 0;
  while (true) {
    if (e.grad_norm <= config.grad_tol) {
      result.converged = true;
      break;
    }
    if (step >= config.max_steps) break;
    z.noalias() -= result.eta0 * e.direction;
    ++step;
    e = problem.evaluate(z, norm_step(step, config));
    check_divergence(e, initial_loss, static_cast<double>(step));
    if (step % config.record_every == 0) recorder.record(static_cast<double>(step), z, e);
  }
  if (std::isnan(e.grad_norm)) e = problem.evaluate(z);
  if (!recorder.recorded(static_cast<double>(step))) recorder.record(static_cast<double>(step), z, e);
  result.steps = step;
  result.time = static_cast<double>(step);
  result.params = problem.materialize(z);
  return result;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(beta >= 0.0)) throw InvalidArgument("TrainConfig: beta must be nonnegative");
  if (eta0 && !(*eta0 > 0.0)) throw InvalidArgument("TrainConfig: eta0 must be positive");
  if (!(grad_tol > 0.0)) throw InvalidArgument("TrainConfig: grad_tol must be positive");
  if (!(flow_step > 0.0)) throw InvalidArgument("TrainConfig: flow_step must be positive");
  if (flow_time && !(*flow_time >= 0.0)) {
    throw InvalidArgument("TrainConfig: flow_time must be nonnegative");
  }
  if (record_every == 0) throw InvalidArgument("TrainConfig: record_every must be positive");
}

std::vector<double> TrainTrace::column(double TraceRecord::*field) const {
  std::vector<double> out;
  out.reserve(records.size());
  for (const TraceRecord& r : records) out.push_back(r.*field);
  return out;
}

double reg_loss(const MlpArchitecture& arch, const ParamVector& params,
                const ParamVector& params0, const Dataset& data, double beta) {
  check_problem(arch, params0, data);
  if (!params.same_layout(params0)) throw DimensionMismatch("reg_loss: parameter layouts differ");
  const Vector r = forward(arch, params, data.x) - data.y;
  return 0.5 * r.squaredNorm() + 0.5 * beta * (params.values() - params0.values()).squaredNorm();
}

Vector reg_grad(const MlpArchitecture& arch, const ParamVector& params,
                const ParamVector& params0, const Dataset& data, double beta) {
  check_problem(arch, params0, data);
  if (!params.same_layout(params0)) throw DimensionMismatch("reg_grad: parameter layouts differ");
  const ForwardPass pass = forward_pass(arch, params, data.x);
  const auto sens = output_sensitivities(arch, params, pass, lowest_trainable_layer(params.layout()));
  Vector g = vjp(arch, params, pass, sens, Vector(pass.output() - data.y), true);
  Vector penalty = beta * (params.values() - params0.values());
  apply_trainable_mask(params.layout(), penalty);
  return g + penalty;
}

double auto_learning_rate(const MlpArchitecture& arch, const ParamVector& params0,
                          const Matrix& x, double beta) {
  const GramMatrix k = empirical_ntk(arch, params0, x, x, true);
  const double lambda = k.rows() > 0 ? max_eigenvalue(k.symmetric()) : 0.0;
  if (!(lambda + beta > 0.0)) throw InvalidArgument("auto_learning_rate: kernel and beta both vanish");
  return 1.0 / (lambda + beta);
}

TrainResult gd_train(const MlpArchitecture& arch, const ParamVector& params0,
                     const Dataset& data, const TrainConfig& config) {
  return run_descent(arch, params0, data, config, Metric::ntk);
}

TrainResult std_train(const MlpArchitecture& arch_standard, const ParamVector& params0_std,
                      const Dataset& data, const TrainConfig& config) {
  if (arch_standard.parametrization != Parametrization::standard) {
    throw InvalidArgument("std_train: architecture must use standard parametrization");
  }
  return run_descent(arch_standard, params0_std, data, config,
                     config.uniform_learning_rate ? Metric::uniform : Metric::layerwise);
}

TrainResult flow_integrate(const MlpArchitecture& arch, const ParamVector& params0,
                           const Dataset& data, const TrainConfig& config) {
  config.validate();
  check_problem(arch, params0, data);
  Problem problem(arch, params0, data, config.beta, Metric::ntk, config.allow_factored);
  TrainResult result;
  result.factored = problem.factored();
  result.eta0 = resolve_learning_rate(problem, config);

  const Matrix k = problem.update_kernel();
  const double lambda = k.rows() > 0 ? max_eigenvalue(SymMatrix(k, 1e-8)) : 0.0;
  const double stiffness = config.flow_step * result.eta0 * (lambda + config.beta);
  if (stiffness > 0.5) {
    throw InvalidArgument("flow_integrate: flow_step * eta0 * (lambda_max + beta) = " +
                          std::to_string(stiffness) + " exceeds 0.5");
  }
  Recorder recorder(problem, config, result);

  const double t_end = config.flow_time.value_or(std::numeric_limits<double>::infinity());
  Vector z = problem.initial();
  Problem::Eval e = problem.evaluate(z);
  const double initial_loss = e.loss;
  recorder.record(0.0, z, e);
  double t = 0.0;
  std::size_t step = 0;
  while (t < t_end) {
    if (!config.flow_time && e.grad_norm <= config.grad_tol) {
      result.converged = true;
      break;
    }
    if (step >= config.max_steps) break;
    const double h = std::min(config.flow_step, t_end - t);
    const double a = result.eta0 * h;
    const Vector k1 = e.direction;
    const Vector k2 = problem.evaluate(z - (0.5 * a) * k1, false).direction;
    const Vector k3 = problem.evaluate(z - (0.5 * a) * k2, false).direction;
    const Vector k4 = problem.evaluate(z - a * k3, false).direction;
    z.noalias() -= (a / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    ++step;
    t = (t_end - t <= config.flow_step) ? t_end : t + h;
    e = problem.evaluate(z, norm_step(step, config));
    check_divergence(e, initial_loss, t);
    if (step % config.record_every == 0) recorder.record(t, z, e);
  }
  if (std::isnan(e.grad_norm)) e = problem.evaluate(z);
  if (config.flow_time && e.grad_norm <= config.grad_tol) result.converged = true;
  if (!recorder.recorded(t)) recorder.record(t, z, e);
  result.steps = step;
  result.time = t;
  result.params = problem.materialize(z);
  return result;
}

UniformRateShares uniform_rate_shares(const MlpArchitecture& arch_standard,
                                      const ParamVector& params_std, const Matrix& x) {
  if (arch_standard.parametrization != Parametrization::standard) {
    throw InvalidArgument("uniform_rate_shares: architecture must use standard parametrization");
  }
  const ForwardPass pass = forward_pass(arch_standard, params_std, x);
  const auto sens = output_sensitivities(arch_standard, params_std, pass, 0);
  double first = 0.0;
  double biases = 0.0;
  double total = 0.0;
  for (const Block& b : params_std.layout()) {
    const std::size_t k = b.layer;
    double tr = 0.0;
    if (b.kind == BlockKind::bias) {
      tr = sens[k].squaredNorm();
      biases += tr;
    } else {
      tr = sens[k].rowwise().squaredNorm().dot(pass.inputs[k].rowwise().squaredNorm());
      if (k == 0) first += tr;
    }
    total += tr;
  }
  const double n =
      static_cast<double>(arch_standard.depth() > 0 ? arch_standard.width(1) : arch_standard.input_dim);
  UniformRateShares out;
  out.total_trace = total / n;
  if (total > 0.0) {
    out.first_layer = first / total;
    out.biases = biases / total;
  }
  return out;
}

double jacobian_drift(const MlpArchitecture& arch, const ParamVector& params,
                      const ParamVector& params0, const Matrix& x) {
  if (!params.same_layout(params0)) throw LayoutMismatch("jacobian_drift: layouts differ");
  const std::size_t lowest = lowest_trainable_layer(params.layout());
  const ForwardPass pa = forward_pass(arch, params, x);
  const ForwardPass pb = forward_pass(arch, params0, x);
  const auto sa = output_sensitivities(arch, params, pa, lowest);
  const auto sb = output_sensitivities(arch, params0, pb, lowest);
  double sum = 0.0;
  for (const Block& b : params.layout()) {
    if (b.trainable) sum += block_drift_sq(arch, b, pa, sa, pb, sb);
  }
  return std::sqrt(sum);
}

Vector ShiftedPredictor::evaluate(const Matrix& x) const {
  return shifted_forward(arch, params, params0, prior, x);
}

PriorMean ShiftedPredictor::as_prior() const {
  return PriorMean::pretrained_network(arch, params, params0, prior);
}

ShiftedTrainResult shifted_train(const MlpArchitecture& arch, const ParamVector& params0,
                                 const Dataset& data, const PriorMean& prior,
                                 const TrainConfig& config) {
  config.validate();
  ShiftedTrainResult out{{arch, params0, params0, prior}, {}};
  out.train.params = params0;
  if (data.size() == 0) {
    out.train.converged = true;
    return out;
  }
  check_problem(arch, params0, data);
  Dataset shifted = data;
  shifted.y = data.y + forward(arch, params0, data.x) - prior.evaluate(data.x);
  out.train = gd_train(arch, params0, shifted, config);
  out.predictor.params = out.train.params;
  return out;
}

}  // namespace ntk
