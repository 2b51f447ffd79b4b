#pragma once

// Finite-width fully connected networks with a scalar output, in NTK or
// standard parametrization.
//
// Layers are indexed from 0: layer k maps x^k (width n_k) to the
// pre-activation h^{k+1} (width n_{k+1}), with n_0 = input_dim and
// n_{L+1} = 1. The flat parameter vector stores, for each layer in order,
// the weight matrix W (row-major, n_{k+1} x n_k) followed by the bias b.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ntk/linalg.hpp"

namespace ntk {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using WeightMap = Eigen::Map<RowMajorMatrix>;
using ConstWeightMap = Eigen::Map<const RowMajorMatrix>;

enum class Activation { erf, tanh, softplus, relu, identity };
enum class Parametrization { ntk, standard };
enum class BlockKind { weight, bias };

std::string to_string(Activation a);
std::string to_string(Parametrization p);
Activation parse_activation(const std::string& s);
Parametrization parse_parametrization(const std::string& s);

/// phi(h) and phi'(h) elementwise.
Matrix activate(Activation a, const Matrix& h);
Matrix activate_derivative(Activation a, const Matrix& h);
/// Both at once, sharing the transcendental work where the activation allows.
void activate_both(Activation a, const Matrix& h, Matrix& phi, Matrix& slope);

struct Block {
  std::size_t layer = 0;
  BlockKind kind = BlockKind::weight;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool trainable = true;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Block&) const = default;
};

struct MlpArchitecture {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden_widths;  // n_1..n_L, all equal
  Activation activation = Activation::erf;
  std::vector<double> sigma_w;  // one entry per layer (L + 1)
  std::vector<double> sigma_b;
  Parametrization parametrization = Parametrization::ntk;
  bool train_first_layer_and_biases = false;

  /// `depth` hidden layers of `width` units with the same sigma_w / sigma_b
  /// on every layer.
  static MlpArchitecture uniform(std::size_t input_dim, std::size_t width, std::size_t depth,
                                 Activation activation = Activation::erf,
                                 Parametrization parametrization = Parametrization::ntk,
                                 double sigma_w = 1.0, double sigma_b = 0.1);

  std::size_t depth() const { return hidden_widths.size(); }
  std::size_t num_layers() const { return hidden_widths.size() + 1; }
  /// n_k for k in [0, L + 1].
  std::size_t width(std::size_t k) const;
  /// Sum over layers of (n_k + 1) n_{k+1}.
  std::size_t param_count() const;

  /// Whether the optimizer moves this block. With
  /// train_first_layer_and_biases off, the first layer's weights (when there
  /// is at least one hidden layer) and every bias stay at initialization.
  bool is_trainable(std::size_t layer, BlockKind kind) const;

  /// 1/sqrt(n_k) under NTK parametrization, 1 under standard.
  double layer_scale(std::size_t layer) const;

  std::vector<Block> layout() const;

  /// Throws InvalidArgument when the architecture is malformed.
  void validate() const;

  bool operator==(const MlpArchitecture&) const = default;
};

/// Flat parameter vector together with its block layout.
class ParamVector {
 public:
  ParamVector() = default;
  ParamVector(std::shared_ptr<const std::vector<Block>> layout, Vector values);

  static ParamVector zeros(const MlpArchitecture& arch);

  const Vector& values() const { return values_; }
  Vector& values() { return values_; }
  std::size_t size() const { return static_cast<std::size_t>(values_.size()); }
  const std::vector<Block>& layout() const { return *layout_; }
  const std::shared_ptr<const std::vector<Block>>& shared_layout() const { return layout_; }

  const Block& block(std::size_t layer, BlockKind kind) const;
  std::size_t num_layers() const { return layout_ ? layout_->size() / 2 : 0; }

  WeightMap weight(std::size_t layer);
  ConstWeightMap weight(std::size_t layer) const;
  Eigen::Map<Vector> bias(std::size_t layer);
  Eigen::Map<const Vector> bias(std::size_t layer) const;

  bool same_layout(const ParamVector& other) const;

  /// Copy with `values` swapped in; throws LayoutMismatch on a size mismatch.
  ParamVector with_values(Vector values) const;

 private:
  std::shared_ptr<const std::vector<Block>> layout_;
  Vector values_;
};

/// 1 for entries of trainable blocks, 0 elsewhere.
Vector trainable_mask(const ParamVector& params);
/// Zeroes the entries of frozen blocks in a parameter-shaped vector.
void apply_trainable_mask(const std::vector<Block>& layout, Vector& v);

/// Diagonal of H: 1/n_k on layer k's weights, 1 on biases.
struct ScalingMatrixH {
  std::shared_ptr<const std::vector<Block>> layout;
  Vector diagonal;

  static ScalingMatrixH for_architecture(const MlpArchitecture& arch);
  Vector sqrt() const;
  Vector inv_sqrt() const;
};

enum class MappingDirection { std_to_ntk, ntk_to_std };

/// theta_ntk = H^{-1/2} theta_std and its inverse.
ParamVector map_parametrization(const ParamVector& params, const ScalingMatrixH& h,
                                MappingDirection direction);

/// Deterministic initialization in the architecture's parametrization.
/// Draws are keyed by (seed, layer, row, column), so entries that exist at
/// two widths get the same underlying normal variate. Standard
/// parametrization is exactly H^{1/2} times the NTK draw.
ParamVector init_params(const MlpArchitecture& arch, std::uint64_t seed);

/// Activations of one batched forward evaluation (one row per example).
struct ForwardPass {
  std::vector<Matrix> inputs;  // inputs[k] = x^k, N x n_k; inputs[0] is the batch
  std::vector<Matrix> pre;     // pre[k] = h^{k+1}, N x n_{k+1}
  std::vector<Matrix> slope;   // phi'(pre[k]) for hidden layers; empty entries are recomputed

  Vector output() const { return pre.back().col(0); }
  Eigen::Index batch_size() const { return inputs.front().rows(); }
};

ForwardPass forward_pass(const MlpArchitecture& arch, const ParamVector& params,
                         const Matrix& x);

/// Recomputes pre[k] and inputs[k + 1] for k >= `layer`, reading inputs[layer].
void complete_forward(const MlpArchitecture& arch, const ParamVector& params,
                      ForwardPass& pass, std::size_t layer);

Vector forward(const MlpArchitecture& arch, const ParamVector& params, const Matrix& x);
double forward(const MlpArchitecture& arch, const ParamVector& params, const Vector& x);

/// sens[k] = d f / d pre[k] per example (N x n_{k+1}), for k >= lowest_layer.
/// Entries below lowest_layer are left empty.
std::vector<Matrix> output_sensitivities(const MlpArchitecture& arch, const ParamVector& params,
                                         const ForwardPass& pass, std::size_t lowest_layer = 0);

/// J^T v using precomputed sensitivities. With trainable_only, frozen blocks
/// are left at zero and not computed.
Vector vjp(const MlpArchitecture& arch, const ParamVector& params, const ForwardPass& pass,
           const std::vector<Matrix>& sens, const Vector& cotangent, bool trainable_only);

Vector vjp(const MlpArchitecture& arch, const ParamVector& params, const Matrix& x,
           const Vector& cotangent, bool trainable_only);

/// J v by forward-mode propagation of a parameter tangent.
Vector jvp(const MlpArchitecture& arch, const ParamVector& params, const ForwardPass& pass,
           const Vector& tangent);

/// Dense N x p Jacobian of f with respect to every parameter (frozen blocks
/// included).
Matrix jacobian(const MlpArchitecture& arch, const ParamVector& params, const Matrix& x);

/// Parameters with the output layer's weights and bias set to zero.
ParamVector zero_last_layer(const ParamVector& params);

/// Prior mean function m(x) for shifted networks.
class PriorMean {
 public:
  enum class Kind { zero, constant, tabulated, pretrained_network };
  using Function = std::function<double(const Vector&)>;

  static PriorMean zero();
  static PriorMean constant(double c);
  static PriorMean tabulated(Function fn);
  /// m(x) = f(x, trained) - f(x, initial) + base(x): a shifted predictor
  /// frozen after training.
  static PriorMean pretrained_network(MlpArchitecture arch, ParamVector trained,
                                      ParamVector initial, PriorMean base = PriorMean::zero());

  Kind kind() const { return kind_; }
  Vector evaluate(const Matrix& x) const;
  double evaluate(const Vector& x) const;

 private:
  struct Network;
  Kind kind_ = Kind::zero;
  double constant_ = 0.0;
  Function fn_;
  std::shared_ptr<const Network> network_;
};

/// f(x, theta) - f(x, theta0) + m(x), row-wise over x.
Vector shifted_forward(const MlpArchitecture& arch, const ParamVector& params,
                       const ParamVector& params0, const PriorMean& m, const Matrix& x);
double shifted_forward(const MlpArchitecture& arch, const ParamVector& params,
                       const ParamVector& params0, const PriorMean& m, const Vector& x);

}  // namespace ntk
