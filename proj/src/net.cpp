#include "ntk/net.hpp"

#include <cmath>
#include <numbers>

#include "ntk/error.hpp"
#include "ntk/random.hpp"

namespace ntk {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::erf: return "erf";
    case Activation::tanh: return "tanh";
    case Activation::softplus: return "softplus";
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
  }
  return "unknown";
}

std::string to_string(Parametrization p) {
  return p == Parametrization::ntk ? "ntk" : "standard";
}

Activation parse_activation(const std::string& s) {
  if (s == "erf") return Activation::erf;
  if (s == "tanh") return Activation::tanh;
  if (s == "softplus") return Activation::softplus;
  if (s == "relu") return Activation::relu;
  if (s == "identity" || s == "linear") return Activation::identity;
  throw InvalidArgument("unknown activation '" + s + "'");
}

Parametrization parse_parametrization(const std::string& s) {
  if (s == "ntk") return Parametrization::ntk;
  if (s == "standard" || s == "std") return Parametrization::standard;
  throw InvalidArgument("unknown parametrization '" + s + "'");
}

namespace {

// erf for whole arrays, written so the compiler can vectorize it (glibc's
// scalar erf dominated training time). For |x| < 2.5 it sums the all-positive
// series erf(x) = 2/sqrt(pi) exp(-x^2) sum_n 2^n x^(2n+1) / (2n+1)!!; above
// that it uses the erfc continued fraction. Both agree with std::erf to a few
// ulps.
constexpr int kChunk = 64;
constexpr int kSeriesTerms = 50;
constexpr int kFractionDepth = 40;
constexpr double kSeriesLimit = 2.5;
using Chunk = Eigen::Array<double, kChunk, 1>;

Chunk erf_chunk(const Chunk& x) {
  const Chunk ax = x.abs().min(6.0);
  const double top = ax.maxCoeff();
  Chunk mag = Chunk::Zero();
  if (ax.minCoeff() < kSeriesLimit) {
    const Chunk sx = ax.min(kSeriesLimit);
    const Chunk sx2 = sx * sx;
    Chunk term = sx;
    Chunk sum = sx;
    for (int n = 1; n < kSeriesTerms; ++n) {
      term *= (2.0 / (2 * n + 1)) * sx2;
      sum += term;
      if (n % 4 == 0 && (term <= 1e-17 * sum).all()) break;
    }
    mag = (2.0 / std::sqrt(std::numbers::pi)) * (-sx2).exp() * sum;
  }
  if (top >= kSeriesLimit) {
    const Chunk fx = ax.max(kSeriesLimit);
    Chunk f = fx;
    for (int k = kFractionDepth; k > 0; --k) f = fx + (0.5 * k) / f;
    const Chunk tail = 1.0 - (-fx * fx).exp() / (std::sqrt(std::numbers::pi) * f);
    mag = (ax < kSeriesLimit).select(mag, tail);
  }
  return (x < 0.0).select(-mag, mag);
}

Matrix erf_array(const Matrix& h) {
  Matrix out(h.rows(), h.cols());
  const Eigen::Index n = h.size();
  const double* in = h.data();
  double* dst = out.data();
  Eigen::Index i = 0;
  for (; i + kChunk <= n; i += kChunk) {
    Eigen::Map<Chunk>(dst + i) = erf_chunk(Eigen::Map<const Chunk>(in + i));
  }
  if (i < n) {
    Chunk rest = Chunk::Zero();
    rest.head(n - i) = Eigen::Map<const Eigen::ArrayXd>(in + i, n - i);
    const Chunk r = erf_chunk(rest);
    Eigen::Map<Eigen::ArrayXd>(dst + i, n - i) = r.head(n - i);
  }
  return out;
}

}  // namespace

Matrix activate(Activation a, const Matrix& h) {
  switch (a) {
    case Activation::erf:
      return erf_array(h);
    case Activation::tanh:
      return h.array().tanh().matrix();
    case Activation::softplus:
    {
      // max(v, 0) + log1p(e^{-|v|}). log1p is written as u log(w) / (w - 1),
      // w = 1 + u, which keeps full accuracy for small u and vectorizes.
      const Eigen::ArrayXXd u = (-h.array().abs()).exp();
      const Eigen::ArrayXXd w = 1.0 + u;
      // Evaluated apart from the select, which has no packet path.
      const Eigen::ArrayXXd q = u * w.log() / (w - 1.0);
      const Eigen::ArrayXXd l = (w == 1.0).select(u, q);
      return (h.array().max(0.0) + l).matrix();
    }
    case Activation::relu:
      return h.cwiseMax(0.0);
    case Activation::identity:
      return h;
  }
  return h;
}

void activate_both(Activation a, const Matrix& h, Matrix& phi, Matrix& slope) {
  switch (a) {
    case Activation::softplus: {
      const Eigen::ArrayXXd u = (-h.array().abs()).exp();
      const Eigen::ArrayXXd w = 1.0 + u;
      const Eigen::ArrayXXd inv = w.inverse();
      const Eigen::ArrayXXd q = u * w.log() / (w - 1.0);
      phi = (h.array().max(0.0) + (w == 1.0).select(u, q)).matrix();
      slope = (h.array() >= 0.0).select(inv, u * inv).matrix();
      return;
    }
    case Activation::tanh:
      phi = h.array().tanh().matrix();
      slope = (1.0 - phi.array().square()).matrix();
      return;
    default:
      phi = activate(a, h);
      slope = activate_derivative(a, h);
  }
}

Matrix activate_derivative(Activation a, const Matrix& h) {
  switch (a) {
    case Activation::erf: {
      const double c = 2.0 / std::sqrt(std::numbers::pi);
      return (c * (-h.array().square()).exp()).matrix();
    }
    case Activation::tanh:
      return h.unaryExpr([](double v) {
        const double t = std::tanh(v);
        return 1.0 - t * t;
      });
    case Activation::softplus:
    {
      const Eigen::ArrayXXd e = (-h.array().abs()).exp();
      const Eigen::ArrayXXd inv = (1.0 + e).inverse();
      return (h.array() >= 0.0).select(inv, e * inv).matrix();
    }
    case Activation::relu:
      return h.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
    case Activation::identity:
      return Matrix::Ones(h.rows(), h.cols());
  }
  return h;
}

// ---------------------------------------------------------------------------
// Architecture

MlpArchitecture MlpArchitecture::uniform(std::size_t input_dim, std::size_t width,
                                         std::size_t depth, Activation activation,
                                         Parametrization parametrization, double sigma_w,
                                         double sigma_b) {
  MlpArchitecture arch;
  arch.input_dim = input_dim;
  arch.hidden_widths.assign(depth, width);
  arch.activation = activation;
  arch.sigma_w.assign(depth + 1, sigma_w);
  arch.sigma_b.assign(depth + 1, sigma_b);
  arch.parametrization = parametrization;
  arch.validate();
  return arch;
}

std::size_t MlpArchitecture::width(std::size_t k) const {
  if (k == 0) return input_dim;
  if (k <= hidden_widths.size()) return hidden_widths[k - 1];
  if (k == hidden_widths.size() + 1) return 1;
  throw InvalidArgument("MlpArchitecture::width: layer index out of range");
}

std::size_t MlpArchitecture::param_count() const {
  std::size_t p = 0;
  for (std::size_t k = 0; k < num_layers(); ++k) p += (width(k) + 1) * width(k + 1);
  return p;
}

bool MlpArchitecture::is_trainable(std::size_t layer, BlockKind kind) const {
  if (train_first_layer_and_biases) return true;
  if (kind == BlockKind::bias) return false;
  return layer > 0 || depth() == 0;
}

double MlpArchitecture::layer_scale(std::size_t layer) const {
  if (parametrization == Parametrization::standard) return 1.0;
  return 1.0 / std::sqrt(static_cast<double>(width(layer)));
}

std::vector<Block> MlpArchitecture::layout() const {
  std::vector<Block> blocks;
  blocks.reserve(2 * num_layers());
  std::size_t offset = 0;
  for (std::size_t k = 0; k < num_layers(); ++k) {
    const std::size_t in = width(k);
    const std::size_t out = width(k + 1);
    blocks.push_back({k, BlockKind::weight, offset, out, in, is_trainable(k, BlockKind::weight)});
    offset += in * out;
    blocks.push_back({k, BlockKind::bias, offset, out, 1, is_trainable(k, BlockKind::bias)});
    offset += out;
  }
  return blocks;
}

void MlpArchitecture::validate() const {
  if (input_dim == 0) throw InvalidArgument("architecture: input_dim must be positive");
  for (std::size_t n : hidden_widths) {
    if (n == 0) throw InvalidArgument("architecture: hidden widths must be positive");
    if (n != hidden_widths.front())
      throw InvalidArgument("architecture: hidden widths must all be equal");
  }
  if (sigma_w.size() != num_layers() || sigma_b.size() != num_layers()) {
    throw InvalidArgument("architecture: need one sigma_w and sigma_b per layer (" +
                          std::to_string(num_layers()) + ")");
  }
  for (std::size_t k = 0; k < num_layers(); ++k) {
    if (!(sigma_w[k] >= 0.0) || !(sigma_b[k] >= 0.0))
      throw InvalidArgument("architecture: sigma_w and sigma_b must be nonnegative");
  }
}

// ---------------------------------------------------------------------------
// ParamVector

ParamVector::ParamVector(std::shared_ptr<const std::vector<Block>> layout, Vector values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  std::size_t total = 0;
  for (const Block& b : *layout_) {
    if (b.offset != total) throw LayoutMismatch("ParamVector: layout is not contiguous");
    total += b.size();
  }
  if (total != static_cast<std::size_t>(values_.size())) {
    throw LayoutMismatch("ParamVector: layout covers " + std::to_string(total) +
                         " entries but vector has " + std::to_string(values_.size()));
  }
}

ParamVector ParamVector::zeros(const MlpArchitecture& arch) {
  arch.validate();
  auto layout = std::make_shared<const std::vector<Block>>(arch.layout());
  return ParamVector(layout, Vector::Zero(static_cast<Eigen::Index>(arch.param_count())));
}

const Block& ParamVector::block(std::size_t layer, BlockKind kind) const {
  const std::size_t idx = 2 * layer + (kind == BlockKind::bias ? 1 : 0);
  if (!layout_ || idx >= layout_->size()) {
    throw LayoutMismatch("ParamVector: no block for layer " + std::to_string(layer));
  }
  return (*layout_)[idx];
}

WeightMap ParamVector::weight(std::size_t layer) {
  const Block& b = block(layer, BlockKind::weight);
  return WeightMap(values_.data() + b.offset, static_cast<Eigen::Index>(b.rows),
                   static_cast<Eigen::Index>(b.cols));
}

ConstWeightMap ParamVector::weight(std::size_t layer) const {
  const Block& b = block(layer, BlockKind::weight);
  return ConstWeightMap(values_.data() + b.offset, static_cast<Eigen::Index>(b.rows),
                        static_cast<Eigen::Index>(b.cols));
}

Eigen::Map<Vector> ParamVector::bias(std::size_t layer) {
  const Block& b = block(layer, BlockKind::bias);
  return Eigen::Map<Vector>(values_.data() + b.offset, static_cast<Eigen::Index>(b.rows));
}

Eigen::Map<const Vector> ParamVector::bias(std::size_t layer) const {
  const Block& b = block(layer, BlockKind::bias);
  return Eigen::Map<const Vector>(values_.data() + b.offset, static_cast<Eigen::Index>(b.rows));
}

bool ParamVector::same_layout(const ParamVector& other) const {
  if (layout_ == other.layout_) return true;
  if (!layout_ || !other.layout_) return false;
  return *layout_ == *other.layout_;
}

ParamVector ParamVector::with_values(Vector values) const {
  return ParamVector(layout_, std::move(values));
}

Vector trainable_mask(const ParamVector& params) {
  Vector mask = Vector::Zero(static_cast<Eigen::Index>(params.size()));
  for (const Block& b : params.layout()) {
    if (b.trainable)
      mask.segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.size()))
          .setOnes();
  }
  return mask;
}

void apply_trainable_mask(const std::vector<Block>& layout, Vector& v) {
  for (const Block& b : layout) {
    if (!b.trainable)
      v.segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.size()))
          .setZero();
  }
}

// ---------------------------------------------------------------------------
// Parametrization mapping

ScalingMatrixH ScalingMatrixH::for_architecture(const MlpArchitecture& arch) {
  arch.validate();
  ScalingMatrixH h;
  h.layout = std::make_shared<const std::vector<Block>>(arch.layout());
  h.diagonal.resize(static_cast<Eigen::Index>(arch.param_count()));
  for (const Block& b : *h.layout) {
    const double value =
        b.kind == BlockKind::weight ? 1.0 / static_cast<double>(b.cols) : 1.0;
    h.diagonal.segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.size()))
        .setConstant(value);
  }
  return h;
}

Vector ScalingMatrixH::sqrt() const {
  Vector out(diagonal.size());
  for (const Block& b : *layout) {
    const double value =
        b.kind == BlockKind::weight ? 1.0 / std::sqrt(static_cast<double>(b.cols)) : 1.0;
    out.segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.size()))
        .setConstant(value);
  }
  return out;
}

Vector ScalingMatrixH::inv_sqrt() const {
  Vector out(diagonal.size());
  for (const Block& b : *layout) {
    const double value =
        b.kind == BlockKind::weight ? std::sqrt(static_cast<double>(b.cols)) : 1.0;
    out.segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.size()))
        .setConstant(value);
  }
  return out;
}

ParamVector map_parametrization(const ParamVector& params, const ScalingMatrixH& h,
                                MappingDirection direction) {
  if (!h.layout || params.size() != static_cast<std::size_t>(h.diagonal.size())) {
    throw LayoutMismatch("map_parametrization: H does not match the parameter vector");
  }
  for (std::size_t i = 0; i < h.layout->size(); ++i) {
    const Block& a = (*h.layout)[i];
    const Block& b = params.layout()[i];
    if (a.layer != b.layer || a.kind != b.kind || a.offset != b.offset || a.rows != b.rows ||
        a.cols != b.cols) {
      throw LayoutMismatch("map_parametrization: block structure differs from H");
    }
  }
  const Vector factor = direction == MappingDirection::std_to_ntk ? h.inv_sqrt() : h.sqrt();
  return params.with_values(params.values().cwiseProduct(factor));
}

ParamVector init_params(const MlpArchitecture& arch, std::uint64_t seed) {
  ParamVector params = ParamVector::zeros(arch);
  const CounterRng rng(seed);
  for (std::size_t k = 0; k < arch.num_layers(); ++k) {
    WeightMap w = params.weight(k);
    const double sw = arch.sigma_w[k];
    const double sb = arch.sigma_b[k];
    const auto tag = static_cast<std::uint32_t>(k);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        w(r, c) = sw * rng.normal(Stream::weight, tag, static_cast<std::uint32_t>(r),
                                  static_cast<std::uint32_t>(c));
      }
    }
    auto b = params.bias(k);
    for (Eigen::Index r = 0; r < b.size(); ++r) {
      b(r) = sb * rng.normal(Stream::bias, tag, static_cast<std::uint32_t>(r), 0u);
    }
  }
  if (arch.parametrization == Parametrization::standard) {
    params = map_parametrization(params, ScalingMatrixH::for_architecture(arch),
                                 MappingDirection::ntk_to_std);
  }
  return params;
}

// ---------------------------------------------------------------------------
// Forward / reverse / forward-mode

namespace {

void check_params(const MlpArchitecture& arch, const ParamVector& params) {
  if (params.size() != arch.param_count() || params.num_layers() != arch.num_layers()) {
    throw LayoutMismatch("parameter vector has " + std::to_string(params.size()) +
                         " entries, architecture expects " +
                         std::to_string(arch.param_count()));
  }
}

void check_inputs(const MlpArchitecture& arch, const Matrix& x) {
  if (static_cast<std::size_t>(x.cols()) != arch.input_dim) {
    throw DimensionMismatch("inputs have dimension " + std::to_string(x.cols()) +
                            ", architecture expects " + std::to_string(arch.input_dim));
  }
}

}  // namespace

void complete_forward(const MlpArchitecture& arch, const ParamVector& params,
                      ForwardPass& pass, std::size_t layer) {
  const std::size_t layers = arch.num_layers();
  pass.inputs.resize(layers + 1);
  pass.pre.resize(layers);
  pass.slope.resize(layers);
  for (std::size_t k = layer; k < layers; ++k) {
    const ConstWeightMap w = params.weight(k);
    Matrix h = pass.inputs[k] * w.transpose();
    const double s = arch.layer_scale(k);
    if (s != 1.0) h *= s;
    h.rowwise() += params.bias(k).transpose();
    pass.pre[k] = std::move(h);
    if (k + 1 < layers) {
      activate_both(arch.activation, pass.pre[k], pass.inputs[k + 1], pass.slope[k]);
    } else {
      pass.inputs[k + 1] = pass.pre[k];
      pass.slope[k].resize(0, 0);
    }
  }
}

ForwardPass forward_pass(const MlpArchitecture& arch, const ParamVector& params,
                         const Matrix& x) {
  check_params(arch, params);
  check_inputs(arch, x);
  ForwardPass pass;
  pass.inputs.resize(arch.num_layers() + 1);
  pass.inputs[0] = x;
  complete_forward(arch, params, pass, 0);
  return pass;
}

Vector forward(const MlpArchitecture& arch, const ParamVector& params, const Matrix& x) {
  return forward_pass(arch, params, x).output();
}

double forward(const MlpArchitecture& arch, const ParamVector& params, const Vector& x) {
  return forward(arch, params, Matrix(x.transpose()))(0);
}

std::vector<Matrix> output_sensitivities(const MlpArchitecture& arch, const ParamVector& params,
                                         const ForwardPass& pass, std::size_t lowest_layer) {
  const std::size_t layers = arch.num_layers();
  std::vector<Matrix> sens(layers);
  sens[layers - 1] = Matrix::Ones(pass.batch_size(), 1);
  for (std::size_t k = layers - 1; k > lowest_layer; --k) {
    Matrix back = sens[k] * params.weight(k);
    const double s = arch.layer_scale(k);
    if (s != 1.0) back *= s;
    const Matrix& pre = pass.pre[k - 1];
    const bool cached = k - 1 < pass.slope.size() && pass.slope[k - 1].rows() == pre.rows() &&
                        pass.slope[k - 1].cols() == pre.cols();
    if (cached) {
      sens[k - 1] = back.cwiseProduct(pass.slope[k - 1]);
    } else {
      sens[k - 1] = back.cwiseProduct(activate_derivative(arch.activation, pre));
    }
  }
  return sens;
}

Vector vjp(const MlpArchitecture& arch, const ParamVector& params, const ForwardPass& pass,
           const std::vector<Matrix>& sens, const Vector& cotangent, bool trainable_only) {
  if (cotangent.size() != pass.batch_size()) {
    throw DimensionMismatch("vjp: cotangent length does not match batch size");
  }
  Vector grad = Vector::Zero(static_cast<Eigen::Index>(params.size()));
  for (std::size_t k = 0; k < arch.num_layers(); ++k) {
    const Block& wb = params.block(k, BlockKind::weight);
    const Block& bb = params.block(k, BlockKind::bias);
    if (trainable_only && !wb.trainable && !bb.trainable) continue;
    if (sens[k].size() == 0) {
      throw InvalidArgument("vjp: missing sensitivities for layer " + std::to_string(k));
    }
    const Matrix weighted = cotangent.asDiagonal() * sens[k];
    if (!trainable_only || wb.trainable) {
      WeightMap gw(grad.data() + wb.offset, static_cast<Eigen::Index>(wb.rows),
                   static_cast<Eigen::Index>(wb.cols));
      gw.noalias() = weighted.transpose() * pass.inputs[k];
      const double s = arch.layer_scale(k);
      if (s != 1.0) gw *= s;
    }
    if (!trainable_only || bb.trainable) {
      grad.segment(static_cast<Eigen::Index>(bb.offset), static_cast<Eigen::Index>(bb.rows)) =
          weighted.colwise().sum().transpose();
    }
  }
  return grad;
}

Vector vjp(const MlpArchitecture& arch, const ParamVector& params, const Matrix& x,
           const Vector& cotangent, bool trainable_only) {
  const ForwardPass pass = forward_pass(arch, params, x);
  const auto sens = output_sensitivities(arch, params, pass);
  return vjp(arch, params, pass, sens, cotangent, trainable_only);
}

Vector jvp(const MlpArchitecture& arch, const ParamVector& params, const ForwardPass& pass,
           const Vector& tangent) {
  if (static_cast<std::size_t>(tangent.size()) != params.size()) {
    throw DimensionMismatch("jvp: tangent length does not match parameter count");
  }
  const ParamVector dir = params.with_values(tangent);
  Matrix d_input = Matrix::Zero(pass.batch_size(), static_cast<Eigen::Index>(arch.input_dim));
  Matrix d_pre;
  for (std::size_t k = 0; k < arch.num_layers(); ++k) {
    d_pre = d_input * params.weight(k).transpose();
    d_pre.noalias() += pass.inputs[k] * dir.weight(k).transpose();
    const double s = arch.layer_scale(k);
    if (s != 1.0) d_pre *= s;
    d_pre.rowwise() += dir.bias(k).transpose();
    if (k + 1 < arch.num_layers()) {
      d_input = d_pre.cwiseProduct(activate_derivative(arch.activation, pass.pre[k]));
    }
  }
  return d_pre.col(0);
}

Matrix jacobian(const MlpArchitecture& arch, const ParamVector& params, const Matrix& x) {
  const ForwardPass pass = forward_pass(arch, params, x);
  const auto sens = output_sensitivities(arch, params, pass);
  const Eigen::Index n = x.rows();
  RowMajorMatrix jac(n, static_cast<Eigen::Index>(params.size()));
  for (std::size_t k = 0; k < arch.num_layers(); ++k) {
    const Block& wb = params.block(k, BlockKind::weight);
    const Block& bb = params.block(k, BlockKind::bias);
    const double s = arch.layer_scale(k);
    for (Eigen::Index i = 0; i < n; ++i) {
      WeightMap row(jac.row(i).data() + wb.offset, static_cast<Eigen::Index>(wb.rows),
                    static_cast<Eigen::Index>(wb.cols));
      row.noalias() = s * sens[k].row(i).transpose() * pass.inputs[k].row(i);
      jac.row(i).segment(static_cast<Eigen::Index>(bb.offset),
                         static_cast<Eigen::Index>(bb.rows)) = sens[k].row(i);
    }
  }
  return jac;
}

ParamVector zero_last_layer(const ParamVector& params) {
  ParamVector out = params;
  const std::size_t last = out.num_layers() - 1;
  out.weight(last).setZero();
  out.bias(last).setZero();
  return out;
}

// ---------------------------------------------------------------------------
// Prior means and shifted evaluation

struct PriorMean::Network {
  MlpArchitecture arch;
  ParamVector trained;
  ParamVector initial;
  PriorMean base;
};

PriorMean PriorMean::zero() { return PriorMean(); }

PriorMean PriorMean::constant(double c) {
  PriorMean m;
  m.kind_ = Kind::constant;
  m.constant_ = c;
  return m;
}

PriorMean PriorMean::tabulated(Function fn) {
  if (!fn) throw InvalidArgument("PriorMean::tabulated: empty function");
  PriorMean m;
  m.kind_ = Kind::tabulated;
  m.fn_ = std::move(fn);
  return m;
}

PriorMean PriorMean::pretrained_network(MlpArchitecture arch, ParamVector trained,
                                        ParamVector initial, PriorMean base) {
  if (!trained.same_layout(initial)) {
    throw LayoutMismatch("PriorMean::pretrained_network: parameter layouts differ");
  }
  check_params(arch, trained);
  PriorMean m;
  m.kind_ = Kind::pretrained_network;
  m.network_ = std::make_shared<const Network>(
      Network{std::move(arch), std::move(trained), std::move(initial), std::move(base)});
  return m;
}

Vector PriorMean::evaluate(const Matrix& x) const {
  switch (kind_) {
    case Kind::zero:
      return Vector::Zero(x.rows());
    case Kind::constant:
      return Vector::Constant(x.rows(), constant_);
    case Kind::tabulated: {
      Vector out(x.rows());
      for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = fn_(x.row(i).transpose());
      return out;
    }
    case Kind::pretrained_network:
      return shifted_forward(network_->arch, network_->trained, network_->initial,
                             network_->base, x);
  }
  return Vector::Zero(x.rows());
}

double PriorMean::evaluate(const Vector& x) const {
  return evaluate(Matrix(x.transpose()))(0);
}

Vector shifted_forward(const MlpArchitecture& arch, const ParamVector& params,
                       const ParamVector& params0, const PriorMean& m, const Matrix& x) {
  if (!params.same_layout(params0)) {
    throw LayoutMismatch("shifted_forward: parameter layouts differ");
  }
  if (x.rows() == 0) return Vector(0);
  const Vector f = forward(arch, params, x);
  const Vector f0 = forward(arch, params0, x);
  return (f - f0) + m.evaluate(x);
}

double shifted_forward(const MlpArchitecture& arch, const ParamVector& params,
                       const ParamVector& params0, const PriorMean& m, const Vector& x) {
  return shifted_forward(arch, params, params0, m, Matrix(x.transpose()))(0);
}

}  // namespace ntk
