#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ntk/error.hpp"
#include "ntk/net.hpp"
#include "oracles.hpp"

using namespace ntk;

namespace {

MlpArchitecture small_arch(Activation act = Activation::erf,
                           Parametrization par = Parametrization::ntk, std::size_t depth = 2,
                           std::size_t width = 7, std::size_t dim = 3) {
  return MlpArchitecture::uniform(dim, width, depth, act, par, 1.3, 0.4);
}

}  // namespace

TEST_CASE("parameter count and layout") {
  const MlpArchitecture arch = small_arch();
  // (3 + 1) 7 + (7 + 1) 7 + (7 + 1) 1
  CHECK(arch.param_count() == 28 + 56 + 8);
  const auto layout = arch.layout();
  REQUIRE(layout.size() == 6);
  std::size_t expected = 0;
  for (const Block& b : layout) {
    CHECK(b.offset == expected);
    expected += b.size();
  }
  CHECK(expected == arch.param_count());
  CHECK(arch.width(0) == 3);
  CHECK(arch.width(3) == 1);
  CHECK(arch.layer_scale(1) == doctest::Approx(1.0 / std::sqrt(7.0)));
  CHECK(small_arch(Activation::erf, Parametrization::standard).layer_scale(1) == 1.0);
}

TEST_CASE("trainable mask: first-layer weights and every bias are frozen by default") {
  const MlpArchitecture arch = small_arch();
  CHECK_FALSE(arch.is_trainable(0, BlockKind::weight));
  CHECK(arch.is_trainable(1, BlockKind::weight));
  CHECK(arch.is_trainable(2, BlockKind::weight));
  for (std::size_t k = 0; k < 3; ++k) CHECK_FALSE(arch.is_trainable(k, BlockKind::bias));

  MlpArchitecture all = arch;
  all.train_first_layer_and_biases = true;
  for (const Block& b : all.layout()) CHECK(b.trainable);

  // A single linear layer keeps its weights trainable.
  const MlpArchitecture linear = MlpArchitecture::uniform(2, 1, 0, Activation::identity);
  CHECK(linear.is_trainable(0, BlockKind::weight));
  CHECK_FALSE(linear.is_trainable(0, BlockKind::bias));

  const ParamVector p = init_params(arch, 1);
  const Vector mask = trainable_mask(p);
  for (const Block& b : p.layout()) {
    const auto seg = mask.segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.size()));
    CHECK(seg.minCoeff() == (b.trainable ? 1.0 : 0.0));
    CHECK(seg.maxCoeff() == (b.trainable ? 1.0 : 0.0));
  }
  Vector v = Vector::Ones(static_cast<Eigen::Index>(p.size()));
  apply_trainable_mask(p.layout(), v);
  CHECK(v == mask);
}

TEST_CASE("architecture validation") {
  MlpArchitecture bad = small_arch();
  bad.sigma_w.pop_back();
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  MlpArchitecture zero_width = small_arch();
  zero_width.hidden_widths[0] = 0;
  CHECK_THROWS_AS(zero_width.validate(), InvalidArgument);
  MlpArchitecture uneven = small_arch();
  uneven.hidden_widths[1] = 5;
  CHECK_THROWS_AS(uneven.validate(), InvalidArgument);
  CHECK_THROWS_AS(parse_activation("swish"), InvalidArgument);
  CHECK(parse_activation("softplus") == Activation::softplus);
  CHECK(parse_parametrization("std") == Parametrization::standard);
  CHECK_THROWS_AS(parse_parametrization("mup"), InvalidArgument);
}

TEST_CASE("vectorized erf matches std::erf across its range") {
  Matrix h(1000, 3);
  for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = -9.0 + 18.0 * static_cast<double>(i) / 2999.0;
  h(0, 0) = 0.0;
  h(1, 0) = -1e-300;
  h(2, 0) = 2.5;
  h(3, 0) = -2.5;
  h(4, 0) = std::numeric_limits<double>::infinity();
  const Matrix e = activate(Activation::erf, h);
  for (Eigen::Index i = 0; i < h.size(); ++i) {
    const double ref = std::erf(h.data()[i]);
    CHECK(std::abs(e.data()[i] - ref) <= 2e-15 * std::abs(ref) + 1e-300);
  }
  CHECK(e(0, 0) == 0.0);
  CHECK(e(4, 0) == 1.0);
}

TEST_CASE("activation derivatives match central differences") {
  Matrix h(1, 9);
  h << -4.0, -2.2, -1.0, -0.3, 0.05, 0.4, 1.1, 2.7, 5.0;
  for (Activation a : {Activation::erf, Activation::tanh, Activation::softplus, Activation::relu,
                       Activation::identity}) {
    CAPTURE(to_string(a));
    const Matrix d = activate_derivative(a, h);
    const double eps = 1e-6;
    const Matrix fd = (activate(a, (h.array() + eps).matrix()) - activate(a, (h.array() - eps).matrix())) / (2 * eps);
    CHECK(oracle::max_abs(d - fd) <= 1e-8);
    for (Eigen::Index i = 0; i < h.cols(); ++i) {
      CHECK(activate(a, h)(0, i) == doctest::Approx(oracle::phi(a, h(0, i))).epsilon(1e-14));
    }
  }
  // Softplus stays finite far out in both tails.
  Matrix big(1, 2);
  big << -800.0, 800.0;
  const Matrix sp = activate(Activation::softplus, big);
  CHECK(sp(0, 0) == doctest::Approx(0.0));
  CHECK(sp(0, 1) == doctest::Approx(800.0));
  // Deep in the left tail softplus(v) = e^v to full relative precision.
  Matrix tail(1, 3);
  tail << -20.0, -40.0, -700.0;
  const Matrix st = activate(Activation::softplus, tail);
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(st(0, i) == doctest::Approx(std::exp(tail(0, i))).epsilon(1e-14));
}

TEST_CASE("fused activation agrees with the separate value and derivative") {
  Matrix h = oracle::random_matrix(7, 11, 21) * 6.0;
  h(0, 0) = -800.0;
  h(0, 1) = 800.0;
  h(0, 2) = 0.0;
  for (Activation a : {Activation::erf, Activation::tanh, Activation::softplus, Activation::relu,
                       Activation::identity}) {
    CAPTURE(to_string(a));
    Matrix phi, slope;
    activate_both(a, h, phi, slope);
    CHECK(oracle::max_abs(phi - activate(a, h)) <= 1e-15 * (1.0 + h.cwiseAbs().maxCoeff()));
    CHECK(oracle::max_abs(slope - activate_derivative(a, h)) <= 1e-15);
  }
}

TEST_CASE("forward pass equals an explicit-loop oracle") {
  for (Activation act : {Activation::erf, Activation::tanh, Activation::softplus, Activation::relu}) {
    for (Parametrization par : {Parametrization::ntk, Parametrization::standard}) {
      CAPTURE(to_string(act));
      CAPTURE(to_string(par));
      const MlpArchitecture arch = small_arch(act, par);
      const ParamVector p = init_params(arch, 3);
      const Matrix x = oracle::random_matrix(5, 3, 4);
      CHECK(oracle::max_abs(forward(arch, p, x) - oracle::naive_forward(arch, p.values(), x)) <= 1e-13);
      CHECK(forward(arch, p, Vector(x.row(2).transpose())) ==
            doctest::Approx(oracle::naive_forward(arch, p.values(), Vector(x.row(2).transpose()))));
    }
  }
  const MlpArchitecture arch = small_arch();
  const ParamVector p = init_params(arch, 3);
  CHECK_THROWS_AS(forward(arch, p, Matrix(2, 4)), DimensionMismatch);
  CHECK_THROWS_AS(forward(small_arch(Activation::erf, Parametrization::ntk, 2, 8), p, Matrix(2, 3)),
                  LayoutMismatch);
}

TEST_CASE("Jacobian, vjp and jvp agree with finite differences and each other") {
  MlpArchitecture arch = small_arch(Activation::tanh);
  arch.train_first_layer_and_biases = true;
  const ParamVector p = init_params(arch, 9);
  const Matrix x = oracle::random_matrix(4, 3, 10);
  const Matrix j = jacobian(arch, p, x);
  const Matrix fd = oracle::fd_jacobian(arch, p.values(), x);
  CHECK(oracle::max_abs(j - fd) <= 1e-8);

  const ForwardPass pass = forward_pass(arch, p, x);
  const auto sens = output_sensitivities(arch, p, pass);
  const Vector c = oracle::random_vector(4, 11);
  CHECK(oracle::max_abs(vjp(arch, p, pass, sens, c, false) - j.transpose() * c) <= 1e-12);
  CHECK(oracle::max_abs(vjp(arch, p, x, c, false) - j.transpose() * c) <= 1e-12);
  const Vector v = oracle::random_vector(static_cast<Eigen::Index>(p.size()), 12);
  CHECK(oracle::max_abs(jvp(arch, p, pass, v) - j * v) <= 1e-12);

  // Directional finite difference for random unit directions, eps = 1e-5.
  for (std::uint64_t s = 0; s < 5; ++s) {
    Vector u = oracle::random_vector(static_cast<Eigen::Index>(p.size()), 100 + s);
    u.normalize();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Vector xi = x.row(i).transpose();
      const double fd_dir = oracle::directional_fd(
          [&](const Vector& t) { return oracle::naive_forward(arch, t, xi); }, p.values(), u, 1e-5);
      const double jv = j.row(i).dot(u);
      CHECK(std::abs(fd_dir - jv) <= 1e-5 * std::max(std::abs(jv), 1e-3));
    }
  }
  CHECK_THROWS_AS(vjp(arch, p, pass, sens, Vector(3), false), DimensionMismatch);
}

TEST_CASE("trainable-only vjp leaves frozen blocks at zero") {
  const MlpArchitecture arch = small_arch();
  const ParamVector p = init_params(arch, 2);
  const Matrix x = oracle::random_matrix(3, 3, 5);
  const Vector c = oracle::random_vector(3, 6);
  const Vector full = vjp(arch, p, x, c, false);
  const Vector masked = vjp(arch, p, x, c, true);
  CHECK(oracle::max_abs(masked - full.cwiseProduct(trainable_mask(p))) <= 1e-14);
}

TEST_CASE("standard and NTK parametrizations are related by H^{1/2}") {
  const MlpArchitecture ntk_arch = small_arch(Activation::erf, Parametrization::ntk);
  const MlpArchitecture std_arch = small_arch(Activation::erf, Parametrization::standard);
  const ParamVector theta = init_params(ntk_arch, 17);
  const ScalingMatrixH h = ScalingMatrixH::for_architecture(std_arch);
  const ParamVector theta_std = map_parametrization(theta, h, MappingDirection::ntk_to_std);
  CHECK(oracle::max_abs(theta_std.values() - h.sqrt().cwiseProduct(theta.values())) <= 1e-15);
  CHECK(oracle::max_abs(map_parametrization(theta_std, h, MappingDirection::std_to_ntk).values() -
                        theta.values()) <= 1e-15);
  // init_params in standard parametrization is exactly the mapped NTK draw.
  CHECK(oracle::max_abs(init_params(std_arch, 17).values() - theta_std.values()) <= 1e-16);

  const Matrix x = oracle::random_matrix(6, 3, 18);
  CHECK(oracle::max_abs(forward(std_arch, theta_std, x) - forward(ntk_arch, theta, x)) <= 1e-10);
  const Matrix j_ntk = jacobian(ntk_arch, theta, x);
  const Matrix j_std = jacobian(std_arch, theta_std, x);
  CHECK(oracle::max_abs(j_ntk - j_std * h.sqrt().asDiagonal()) <= 1e-10);

  // Diagonal of H: 1/n_k on weights, 1 on biases.
  for (const Block& b : theta.layout()) {
    const double expected = b.kind == BlockKind::weight ? 1.0 / static_cast<double>(std_arch.width(b.layer)) : 1.0;
    CHECK(h.diagonal(static_cast<Eigen::Index>(b.offset)) == doctest::Approx(expected));
  }
  CHECK(h.diagonal.minCoeff() > 0.0);
  CHECK(oracle::max_abs(h.sqrt().cwiseProduct(h.inv_sqrt()) - Vector::Ones(h.diagonal.size())) <= 1e-15);
}

TEST_CASE("initialization: deterministic, width-nested and correctly scaled") {
  const MlpArchitecture a = MlpArchitecture::uniform(2, 2048, 2, Activation::erf, Parametrization::ntk, 1.5, 0.3);
  const ParamVector p = init_params(a, 5);
  CHECK(p.values() == init_params(a, 5).values());
  CHECK(p.values() != init_params(a, 6).values());
  for (std::size_t k = 0; k < a.num_layers(); ++k) {
    const auto w = p.weight(k);
    const double var = w.squaredNorm() / static_cast<double>(w.size());
    CHECK(std::abs(var / (1.5 * 1.5) - 1.0) <= 0.05);
  }
  const auto b = p.bias(1);
  CHECK(std::abs(b.squaredNorm() / static_cast<double>(b.size()) / 0.09 - 1.0) <= 0.1);

  const MlpArchitecture s = MlpArchitecture::uniform(2, 2048, 2, Activation::erf, Parametrization::standard, 1.5, 0.3);
  const ParamVector ps = init_params(s, 5);
  const auto w1 = ps.weight(1);
  CHECK(std::abs(w1.squaredNorm() / static_cast<double>(w1.size()) / (1.5 * 1.5 / 2048.0) - 1.0) <= 0.05);

  // Entries shared by two widths come from the same variates.
  const MlpArchitecture narrow = MlpArchitecture::uniform(2, 64, 2);
  const MlpArchitecture wide = MlpArchitecture::uniform(2, 128, 2);
  const ParamVector pn = init_params(narrow, 3);
  const ParamVector pw = init_params(wide, 3);
  CHECK(pn.weight(1) == pw.weight(1).topLeftCorner(64, 64));
  CHECK(pn.bias(0) == pw.bias(0).head(64));
}

TEST_CASE("zero_last_layer and ParamVector accessors") {
  const MlpArchitecture arch = small_arch();
  const ParamVector p = init_params(arch, 4);
  const ParamVector z = zero_last_layer(p);
  CHECK(z.weight(2).isZero());
  CHECK(z.bias(2).isZero());
  CHECK(z.weight(1) == p.weight(1));
  CHECK(forward(arch, z, oracle::random_matrix(3, 3, 1)).isZero());
  CHECK_THROWS_AS(p.with_values(Vector(3)), LayoutMismatch);
  CHECK(p.same_layout(z));
  CHECK_FALSE(p.same_layout(init_params(small_arch(Activation::erf, Parametrization::ntk, 2, 8), 4)));
}

TEST_CASE("prior means and the shifted forward map") {
  const MlpArchitecture arch = small_arch();
  const ParamVector p0 = init_params(arch, 1);
  Vector delta = oracle::random_vector(static_cast<Eigen::Index>(p0.size()), 2) * 0.1;
  const ParamVector p1 = p0.with_values(p0.values() + delta);
  const Matrix x = oracle::random_matrix(4, 3, 3);

  CHECK(PriorMean::zero().evaluate(x).isZero());
  CHECK(PriorMean::constant(2.5).evaluate(x) == Vector::Constant(4, 2.5));
  const PriorMean tab = PriorMean::tabulated([](const Vector& v) { return v.sum(); });
  CHECK(oracle::max_abs(tab.evaluate(x) - x.rowwise().sum()) == 0.0);
  CHECK_THROWS_AS(PriorMean::tabulated(nullptr), InvalidArgument);

  const Vector shifted = shifted_forward(arch, p1, p0, tab, x);
  const Vector expected = forward(arch, p1, x) - forward(arch, p0, x) + x.rowwise().sum();
  CHECK(oracle::max_abs(shifted - expected) <= 1e-14);
  // At initialization the shifted network is exactly the prior.
  CHECK(oracle::max_abs(shifted_forward(arch, p0, p0, tab, x) - tab.evaluate(x)) == 0.0);

  const PriorMean net = PriorMean::pretrained_network(arch, p1, p0, PriorMean::constant(1.0));
  CHECK(net.kind() == PriorMean::Kind::pretrained_network);
  CHECK(oracle::max_abs(net.evaluate(x) - (forward(arch, p1, x) - forward(arch, p0, x)).array().matrix() -
                        Vector::Ones(4)) <= 1e-14);
  CHECK(net.evaluate(Vector(x.row(1).transpose())) == doctest::Approx(net.evaluate(x)(1)));
  CHECK_THROWS_AS(PriorMean::pretrained_network(arch, p1, init_params(small_arch(Activation::erf, Parametrization::ntk, 2, 8), 1)),
                  LayoutMismatch);
}
