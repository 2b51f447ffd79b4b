#include <doctest.h>

#include <cmath>
#include <limits>

#include "ntk/error.hpp"
#include "ntk/kernel.hpp"
#include "ntk/train.hpp"
#include "oracles.hpp"

using namespace ntk;

namespace {

Dataset toy_data(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  Dataset data;
  data.x = oracle::random_matrix(n, d, seed);
  data.y = data.x.col(0).array().sin().matrix() + 0.1 * oracle::random_vector(n, seed + 1);
  return data;
}

double param_rel_diff(const ParamVector& a, const ParamVector& b) {
  return oracle::rel_err(a.values(), b.values());
}

}  // namespace

TEST_CASE("reg_grad matches central differences of reg_loss") {
  for (bool all_blocks : {false, true}) {
    CAPTURE(all_blocks);
    MlpArchitecture arch = MlpArchitecture::uniform(2, 16, 2, Activation::tanh);
    arch.train_first_layer_and_biases = all_blocks;
    const ParamVector p0 = init_params(arch, 3);
    const ParamVector p = p0.with_values(p0.values() + 0.05 * oracle::random_vector(p0.size(), 4));
    const Dataset data = toy_data(7, 2, 5);
    const double beta = 0.7;
    const Vector g = reg_grad(arch, p, p0, data, beta);
    const Vector mask = trainable_mask(p);
    CHECK((g.array() * (1.0 - mask.array())).cwiseAbs().maxCoeff() == 0.0);

    const auto loss = [&](const Vector& v) { return reg_loss(arch, p.with_values(v), p0, data, beta); };
    for (std::uint64_t k = 0; k < 5; ++k) {
      const Vector dir = oracle::random_vector(p.size(), 40 + k).cwiseProduct(mask);
      const double fd = oracle::directional_fd(loss, p.values(), dir, 1e-5);
      CHECK(std::abs(fd - g.dot(dir)) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
    CHECK(reg_loss(arch, p0, p0, data, beta) ==
          doctest::Approx(0.5 * (forward(arch, p0, data.x) - data.y).squaredNorm()));
  }
}

TEST_CASE("auto learning rate is the reciprocal of lambda_max + beta") {
  const MlpArchitecture arch = MlpArchitecture::uniform(1, 32, 2);
  const ParamVector p0 = init_params(arch, 1);
  const Dataset data = toy_data(9, 1, 2);
  const double lambda = max_eigenvalue(empirical_ntk(arch, p0, data.x, data.x).symmetric());
  CHECK(auto_learning_rate(arch, p0, data.x, 0.5) == doctest::Approx(1.0 / (lambda + 0.5)).epsilon(1e-10));
}

TEST_CASE("gradient descent: monotone loss, frozen blocks, plateauing distance") {
  const MlpArchitecture arch = MlpArchitecture::uniform(1, 48, 2);
  const ParamVector p0 = init_params(arch, 11);
  const Dataset data = toy_data(10, 1, 12);
  TrainConfig config;
  config.beta = 0.5;
  config.record_every = 1;
  config.keep_parameter_history = true;
  const TrainResult r = gd_train(arch, p0, data, config);
  REQUIRE(r.converged);
  CHECK(r.trace.records.back().grad_norm <= config.grad_tol);
  CHECK(r.eta0 == doctest::Approx(auto_learning_rate(arch, p0, data.x, config.beta)));

  const auto& rec = r.trace.records;
  REQUIRE(rec.size() == r.steps + 1);
  for (std::size_t i = 1; i < rec.size(); ++i) {
    CHECK(rec[i].loss <= rec[i - 1].loss + 1e-12);
    CHECK(rec[i].step > rec[i - 1].step);
  }
  for (const TraceRecord& t : rec) {
    CHECK(t.dist_from_init >= 0.0);
    CHECK(t.grad_norm >= 0.0);
    CHECK(std::isnan(t.jacobian_drift));
    CHECK(std::isnan(t.reference_distance));
  }

  // Frozen first-layer weights and biases are bit-identical at every record.
  const Vector mask = trainable_mask(p0);
  for (const ParamVector& snap : r.history) {
    for (Eigen::Index i = 0; i < mask.size(); ++i)
      if (mask(i) == 0.0) REQUIRE(snap.values()(i) == p0.values()(i));
  }
  CHECK(param_rel_diff(r.history.back(), r.params) == 0.0);

  const double d_end = rec.back().dist_from_init;
  const double d_90 = rec[rec.size() * 9 / 10].dist_from_init;
  CHECK(std::abs(d_end - d_90) <= 0.01 * d_end);
  CHECK(d_end == doctest::Approx((r.params.values() - p0.values()).norm()).epsilon(1e-12));
}

TEST_CASE("the factored first trainable layer reproduces dense training") {
  const MlpArchitecture arch = MlpArchitecture::uniform(2, 40, 2, Activation::erf);
  const ParamVector p0 = init_params(arch, 21);
  const Dataset data = toy_data(8, 2, 22);
  TrainConfig config;
  config.beta = 0.3;
  config.max_steps = 300;
  config.grad_tol = 1e-300;  // both runs take exactly max_steps steps
  config.record_every = 25;
  config.probe_points = oracle::random_matrix(5, 2, 23);
  config.record_jacobian_drift = true;
  config.reference_coefficients = [](double) { return Vector::Zero(8); };

  TrainConfig dense_config = config;
  dense_config.allow_factored = false;
  const TrainResult fact = gd_train(arch, p0, data, config);
  const TrainResult dense = gd_train(arch, p0, data, dense_config);
  CHECK(fact.factored);
  CHECK_FALSE(dense.factored);
  CHECK(param_rel_diff(fact.params, dense.params) <= 1e-10);
  REQUIRE(fact.trace.records.size() == dense.trace.records.size());
  for (std::size_t i = 0; i < fact.trace.records.size(); ++i) {
    const TraceRecord& a = fact.trace.records[i];
    const TraceRecord& b = dense.trace.records[i];
    CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-10));
    CHECK(a.grad_norm == doctest::Approx(b.grad_norm).epsilon(1e-8));
    CHECK(a.dist_from_init == doctest::Approx(b.dist_from_init).epsilon(1e-10));
    CHECK(a.jacobian_drift == doctest::Approx(b.jacobian_drift).epsilon(1e-8));
    CHECK(a.reference_distance == doctest::Approx(a.dist_from_init).epsilon(1e-10));
    CHECK(oracle::max_abs(a.probe_predictions - b.probe_predictions) <= 1e-10);
  }
  const TraceRecord& last = fact.trace.records.back();
  CHECK(fact.trace.records.front().jacobian_drift <= 1e-12);
  CHECK(last.jacobian_drift == doctest::Approx(jacobian_drift(arch, fact.params, p0, data.x)).epsilon(1e-9));
  CHECK(oracle::max_abs(last.probe_predictions - forward(arch, fact.params, *config.probe_points)) <= 1e-10);
  CHECK(fact.trace.column(&TraceRecord::loss).size() == fact.trace.records.size());
}

TEST_CASE("gradient descent and the RK4 flow reach the same predictions") {
  const MlpArchitecture arch = MlpArchitecture::uniform(1, 32, 2);
  const ParamVector p0 = init_params(arch, 31);
  const Dataset data = toy_data(8, 1, 32);
  const Matrix xt = oracle::random_matrix(6, 1, 33);
  TrainConfig config;
  config.beta = 0.5;
  config.flow_step = 0.5;
  const TrainResult gd = gd_train(arch, p0, data, config);
  const TrainResult flow = flow_integrate(arch, p0, data, config);
  REQUIRE(gd.converged);
  REQUIRE(flow.converged);
  CHECK(oracle::max_abs(forward(arch, gd.params, xt) - forward(arch, flow.params, xt)) <= 2e-4);

  // A fixed horizon stops exactly at flow_time.
  TrainConfig timed = config;
  timed.flow_time = 3.2;
  const TrainResult part = flow_integrate(arch, p0, data, timed);
  CHECK(part.time == doctest::Approx(3.2));
  CHECK(part.trace.records.back().step == doctest::Approx(3.2));

  TrainConfig stiff = config;
  stiff.flow_step = 2.0;
  CHECK_THROWS_AS(flow_integrate(arch, p0, data, stiff), InvalidArgument);
}

TEST_CASE("standard-parametrization training is H^1/2 times NTK training") {
  MlpArchitecture ntk_arch = MlpArchitecture::uniform(2, 64, 2);
  MlpArchitecture std_arch = ntk_arch;
  std_arch.parametrization = Parametrization::standard;
  const ParamVector p_ntk = init_params(ntk_arch, 41);
  const ParamVector p_std = init_params(std_arch, 41);
  const ScalingMatrixH h = ScalingMatrixH::for_architecture(std_arch);
  const Dataset data = toy_data(9, 2, 42);
  TrainConfig config;
  config.beta = 0.5;
  config.max_steps = 60;
  config.grad_tol = 1e-300;
  config.record_every = 1;
  config.keep_parameter_history = true;
  config.eta0 = 0.8 * auto_learning_rate(ntk_arch, p_ntk, data.x, config.beta);
  const TrainResult a = gd_train(ntk_arch, p_ntk, data, config);
  const TrainResult b = std_train(std_arch, p_std, data, config);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t k = 0; k < a.history.size(); ++k) {
    const Vector mapped = h.sqrt().cwiseProduct(a.history[k].values());
    REQUIRE(oracle::max_abs(mapped - b.history[k].values()) <= 1e-9);
  }
  CHECK(b.trace.records.back().loss == doctest::Approx(a.trace.records.back().loss).epsilon(1e-10));
  CHECK_THROWS_AS(std_train(ntk_arch, p_ntk, data, config), InvalidArgument);

  TrainConfig uniform = config;
  uniform.uniform_learning_rate = true;
  uniform.eta0.reset();
  uniform.max_steps = 20;
  const TrainResult u = std_train(std_arch, p_std, data, uniform);
  CHECK(u.trace.records.back().loss <= u.trace.records.front().loss);
}

TEST_CASE("uniform-rate kernel shares") {
  MlpArchitecture arch = MlpArchitecture::uniform(3, 128, 2, Activation::erf, Parametrization::standard);
  arch.train_first_layer_and_biases = true;
  const ParamVector p = init_params(arch, 5);
  const Matrix x = oracle::random_matrix(6, 3, 6);
  const UniformRateShares s = uniform_rate_shares(arch, p, x);
  const Matrix j = jacobian(arch, p, x);
  CHECK(s.total_trace == doctest::Approx((j * j.transpose()).trace() / 128.0).epsilon(1e-10));
  const Block& w0 = p.block(0, BlockKind::weight);
  const double first = j.middleCols(static_cast<Eigen::Index>(w0.offset), static_cast<Eigen::Index>(w0.size())).squaredNorm();
  CHECK(s.first_layer == doctest::Approx(first / j.squaredNorm()).epsilon(1e-10));
  CHECK(s.biases > 0.0);
  CHECK(s.first_layer + s.biases < 1.0);
  CHECK_THROWS_AS(uniform_rate_shares(MlpArchitecture::uniform(3, 8, 1), init_params(MlpArchitecture::uniform(3, 8, 1), 0), x),
                  InvalidArgument);
}

TEST_CASE("exact linear case: identity network without hidden layers") {
  const MlpArchitecture arch = MlpArchitecture::uniform(6, 1, 0, Activation::identity);
  const ParamVector p0 = init_params(arch, 51);
  const Dataset data = toy_data(12, 6, 52);
  const Matrix xt = oracle::random_matrix(16, 6, 53);
  const double beta = 0.5;
  TrainConfig config;
  config.beta = beta;
  config.grad_tol = 1e-10;
  const TrainResult r = gd_train(arch, p0, data, config);
  REQUIRE(r.converged);
  const Vector expected = posterior_mean(empirical_ntk(arch, p0, data.x, data.x), empirical_ntk(arch, p0, xt, data.x),
                                         data.y, forward(arch, p0, data.x), forward(arch, p0, xt), beta);
  CHECK(oracle::max_abs(forward(arch, r.params, xt) - expected) <= 1e-8);
}

TEST_CASE("training errors") {
  const MlpArchitecture arch = MlpArchitecture::uniform(1, 16, 2);
  const ParamVector p0 = init_params(arch, 61);
  const Dataset data = toy_data(6, 1, 62);

  TrainConfig huge;
  huge.eta0 = 1e4;
  huge.max_steps = 1000;
  CHECK_THROWS_AS(gd_train(arch, p0, data, huge), Diverged);

  TrainConfig bad;
  bad.grad_tol = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = TrainConfig{};
  bad.beta = -1.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = TrainConfig{};
  bad.flow_step = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = TrainConfig{};
  bad.eta0 = -0.1;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = TrainConfig{};
  bad.record_every = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = TrainConfig{};
  bad.flow_time = -1.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);

  Dataset wrong = data;
  wrong.y.conservativeResize(5);
  CHECK_THROWS_AS(gd_train(arch, p0, wrong, TrainConfig{}), DimensionMismatch);
  Dataset wide = data;
  wide.x = Matrix::Zero(6, 2);
  CHECK_THROWS_AS(gd_train(arch, p0, wide, TrainConfig{}), DimensionMismatch);
  const ParamVector other = init_params(MlpArchitecture::uniform(1, 8, 2), 0);
  CHECK_THROWS_AS(gd_train(arch, other, data, TrainConfig{}), LayoutMismatch);
  CHECK_THROWS_AS(jacobian_drift(arch, p0, other, data.x), LayoutMismatch);
  CHECK(jacobian_drift(arch, p0, p0, data.x) == 0.0);
}

TEST_CASE("shifted training") {
  const MlpArchitecture arch = MlpArchitecture::uniform(1, 32, 2);
  const ParamVector p0 = init_params(arch, 71);
  const Matrix xt = oracle::random_matrix(5, 1, 72);
  const PriorMean prior = PriorMean::tabulated([](const Vector& v) { return 0.5 * std::sin(v(0)); });

  SUBCASE("no data returns the prior") {
    Dataset empty;
    empty.x = Matrix(0, 1);
    empty.y = Vector(0);
    const ShiftedTrainResult r = shifted_train(arch, p0, empty, prior, TrainConfig{});
    CHECK(r.train.converged);
    CHECK(oracle::max_abs(r.predictor.evaluate(xt) - prior.evaluate(xt)) == 0.0);
  }

  SUBCASE("trained shifted predictor fits the labels and freezes into a prior") {
    const Dataset data = toy_data(8, 1, 73);
    TrainConfig config;
    config.beta = 0.05;
    const ShiftedTrainResult r = shifted_train(arch, p0, data, prior, config);
    REQUIRE(r.train.converged);
    // At the optimum the shifted residual matches the penalty gradient.
    const Vector fit = r.predictor.evaluate(data.x);
    CHECK((fit - data.y).norm() < (prior.evaluate(data.x) - data.y).norm());
    const PriorMean frozen = r.predictor.as_prior();
    CHECK(frozen.kind() == PriorMean::Kind::pretrained_network);
    CHECK(oracle::max_abs(frozen.evaluate(xt) - r.predictor.evaluate(xt)) <= 1e-14);
    // At initialization the shifted network is the prior exactly.
    CHECK(oracle::max_abs(shifted_forward(arch, p0, p0, prior, xt) - prior.evaluate(xt)) == 0.0);
  }
}
