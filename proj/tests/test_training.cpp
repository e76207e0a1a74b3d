// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <random>

#include "equinet/training.hpp"
#include "oracles.hpp"

using namespace equinet;
using Catch::Approx;

namespace {

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.widths = {4, 3, 2};
  cfg.epochs = 15;
  cfg.samples = 5;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("loss gradient matches central differences of the loss", "[training]") {
  auto cfg = small_config();
  std::mt19937_64 rng(cfg.seed);
  const auto teacher = make_teacher(cfg, rng);
  const auto data = generate_synthetic_dataset(teacher, 4, rng, -1.0, 1.0);  // some diodes clamp
  auto student = make_teacher(cfg, rng);  // a generic point, not at the kink
  const auto params = trainable_parameters(student);
  std::size_t checked = 0;
  for (std::size_t s = 0; s < data.size(); ++s) {
    const auto lg = loss_grad(student, data.inputs[s], data.targets[s], params, GradMethod::HardwareLinearization);
    if (lg.kink) continue;
    ++checked;
    const auto eb = loss_grad(student, data.inputs[s], data.targets[s], params, GradMethod::EquilibriumBackprop);
    CHECK((lg.grad - eb.grad).cwiseAbs().maxCoeff() <= 1e-10 * std::max(1.0, lg.grad.cwiseAbs().maxCoeff()));
    for (std::size_t c = 0; c < params.size(); c += 5) {
      const double theta = cascade_parameter(student, params[c]);
      const double fd = oracle::central_difference(
          [&](double t) {
            auto n = student;
            set_cascade_parameter(n, params[c], t);
            return Eigen::VectorXd::Constant(1, (cascade_infer(n, data.inputs[s]) - data.targets[s]).squaredNorm());
          },
          theta, 1e-6 * std::max(1.0, std::abs(theta)))[0];
      const double g = lg.grad[static_cast<Eigen::Index>(c)];
      INFO("param " << c);
      CHECK(std::abs(g - fd) <= 1e-6 * std::max({std::abs(g), std::abs(fd), 1e-3 * lg.loss}));
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("a student equal to its teacher has zero error", "[training]") {
  auto cfg = small_config();
  std::mt19937_64 rng(cfg.seed);
  const auto teacher = make_teacher(cfg, rng);
  const auto data = generate_synthetic_dataset(teacher, 4, rng);
  CHECK(aggregate_error(teacher, data) < 1e-10);
  cfg.epochs = 3;
  const auto res = sgd_train(teacher, data, cfg);
  for (double e : res.curve.errors) CHECK(e < 1e-8);
}

TEST_CASE("zero learning rate leaves the curve flat", "[training]") {
  auto cfg = small_config();
  cfg.learning_rate = 0.0;
  cfg.epochs = 4;
  const auto res = run_experiment(cfg);
  REQUIRE(res.curve.errors.size() == 4);
  for (double e : res.curve.errors) CHECK(e == Approx(res.curve.initial_error).epsilon(1e-12));
}

TEST_CASE("training is deterministic per seed and decreases the error", "[training]") {
  const auto cfg = small_config();
  std::vector<double> seen;
  const auto a = run_experiment(cfg, [&](std::size_t, double e) { seen.push_back(e); });
  const auto b = run_experiment(cfg);
  CHECK(a.curve.errors == b.curve.errors);
  CHECK(seen == a.curve.errors);
  CHECK(a.curve.errors.back() < a.curve.errors.front());
  CHECK(a.curve.errors.back() < a.curve.initial_error);
}

TEST_CASE("hardware and backprop gradients give the same training run", "[training]") {
  auto cfg = small_config();
  const auto hw = run_experiment(cfg);
  cfg.method = GradMethod::EquilibriumBackprop;
  const auto eb = run_experiment(cfg);
  REQUIRE(hw.curve.errors.size() == eb.curve.errors.size());
  for (std::size_t k = 0; k < hw.curve.errors.size(); ++k)
    CHECK(std::abs(hw.curve.errors[k] - eb.curve.errors[k]) <= 1e-6 * std::max(1.0, eb.curve.errors[k]));
}

TEST_CASE("noisy training keeps a separate actual circuit", "[training]") {
  auto cfg = small_config();
  cfg.epochs = 3;
  cfg.noise = NoiseConfig{};
  const auto res = run_experiment(cfg);
  REQUIRE(res.curve.errors.size() == 3);
  const auto& nom = res.nominal.layers[0].model.graph();
  const auto& act = res.actual.layers[0].model.graph();
  const auto e = res.nominal.layers[0].model.resistive_edges().front();
  CHECK(nom.resistance(e) != act.resistance(e));
  for (double v : res.curve.errors) CHECK(std::isfinite(v));
}

TEST_CASE("resistances stay above the floor", "[training]") {
  auto cfg = small_config();
  auto net = make_crossbar_cascade(cfg.widths, cfg.init_resistance);
  const auto params = trainable_parameters(net);
  std::mt19937_64 rng(1);
  cfg.learning_rate = 1e6;
  apply_update(net, nullptr, params, Eigen::VectorXd::Ones(static_cast<Eigen::Index>(params.size())), cfg, rng);
  for (const auto& L : net.layers)
    for (auto e : L.model.resistive_edges())
      CHECK(L.model.graph().resistance(e) >= cfg.min_resistance_fraction * cfg.init_resistance);
}

TEST_CASE("small full-batch steps never increase the loss", "[training]") {
  auto cfg = small_config();
  cfg.learning_rate = 1e-4;
  std::mt19937_64 rng(cfg.seed);
  const auto teacher = make_teacher(cfg, rng);
  const auto data = generate_synthetic_dataset(teacher, 5, rng);
  auto net = make_teacher(cfg, rng);
  const auto params = trainable_parameters(net);
  auto loss = [&](const CascadeNetwork& n) {
    const double e = aggregate_error(n, data);
    return e * e;
  };
  double prev = loss(net);
  for (int step = 0; step < 10; ++step) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(params.size()));
    for (std::size_t s = 0; s < data.size(); ++s) {
      const auto lg = loss_grad(net, data.inputs[s], data.targets[s], params, GradMethod::HardwareLinearization);
      REQUIRE_FALSE(lg.kink);
      g += lg.grad;
    }
    apply_update(net, nullptr, params, g, cfg, rng);
    const double now = loss(net);
    CHECK(now <= prev);
    prev = now;
  }
}

TEST_CASE("configuration validation", "[training]") {
  auto cfg = small_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.widths = {3};
  CHECK_THROWS_AS(cfg.validate(), InputError);
  cfg = small_config();
  cfg.widths = {3, 0, 2};
  CHECK_THROWS_AS(cfg.validate(), InputError);
  cfg = small_config();
  cfg.learning_rate = -1.0;
  CHECK_THROWS_AS(cfg.validate(), InputError);
  cfg = small_config();
  cfg.noise = NoiseConfig{1.5, 0.1};
  CHECK_THROWS_AS(cfg.validate(), InputError);
  cfg = small_config();
  cfg.samples = 0;
  CHECK_THROWS_AS(cfg.validate(), InputError);
  cfg = small_config();
  cfg.input_min = 1.0;
  CHECK_THROWS_AS(cfg.validate(), InputError);
}

TEST_CASE("dataset inputs respect the window", "[training]") {
  auto cfg = small_config();
  std::mt19937_64 rng(5);
  const auto teacher = make_teacher(cfg, rng);
  const auto d = generate_synthetic_dataset(teacher, 20, rng, -0.5, 0.25);
  for (const auto& x : d.inputs) {
    CHECK(x.minCoeff() >= -0.5);
    CHECK(x.maxCoeff() <= 0.25);
  }
  CHECK_THROWS_AS(generate_synthetic_dataset(teacher, 2, rng, 1.0, 1.0), InputError);
}

TEST_CASE("zero epochs returns an empty curve", "[training]") {
  auto cfg = small_config();
  cfg.epochs = 0;
  const auto res = run_experiment(cfg);
  CHECK(res.curve.errors.empty());
  CHECK(res.curve.initial_error > 0.0);
}
