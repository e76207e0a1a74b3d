// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <random>
#include <sstream>

#include "equinet/io.hpp"
#include "oracles.hpp"

using namespace equinet;
using Catch::Matchers::ContainsSubstring;

TEST_CASE("netlists round-trip exactly", "[io]") {
  std::mt19937_64 rng(41);
  const CircuitGraph g = build_crossbar_equilibrium(oracle::random_matrix(rng, 3, 4, 0.1, 3.0),
                                                    Shockley{1.05, 0.025852, 1e-13, Orientation::Admittance});
  const json j = netlist_to_json(g);
  CHECK(j["version"] == 1);
  const CircuitGraph back = netlist_from_json(parse_json(j.dump(2)));
  CHECK(netlist_to_json(back) == j);
  const CircuitModel a(g), b(back);
  CHECK(a.kernel().H == b.kernel().H);
  CHECK(a.kernel().B == b.kernel().B);
}

TEST_CASE("every activation type survives serialization", "[io]") {
  const ActivationKind kinds[] = {IdealDiodeForward{}, IdealDiodeReverse{},
                                  Shockley{1.0, 0.025852, 1e-12, Orientation::Impedance},
                                  Shockley{1.05, 0.025852, 1e-13, Orientation::Admittance}, ZenerPairImpedance{0.7},
                                  CrdPairAdmittance{2e-3}};
  for (const auto& k : kinds) {
    const json j = activation_to_json(k);
    CHECK(activation_to_json(activation_from_json(j)) == j);
  }
  CHECK_THROWS_AS(activation_from_json(json{{"type", "tunnel"}}), InputError);
  CHECK_THROWS_AS(activation_from_json(json{{"type", "zener_pair"}, {"limit", -1.0}}), InputError);
}

TEST_CASE("malformed netlists are rejected with a location", "[io]") {
  try {
    parse_json("{\n  \"version\": 1,\n  \"nodes\": ,\n}", "x.json");
    FAIL("no exception");
  } catch (const InputError& e) {
    CHECK_THAT(e.what(), ContainsSubstring("x.json:3:"));
  }
  const json base = netlist_to_json(build_crossbar_feedforward(Eigen::MatrixXd::Ones(1, 1)));
  auto bad = base;
  bad["version"] = 2;
  CHECK_THROWS_AS(netlist_from_json(bad), InputError);
  bad = base;
  bad["edges"][0]["head"] = 99;
  CHECK_THROWS_AS(netlist_from_json(bad), InputError);
  bad = base;
  bad["edges"][0]["kind"] = "capacitor";
  CHECK_THROWS_AS(netlist_from_json(bad), InputError);
  bad = base;
  bad["surprise"] = true;
  CHECK_THROWS_AS(netlist_from_json(bad), InputError);
}

TEST_CASE("cascades round-trip and evaluate identically", "[io]") {
  TrainConfig cfg;
  cfg.widths = {3, 4, 2};
  std::mt19937_64 rng(42);
  const auto net = make_teacher(cfg, rng);
  const json j = cascade_to_json(net);
  const auto back = cascade_from_json(parse_json(j.dump()));
  CHECK(cascade_to_json(back) == j);
  const Eigen::VectorXd x = oracle::random_vector(rng, 3, 0, 1);
  CHECK(cascade_infer(back, x) == cascade_infer(net, x));
}

TEST_CASE("training configs round-trip and validate", "[io]") {
  TrainConfig c;
  c.widths = {5, 3};
  c.epochs = 7;
  c.method = GradMethod::EquilibriumBackprop;
  c.device = DeviceModel::Shockley;
  c.noise = NoiseConfig{0.02, 0.03};
  c.seed = 99;
  const json j = config_to_json(c);
  CHECK(config_to_json(config_from_json(j)) == j);

  const auto partial = config_from_json(parse_json(R"({"version": 1, "epochs": 3})"));
  CHECK(partial.epochs == 3);
  CHECK(partial.widths == TrainConfig{}.widths);
  CHECK_FALSE(partial.noise);
  CHECK_THROWS_AS(config_from_json(parse_json(R"({"epochs": 3})")), InputError);

  CHECK_THROWS_AS(config_from_json(parse_json(R"({"version": 1, "epoch": 3})")), InputError);
  CHECK_THROWS_AS(config_from_json(parse_json(R"({"version": 1, "widths": [3, 0]})")), InputError);
  CHECK_THROWS_AS(config_from_json(parse_json(R"({"version": 1, "method": "adam"})")), InputError);
  CHECK_THROWS_AS(config_from_json(parse_json(R"({"version": 1, "noise": {"init_rel": 2}})")), InputError);
  CHECK_THROWS_AS(config_from_json(parse_json(R"({"version": 1, "learning_rate": "fast"})")), InputError);
}

TEST_CASE("input vectors in either layout", "[io]") {
  const std::vector<Quantity> q{Quantity::Current, Quantity::Voltage, Quantity::Voltage};
  const Eigen::Vector3d ref(0.5, 1.0, 2.0);
  CHECK(input_from_json(parse_json("[0.5, 1, 2]"), q) == ref);
  CHECK(input_from_json(parse_json(R"({"v": [1, 2], "i": [0.5]})"), q) == ref);
  CHECK_THROWS_AS(input_from_json(parse_json("[]"), q), InputError);
  CHECK_THROWS_AS(input_from_json(parse_json("[1, 2]"), q), InputError);
  CHECK_THROWS_AS(input_from_json(parse_json(R"({"v": [1]})"), q), InputError);
  CHECK_THROWS_AS(input_from_json(parse_json("[1, \"a\", 2]"), q), InputError);
}

TEST_CASE("error curves round-trip through CSV", "[io]") {
  const std::vector<double> e{1.0, 0.1, 1.0 / 3.0, 2.5e-17, 0.0};
  std::stringstream ss;
  write_curve_csv(ss, e);
  CHECK(read_curve_csv(ss) == e);

  std::stringstream empty;
  write_curve_csv(empty, {});
  CHECK(empty.str() == "errors\n");
  CHECK(read_curve_csv(empty).empty());

  std::stringstream bad("errors\n1.0\nfoo\n");
  CHECK_THROWS_WITH(read_curve_csv(bad, "c.csv"), ContainsSubstring("c.csv:3"));
  std::stringstream nohead("1.0\n");
  CHECK_THROWS_AS(read_curve_csv(nohead), InputError);
}

TEST_CASE("matrices and vectors", "[io]") {
  const Eigen::MatrixXd M = (Eigen::MatrixXd(2, 3) << 1, 2, 3, 4, 5, 6).finished();
  CHECK(matrix_from_json(matrix_to_json(M)) == M);
  CHECK_THROWS_AS(matrix_from_json(parse_json("[[1, 2], [3]]")), InputError);
  const Eigen::VectorXd v = Eigen::Vector3d(0.1, -2, 1e300);
  CHECK(vector_from_json(vector_to_json(v)) == v);
  CHECK(format_double(0.1) == "0.1");
}
