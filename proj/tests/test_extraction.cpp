// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <random>

#include "equinet/extraction.hpp"
#include "equinet/gradient.hpp"
#include "equinet/solver.hpp"
#include "oracles.hpp"

using namespace equinet;

namespace {

// Connected resistor skeleton on `nodes` nodes plus a few ports and ideal
// diodes between random node pairs.
CircuitGraph random_graph(std::mt19937_64& rng, std::size_t nodes, std::size_t vports, std::size_t cports,
                          std::size_t diodes) {
  std::uniform_int_distribution<std::size_t> pick(0, nodes - 1);
  std::uniform_real_distribution<double> R(0.5, 5.0);
  std::bernoulli_distribution coin(0.5);
  CircuitGraph g(nodes);
  for (std::size_t n = 1; n < nodes; ++n) {
    const std::size_t m = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    if (coin(rng))
      g.add_edge(n, m, Resistor{R(rng)});
    else
      g.add_edge(m, n, Conductor{1.0 / R(rng)});
  }
  for (std::size_t k = 0; k < nodes; ++k) {
    const auto a = pick(rng), b = pick(rng);
    if (a != b) g.add_edge(a, b, Resistor{R(rng)});
  }
  auto pair = [&] {
    std::size_t a = pick(rng), b = pick(rng);
    while (b == a) b = pick(rng);
    return std::pair{a, b};
  };
  for (std::size_t k = 0; k < vports; ++k) {
    auto [a, b] = pair();
    g.add_edge(a, b, Port{PortRole::VoltageInput});
  }
  for (std::size_t k = 0; k < cports; ++k) {
    auto [a, b] = pair();
    g.add_edge(a, b, Port{PortRole::CurrentInput});
  }
  for (std::size_t k = 0; k < diodes; ++k) {
    auto [a, b] = pair();
    g.add_edge(a, b, Diode{IdealDiodeReverse{}});
  }
  return g;
}

// Hybrid matrix column by column from nodal analysis: each external edge is
// driven by the quantity the partition assigned to it.
Eigen::MatrixXd nodal_hybrid(const CircuitGraph& g, const FundamentalForm& f) {
  const auto n = static_cast<Eigen::Index>(f.ext_edges.size());
  Eigen::MatrixXd Ht(n, n);
  oracle::Sources s;
  s.is_voltage.assign(g.edge_count(), false);
  for (std::size_t k = 0; k < f.ext_edges.size(); ++k)
    s.is_voltage[f.ext_edges[k]] = f.ext_quantity[k] == Quantity::Voltage;
  for (Eigen::Index j = 0; j < n; ++j) {
    s.value = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.edge_count()));
    s.value[static_cast<Eigen::Index>(f.ext_edges[static_cast<std::size_t>(j)])] = 1.0;
    const auto sol = oracle::nodal_solve(g, s);
    REQUIRE(sol);
    for (Eigen::Index a = 0; a < n; ++a) {
      const auto e = static_cast<Eigen::Index>(f.ext_edges[static_cast<std::size_t>(a)]);
      Ht(a, j) = f.ext_quantity[static_cast<std::size_t>(a)] == Quantity::Voltage ? sol->i[e] : sol->v[e];
    }
  }
  return Ht;
}

}  // namespace

TEST_CASE("partition puts voltage-labelled edges in the tree", "[extraction]") {
  const Eigen::MatrixXd G = Eigen::MatrixXd::Constant(3, 4, 0.5);
  const auto g = build_crossbar_equilibrium(G);
  const auto part = partition_tree_cotree(g);
  CHECK(part.tree.size() == g.node_count() - 1);
  for (std::size_t e = 0; e < g.edge_count(); ++e) {
    if (requires_tree(g.edge(e).element)) CHECK(part.in_tree[e]);
    if (requires_cotree(g.edge(e).element)) CHECK_FALSE(part.in_tree[e]);
  }
}

TEST_CASE("partition rejects impossible assignments", "[extraction]") {
  CircuitGraph loop(2);
  loop.add_edge(0, 1, Port{PortRole::VoltageInput});
  loop.add_edge(0, 1, Diode{IdealDiodeReverse{}});
  CHECK_THROWS_AS(partition_tree_cotree(loop), TopologyError);

  CircuitGraph cut(3);
  cut.add_edge(0, 1, Resistor{1.0});
  cut.add_edge(1, 2, Port{PortRole::CurrentInput});
  CHECK_THROWS_AS(partition_tree_cotree(cut), TopologyError);

  CircuitGraph apart(4);
  apart.add_edge(0, 1, Resistor{1.0});
  apart.add_edge(2, 3, Resistor{1.0});
  CHECK_THROWS_AS(partition_tree_cotree(apart), TopologyError);

  CHECK_THROWS_AS(CircuitGraph(2).add_edge(0, 0, Resistor{1.0}), InputError);
  CHECK_THROWS_AS(CircuitGraph(2).add_edge(0, 1, Resistor{-1.0}), InputError);
  CHECK_THROWS_AS(CircuitGraph(2).add_edge(0, 2, Resistor{1.0}), InputError);
}

TEST_CASE("fundamental matrix reproduces cotree voltages and F is skew", "[extraction]") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const auto g = random_graph(rng, 3 + trial % 4, 1, 1, 1);
    Partition part;
    try {
      part = partition_tree_cotree(g);
    } catch (const TopologyError&) {
      continue;
    }
    const auto f = fundamental_form(g, part);
    const Eigen::VectorXd V = oracle::random_vector(rng, static_cast<Eigen::Index>(g.node_count()), -1, 1);
    Eigen::VectorXd vt(static_cast<Eigen::Index>(part.tree.size())), vc(static_cast<Eigen::Index>(part.cotree.size()));
    auto edge_v = [&](std::size_t e) {
      return V[static_cast<Eigen::Index>(g.edge(e).tail)] - V[static_cast<Eigen::Index>(g.edge(e).head)];
    };
    for (std::size_t t = 0; t < part.tree.size(); ++t) vt[static_cast<Eigen::Index>(t)] = edge_v(part.tree[t]);
    for (std::size_t c = 0; c < part.cotree.size(); ++c) vc[static_cast<Eigen::Index>(c)] = edge_v(part.cotree[c]);
    CHECK((f.N * vt - vc).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((f.P + f.P.transpose()).cwiseAbs().maxCoeff() == 0.0);
    if (f.Q.size()) CHECK((f.Q + f.Q.transpose()).cwiseAbs().maxCoeff() == 0.0);
    for (Eigen::Index i = 0; i < f.N.size(); ++i) {
      const double x = f.N.data()[i];
      CHECK((x == 0.0 || x == 1.0 || x == -1.0));
    }
  }
}

TEST_CASE("hybrid matrix equals dense nodal analysis", "[extraction]") {
  std::mt19937_64 rng(5);
  int checked = 0;
  for (int trial = 0; trial < 200 && checked < 60; ++trial) {
    const auto g = random_graph(rng, 3 + trial % 4, trial % 2, 1 + trial % 2, 1 + trial % 2);
    Partition part;
    try {
      part = partition_tree_cotree(g);
    } catch (const TopologyError&) {
      continue;
    }
    const auto f = fundamental_form(g, part);
    const auto h = reduce_to_hybrid(f);
    const Eigen::MatrixXd ref = nodal_hybrid(g, f);
    INFO("trial " << trial);
    CHECK((h.Ht - ref).cwiseAbs().maxCoeff() <= 1e-10 * std::max(1.0, ref.cwiseAbs().maxCoeff()));
    CHECK(check_reciprocity(h.Ht, h.signature()).ok);
    CHECK(check_dissipative(h.Ht).ok);
    ++checked;
  }
  CHECK(checked >= 30);
}

TEST_CASE("ideal diode kernel matches brute-force diode enumeration", "[extraction]") {
  std::mt19937_64 rng(23);
  int checked = 0;
  for (int trial = 0; trial < 300 && checked < 60; ++trial) {
    const auto g = random_graph(rng, 4 + trial % 3, 1, 1, 1 + trial % 3);
    std::optional<CircuitModel> model;
    try {
      model.emplace(g);
    } catch (const TopologyError&) {
      continue;
    }
    const auto& k = model->kernel();
    const Eigen::VectorXd u = oracle::random_vector(rng, static_cast<Eigen::Index>(k.m()), -2, 2);
    Eigen::VectorXd port_value = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g.edge_count()));
    for (std::size_t p = 0; p < model->ports(); ++p)
      port_value[static_cast<Eigen::Index>(model->port_edge(p))] = u[static_cast<Eigen::Index>(p)];
    const auto sol = oracle::ideal_diode_network(g, port_value);
    Eigen::VectorXd y_ref(static_cast<Eigen::Index>(k.m()));
    for (std::size_t p = 0; p < model->ports(); ++p) {
      const auto e = static_cast<Eigen::Index>(model->port_edge(p));
      y_ref[static_cast<Eigen::Index>(p)] = k.inputs[p] == Quantity::Voltage ? sol.i[e] : sol.v[e];
    }
    const auto rep = solve(k, u, SolverKind::ForwardBackward);
    REQUIRE(rep.converged);
    INFO("trial " << trial);
    CHECK((rep.y - y_ref).cwiseAbs().maxCoeff() <= 1e-10 * std::max(1.0, y_ref.cwiseAbs().maxCoeff()));
    ++checked;
  }
  CHECK(checked >= 30);
}

TEST_CASE("equilibrium crossbar structure", "[extraction]") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index p = 1 + trial % 5, q = 1 + (trial * 3) % 6;
    const Eigen::MatrixXd G = oracle::random_matrix(rng, p + 1, q + 1, 0.1, 2.0);
    const CircuitModel model(build_crossbar_equilibrium(G));
    const auto& k = model.kernel();
    REQUIRE(k.m() == static_cast<std::size_t>(p + q));
    REQUIRE(k.n() == static_cast<std::size_t>(q));
    // current inputs first
    for (Eigen::Index i = 0; i < q; ++i) CHECK(k.inputs[static_cast<std::size_t>(i)] == Quantity::Current);
    for (Eigen::Index i = q; i < p + q; ++i) CHECK(k.inputs[static_cast<std::size_t>(i)] == Quantity::Voltage);
    CHECK(k.D.topLeftCorner(q, q).cwiseAbs().maxCoeff() == 0.0);
    CHECK(check_stieltjes(k.D.bottomRightCorner(p, p)));
    CHECK(check_stieltjes(k.H));
    // output port voltages are the diode voltages
    CHECK((k.C.topRows(q) + Eigen::MatrixXd::Identity(q, q)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(is_monotone(k));
  }
}

TEST_CASE("feedforward crossbar weights are conductance averages", "[extraction]") {
  std::mt19937_64 rng(8);
  const Eigen::MatrixXd G = oracle::random_matrix(rng, 3, 2, 0.2, 1.5);
  const CircuitModel model(build_crossbar_feedforward(G));
  const auto& k = model.kernel();
  const Eigen::MatrixXd W = -k.H.inverse() * k.B.rightCols(3);
  for (Eigen::Index out = 0; out < 2; ++out)
    for (Eigen::Index in = 0; in < 3; ++in) CHECK(W(out, in) == Catch::Approx(G(in, out) / G.col(out).sum()).epsilon(1e-12));
}

TEST_CASE("property checks flag violations", "[extraction]") {
  Eigen::MatrixXd A(2, 2);
  A << 1, 2, 0, 1;
  CHECK_FALSE(check_reciprocity(A, Eigen::VectorXd::Ones(2)).ok);
  CHECK_FALSE(check_dissipative(A).ok);
  Eigen::MatrixXd S(2, 2);
  S << 2, -1, -1, 2;
  CHECK(check_stieltjes(S));
  S(0, 1) = S(1, 0) = 0.5;
  CHECK_FALSE(check_stieltjes(S));
  CHECK_THROWS_AS(check_reciprocity(A, Eigen::VectorXd::Ones(3)), InputError);
}
