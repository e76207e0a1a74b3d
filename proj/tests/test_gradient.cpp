// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include <random>

#include "equinet/gradient.hpp"
#include "equinet/solver.hpp"
#include "oracles.hpp"

using namespace equinet;
using Catch::Approx;

namespace {

// Central differences of solves accurate to ~1e-15 carry ~1e-9 absolute
// noise at eps = 1e-6, so tiny gradients are compared against a floor.
double max_rel(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor = 1e-3) {
  const double scale = std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), floor});
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

// Away from kinks by `margin` (state values and duals of pinned states).
bool well_separated(const KernelBehavior& k, const Eigen::VectorXd& z, const Eigen::VectorXd& u, double margin) {
  const Eigen::VectorXd w = -(k.H * z + k.B * u);
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if (z[i] > 0.0 && z[i] < margin) return false;
    if (z[i] <= 0.0 && std::abs(w[i]) < margin) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("scalar relu kernel has the chain-rule derivative", "[gradient]") {
  KernelBehavior k;
  k.H = Eigen::MatrixXd::Constant(1, 1, 2.0);
  k.B = Eigen::MatrixXd::Constant(1, 1, -1.0);
  k.C = Eigen::MatrixXd::Constant(1, 1, -1.0);
  k.D = Eigen::MatrixXd::Zero(1, 1);
  k.activations = {IdealDiodeReverse{}};
  for (double u : {3.0, -3.0}) {
    const auto rep = solve(k, Eigen::VectorXd::Constant(1, u), SolverKind::ForwardBackward);
    KernelDerivative d;
    d.du = Eigen::VectorXd::Ones(1);
    const auto g = gradient_from_derivatives(k, rep.z_star, Eigen::VectorXd::Constant(1, u), d);
    CHECK(g.dy[0] == Approx(u > 0 ? 0.5 : 0.0));
    CHECK_FALSE(g.kink);
  }
}

TEST_CASE("two-by-two layer, conductance derivative against central differences", "[gradient]") {
  const CircuitModel model(build_crossbar_feedforward(Eigen::MatrixXd::Ones(2, 2)));
  const Eigen::Vector4d u(0.0, 0.0, 1.0, 0.0);  // (i_out; v_in)
  const auto rep = solve(model.kernel(), u, SolverKind::ForwardBackward);
  REQUIRE(rep.z_star[0] == Approx(0.5));
  const ParamBinding b{ParamTarget::Conductance, 0, 0};
  const auto g = gradient_output_wrt_param(model, b, u, rep);
  const auto fd = finite_difference_gradient(model, b, u, 1e-6);
  CHECK(max_rel(g.dy, fd) < 1e-6);
  // d/dg11 of g11 / (g11 + g21) at unit conductances
  CHECK(g.dy[0] == Approx(0.25).epsilon(1e-12));
}

TEST_CASE("hardware linearization matches finite differences on crossbars", "[gradient]") {
  std::mt19937_64 rng(21);
  std::size_t checked = 0;
  for (int trial = 0; trial < 80; ++trial) {
    const Eigen::Index p = 1 + trial % 4, q = 1 + (trial * 7) % 5;
    const bool resistor = trial % 2;
    const CircuitModel model(build_crossbar_equilibrium(oracle::random_matrix(rng, p + 1, q + 1, 0.2, 2.0),
                                                        IdealDiodeReverse{},
                                                        resistor ? ResistiveForm::Resistor : ResistiveForm::Conductor));
    const Eigen::VectorXd u = oracle::random_vector(rng, p + q, -1, 1);
    const auto rep = solve(model.kernel(), u, SolverKind::ForwardBackward);
    REQUIRE(rep.converged);
    if (!well_separated(model.kernel(), rep.z_star, u, 1e-7)) continue;
    const auto edges = model.resistive_edges();
    const std::size_t e = edges[std::uniform_int_distribution<std::size_t>(0, edges.size() - 1)(rng)];
    for (auto target : {ParamTarget::Resistance, ParamTarget::Conductance}) {
      const ParamBinding b{target, 0, e};
      const double theta = model.parameter(b);
      const auto hw = gradient_output_wrt_param(model, b, u, rep);
      const auto fd = finite_difference_gradient(model, b, u, 1e-6 * std::max(1.0, theta));
      INFO("trial " << trial << " edge " << e);
      CHECK_FALSE(hw.kink);
      CHECK(max_rel(hw.dy, fd) < 1e-6);
    }
    const ParamBinding off{ParamTarget::InputOffset, 0, static_cast<std::size_t>(trial) % model.ports()};
    CHECK(max_rel(gradient_output_wrt_param(model, off, u, rep).dy, finite_difference_gradient(model, off, u, 1e-6)) <
          1e-6);
    ++checked;
  }
  CHECK(checked >= 40);
}

TEST_CASE("Shockley networks linearize through the device slope", "[gradient]") {
  std::mt19937_64 rng(22);
  const Shockley d{1.05, 0.025852, 1e-13, Orientation::Admittance};
  for (int trial = 0; trial < 10; ++trial) {
    const CircuitModel model(build_crossbar_equilibrium(oracle::random_matrix(rng, 3, 4, 0.2, 2.0), d));
    const Eigen::VectorXd u = oracle::random_vector(rng, 5, -0.5, 0.5);
    const auto rep = solve(model.kernel(), u, SolverKind::ForwardBackward);
    REQUIRE(rep.converged);
    const ParamBinding b{ParamTarget::Conductance, 0, static_cast<std::size_t>(trial)};
    const auto hw = gradient_output_wrt_param(model, b, u, rep);
    const auto fd = finite_difference_gradient(model, b, u, 1e-6);
    CHECK(max_rel(hw.dy, fd) < 1e-5);
  }
}

TEST_CASE("excitation and inverse routes give the same hybrid derivative", "[gradient]") {
  std::mt19937_64 rng(23);
  const CircuitModel model(build_crossbar_equilibrium(oracle::random_matrix(rng, 4, 5, 0.2, 2.0)));
  for (auto e : model.resistive_edges()) {
    const ParamBinding b{ParamTarget::Resistance, 0, e};
    const Eigen::MatrixXd a = model.hybrid_derivative(b, DerivativeRoute::Excitation);
    const Eigen::MatrixXd c = model.hybrid_derivative(b, DerivativeRoute::Inverse);
    CHECK((a - c).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, c.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("hybrid derivative is rank one and signature symmetric", "[gradient]") {
  std::mt19937_64 rng(24);
  const CircuitModel model(build_crossbar_equilibrium(oracle::random_matrix(rng, 3, 4, 0.2, 2.0)));
  const Eigen::VectorXd sigma = model.hybrid().signature();
  for (auto e : model.resistive_edges()) {
    const ParamBinding b{ParamTarget::Conductance, 0, e};
    const Eigen::MatrixXd dH = model.hybrid_derivative(b);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(dH);
    const auto s = svd.singularValues();
    CHECK(s[0] > 0.0);
    if (s.size() > 1) CHECK(s[1] <= 1e-10 * s[0]);
    CHECK((sigma.asDiagonal() * dH - dH.transpose() * sigma.asDiagonal()).cwiseAbs().maxCoeff() <= 1e-12);

    const Eigen::MatrixXd fd = oracle::central_difference_matrix(
        [&](double g) {
          CircuitModel m = model;
          m.set_conductance(e, g);
          return m.hybrid().Ht;
        },
        model.graph().conductance(e), 1e-6);
    CHECK((dH - fd).cwiseAbs().maxCoeff() <= 1e-7 * std::max(1.0, fd.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("all-conducting linearization is the restricted linear solve", "[gradient]") {
  std::mt19937_64 rng(25);
  const CircuitModel model(build_crossbar_feedforward(oracle::random_matrix(rng, 3, 3, 0.5, 1.5)));
  const auto& k = model.kernel();
  Eigen::VectorXd u(6);
  u << 0, 0, 0, 1.0, 0.8, 0.9;  // positive inputs keep every output positive
  const auto rep = solve(k, u, SolverKind::ForwardBackward);
  REQUIRE((rep.z_star.array() > 0.1).all());
  const LinearizedKernel lin(k, rep.z_star, {});
  CHECK(lin.free_count() == 3);
  for (const auto& el : lin.elements()) CHECK(el.mode == LinearizedMode::Short);
  const Eigen::VectorXd ul = oracle::random_vector(rng, 6, -1, 1);
  const Eigen::VectorXd zl = -k.H.lu().solve(k.B * ul);
  CHECK((lin.state(ul) - zl).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("adjoint is the transpose of the linearized map", "[gradient]") {
  std::mt19937_64 rng(26);
  const CircuitModel model(build_crossbar_equilibrium(oracle::random_matrix(rng, 5, 5, 0.2, 2.0)));
  const auto& k = model.kernel();
  const Eigen::VectorXd u = oracle::random_vector(rng, 8, -1, 1);
  const auto rep = solve(k, u, SolverKind::ForwardBackward);
  const LinearizedKernel lin(k, rep.z_star, {});
  const Eigen::VectorXd ul = oracle::random_vector(rng, 8, -1, 1);
  const Eigen::VectorXd ud = oracle::random_vector(rng, 4, -1, 1);
  const Eigen::VectorXd ybar = oracle::random_vector(rng, 8, -1, 1);
  const auto adj = lin.adjoint(ybar);
  CHECK(ybar.dot(lin.output_with(ul, ud)) == Approx(adj.input.dot(ul) + adj.offset.dot(ud)).epsilon(1e-12));
}

TEST_CASE("kinks are reported", "[gradient]") {
  // equal conductances, opposite inputs: the output sits exactly at zero
  const CircuitModel model(build_crossbar_feedforward(Eigen::MatrixXd::Ones(2, 2)));
  const Eigen::Vector4d u(0.0, 0.0, 1.0, -1.0);
  const auto rep = solve(model.kernel(), u, SolverKind::ForwardBackward);
  REQUIRE(rep.z_star.cwiseAbs().maxCoeff() < 1e-12);
  const auto g = gradient_output_wrt_param(model, {ParamTarget::Conductance, 0, 0}, u, rep);
  CHECK(g.kink);
  CHECK(near_kink(model.kernel(), rep.z_star, u));
  // Open branch at the kink
  const LinearizedKernel lin(model.kernel(), rep.z_star, {});
  CHECK(lin.elements()[0].mode == LinearizedMode::Open);
}

TEST_CASE("null binding and invalid requests", "[gradient]") {
  const CircuitModel model(build_crossbar_feedforward(Eigen::MatrixXd::Ones(2, 2)));
  const Eigen::Vector4d u(0.0, 0.0, 1.0, 0.5);
  const auto rep = solve(model.kernel(), u, SolverKind::ForwardBackward);
  CHECK(gradient_output_wrt_param(model, {}, u, rep).dy.cwiseAbs().maxCoeff() == 0.0);
  CHECK(finite_difference_gradient(model, {}, u, 1e-6).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(model.kernel_derivative({ParamTarget::SynapticWeight, 0, 0}), InputError);
  CHECK_THROWS_AS(model.hybrid_derivative({ParamTarget::Resistance, 0, 4}), InputError);  // a port
  CHECK_THROWS_AS(finite_difference_gradient(model, {ParamTarget::Conductance, 0, 0}, u, 0.0), InputError);
  SolveReport bad = rep;
  bad.converged = false;
  CHECK_THROWS_AS(gradient_output_wrt_param(model, {ParamTarget::Conductance, 0, 0}, u, bad), ConvergenceError);
}
