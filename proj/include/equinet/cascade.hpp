// SPDX-License-Identifier: Apache-2.0
#pragma once

// Cascades of circuits joined by ideal unilateral amplifiers.
//
// Layer i sees u_i = offset_i + S_i y_{i-1}, where S_i scatters
// gain[k] * y_{i-1}[source[k]] into input position cascade_inputs[k]; the
// first layer reads the network input x instead of y_0.  The composed kernel
// has input U = (x, offset_1, ..., offset_l), block lower triangular H, and
// output the selected rows of y_l.

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "equinet/circuit.hpp"
#include "equinet/errors.hpp"
#include "equinet/gradient.hpp"
#include "equinet/kernel.hpp"
#include "equinet/solver.hpp"

namespace equinet {

struct Synapse {
  Eigen::VectorXd gain;
  std::vector<std::size_t> source;
};

struct CascadeLayer {
  CircuitModel model;
  std::vector<std::size_t> cascade_inputs;  // kernel input positions driven by the synapse
  Synapse synapse;
  Eigen::VectorXd offset;  // added to u; length m

  std::size_t m() const { return model.ports(); }
};

struct CascadeNetwork {
  std::size_t input_dim = 0;
  std::vector<CascadeLayer> layers;
  std::vector<std::size_t> outputs;  // rows of the last layer's y

  std::size_t output_dim() const { return outputs.size(); }

  /// Throws InputError on width or label mismatches between interfaces.
  void validate() const {
    if (layers.empty()) throw InputError("cascade has no layers");
    std::size_t prev_dim = input_dim;
    std::vector<Quantity> prev_out;  // output labels of the previous layer
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& L = layers[i];
      const auto& k = L.model.kernel();
      const std::string where = "layer " + std::to_string(i) + ": ";
      if (static_cast<std::size_t>(L.offset.size()) != k.m()) throw InputError(where + "offset length mismatch");
      if (L.cascade_inputs.size() != L.synapse.source.size() ||
          static_cast<std::size_t>(L.synapse.gain.size()) != L.synapse.source.size())
        throw InputError(where + "synapse sizes mismatch");
      for (std::size_t t = 0; t < L.cascade_inputs.size(); ++t) {
        if (L.cascade_inputs[t] >= k.m()) throw InputError(where + "cascade input out of range");
        if (L.synapse.source[t] >= prev_dim) throw InputError(where + "synapse source out of range");
        if (i > 0 && prev_out[L.synapse.source[t]] != k.inputs[L.cascade_inputs[t]])
          throw InputError(where + "synapse joins a " + to_string(prev_out[L.synapse.source[t]]) +
                           " output to a " + to_string(k.inputs[L.cascade_inputs[t]]) + " input");
      }
      prev_out.clear();
      for (auto q : k.inputs) prev_out.push_back(dual(q));
      prev_dim = k.outputs();
    }
    for (auto o : outputs)
      if (o >= layers.back().model.kernel().outputs()) throw InputError("network output index out of range");
  }
};

/// Layer input from the previous layer's output (or the network input).
inline Eigen::VectorXd layer_input(const CascadeLayer& L, const Eigen::VectorXd& prev) {
  Eigen::VectorXd u = L.offset;
  for (std::size_t t = 0; t < L.cascade_inputs.size(); ++t)
    u[static_cast<Eigen::Index>(L.cascade_inputs[t])] +=
        L.synapse.gain[static_cast<Eigen::Index>(t)] * prev[static_cast<Eigen::Index>(L.synapse.source[t])];
  return u;
}

/// Synapse as a dense matrix: u = offset + S prev.
inline Eigen::MatrixXd synapse_matrix(const CascadeLayer& L, std::size_t prev_dim) {
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(L.m()), static_cast<Eigen::Index>(prev_dim));
  for (std::size_t t = 0; t < L.cascade_inputs.size(); ++t)
    S(static_cast<Eigen::Index>(L.cascade_inputs[t]), static_cast<Eigen::Index>(L.synapse.source[t])) +=
        L.synapse.gain[static_cast<Eigen::Index>(t)];
  return S;
}

struct CascadeState {
  Eigen::VectorXd x;
  std::vector<Eigen::VectorXd> u, z, y;
  std::size_t iterations = 0;
  bool converged = true;

  /// Selected outputs of the last layer.
  Eigen::VectorXd output(const CascadeNetwork& net) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(net.outputs.size()));
    for (std::size_t k = 0; k < net.outputs.size(); ++k)
      out[static_cast<Eigen::Index>(k)] = y.back()[static_cast<Eigen::Index>(net.outputs[k])];
    return out;
  }

  const Eigen::VectorXd& previous(std::size_t layer) const { return layer == 0 ? x : y[layer - 1]; }
};

/// Layer-by-layer equilibrium solves.  `warm` (same network shape) seeds
/// each layer's solver.
inline CascadeState cascade_forward(const CascadeNetwork& net, const Eigen::VectorXd& x,
                                    SolverKind kind = SolverKind::ForwardBackward, SolverOptions opt = {},
                                    const CascadeState* warm = nullptr) {
  if (static_cast<std::size_t>(x.size()) != net.input_dim) throw InputError("network input has the wrong length");
  CascadeState st;
  st.x = x;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& L = net.layers[i];
    st.u.push_back(layer_input(L, st.previous(i)));
    if (warm && warm->z.size() == net.layers.size()) opt.z0 = warm->z[i];
    auto rep = solve(L.model.kernel(), st.u.back(), kind, opt);
    st.iterations += rep.iterations;
    st.converged = st.converged && rep.converged;
    st.z.push_back(std::move(rep.z_star));
    st.y.push_back(std::move(rep.y));
  }
  return st;
}

/// Network output; throws ConvergenceError when any layer fails.
inline Eigen::VectorXd cascade_infer(const CascadeNetwork& net, const Eigen::VectorXd& x,
                                     SolverKind kind = SolverKind::ForwardBackward, const SolverOptions& opt = {}) {
  auto st = cascade_forward(net, x, kind, opt);
  if (!st.converged) throw ConvergenceError("cascade equilibrium did not converge");
  return st.output(net);
}

/// Kernel of the whole cascade.  `kernels[i]` replaces layer i's kernel when
/// given (used for derivatives); `gains[i]` likewise replaces synapse gains.
inline KernelBehavior compose_cascade(const CascadeNetwork& net, const std::vector<const KernelBehavior*>& kernels = {},
                                      const std::vector<const Eigen::VectorXd*>& gains = {}) {
  net.validate();
  auto kernel_of = [&](std::size_t i) -> const KernelBehavior& {
    return (i < kernels.size() && kernels[i]) ? *kernels[i] : net.layers[i].model.kernel();
  };
  auto synapse_of = [&](std::size_t i, std::size_t prev_dim) {
    if (i < gains.size() && gains[i]) {
      CascadeLayer moved = net.layers[i];
      moved.synapse.gain = *gains[i];
      return synapse_matrix(moved, prev_dim);
    }
    return synapse_matrix(net.layers[i], prev_dim);
  };

  std::size_t total_in = net.input_dim;
  for (const auto& L : net.layers) total_in += L.m();

  const KernelBehavior& k1 = kernel_of(0);
  const Eigen::MatrixXd S1 = synapse_of(0, net.input_dim);
  KernelBehavior out;
  out.H = k1.H;
  out.B = Eigen::MatrixXd::Zero(k1.H.rows(), static_cast<Eigen::Index>(total_in));
  out.D = Eigen::MatrixXd::Zero(k1.D.rows(), static_cast<Eigen::Index>(total_in));
  const auto nx = static_cast<Eigen::Index>(net.input_dim);
  const auto m1 = static_cast<Eigen::Index>(k1.m());
  out.B.leftCols(nx) = k1.B * S1;
  out.B.middleCols(nx, m1) = k1.B;
  out.D.leftCols(nx) = k1.D * S1;
  out.D.middleCols(nx, m1) = k1.D;
  out.C = k1.C;
  out.activations = k1.activations;
  out.blocks = {k1.n()};
  Eigen::Index used = nx + m1;

  for (std::size_t i = 1; i < net.layers.size(); ++i) {
    const KernelBehavior& k = kernel_of(i);
    const Eigen::MatrixXd S = synapse_of(i, static_cast<std::size_t>(out.C.rows()));
    const auto n0 = out.H.rows(), n = static_cast<Eigen::Index>(k.n()), m = static_cast<Eigen::Index>(k.m());
    const Eigen::MatrixXd BS = k.B * S, DS = k.D * S;

    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n0 + n, n0 + n);
    H.topLeftCorner(n0, n0) = out.H;
    H.bottomLeftCorner(n, n0) = -BS * out.C;
    H.bottomRightCorner(n, n) = k.H;

    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n0 + n, out.B.cols());
    B.topRows(n0) = out.B;
    B.bottomRows(n) = -BS * out.D;
    B.block(n0, used, n, m) += k.B;

    Eigen::MatrixXd C(k.C.rows(), n0 + n);
    C.leftCols(n0) = -DS * out.C;
    C.rightCols(n) = k.C;

    Eigen::MatrixXd D = -DS * out.D;
    D.middleCols(used, m) += k.D;

    out.H = std::move(H);
    out.B = std::move(B);
    out.C = std::move(C);
    out.D = std::move(D);
    out.activations.insert(out.activations.end(), k.activations.begin(), k.activations.end());
    out.blocks.push_back(k.n());
    used += m;
  }

  Eigen::MatrixXd Cs(static_cast<Eigen::Index>(net.outputs.size()), out.C.cols());
  Eigen::MatrixXd Ds(static_cast<Eigen::Index>(net.outputs.size()), out.D.cols());
  for (std::size_t r = 0; r < net.outputs.size(); ++r) {
    Cs.row(static_cast<Eigen::Index>(r)) = out.C.row(static_cast<Eigen::Index>(net.outputs[r]));
    Ds.row(static_cast<Eigen::Index>(r)) = out.D.row(static_cast<Eigen::Index>(net.outputs[r]));
  }
  out.C = std::move(Cs);
  out.D = std::move(Ds);
  out.inputs.clear();  // mixed; the composed input is not labelled per entry
  return out;
}

/// Composed input U = (x, offset_1, ..., offset_l).
inline Eigen::VectorXd composed_input(const CascadeNetwork& net, const Eigen::VectorXd& x) {
  Eigen::Index total = x.size();
  for (const auto& L : net.layers) total += static_cast<Eigen::Index>(L.m());
  Eigen::VectorXd U(total);
  U.head(x.size()) = x;
  Eigen::Index at = x.size();
  for (const auto& L : net.layers) {
    U.segment(at, L.offset.size()) = L.offset;
    at += L.offset.size();
  }
  return U;
}

/// Position of layer `layer`'s offset entry `index` inside U.
inline std::size_t composed_offset_position(const CascadeNetwork& net, std::size_t layer, std::size_t index) {
  std::size_t at = net.input_dim;
  for (std::size_t i = 0; i < layer; ++i) at += net.layers[i].m();
  return at + index;
}

// ---- parameters ------------------------------------------------------------

inline double cascade_parameter(const CascadeNetwork& net, const ParamBinding& b) {
  if (b.layer >= net.layers.size()) throw InputError("parameter layer out of range");
  const auto& L = net.layers[b.layer];
  switch (b.target) {
    case ParamTarget::Resistance:
    case ParamTarget::Conductance: return L.model.parameter(b);
    case ParamTarget::InputOffset: return L.offset[static_cast<Eigen::Index>(b.index)];
    case ParamTarget::SynapticWeight: return L.synapse.gain[static_cast<Eigen::Index>(b.index)];
    case ParamTarget::None: break;
  }
  throw InputError("binding has no value");
}

inline void set_cascade_parameter(CascadeNetwork& net, const ParamBinding& b, double value) {
  if (b.layer >= net.layers.size()) throw InputError("parameter layer out of range");
  auto& L = net.layers[b.layer];
  switch (b.target) {
    case ParamTarget::Resistance:
    case ParamTarget::Conductance: L.model.set_parameter(b, value); return;
    case ParamTarget::InputOffset:
      if (b.index >= L.m()) throw InputError("offset index out of range");
      L.offset[static_cast<Eigen::Index>(b.index)] = value;
      return;
    case ParamTarget::SynapticWeight:
      if (b.index >= static_cast<std::size_t>(L.synapse.gain.size())) throw InputError("synapse index out of range");
      L.synapse.gain[static_cast<Eigen::Index>(b.index)] = value;
      return;
    case ParamTarget::None: return;
  }
}

/// Derivative of the composed kernel.  Composition is affine in each single
/// layer's matrices and gains, so the difference below is exact.
inline KernelDerivative composed_kernel_derivative(const CascadeNetwork& net, const ParamBinding& b,
                                                   DerivativeRoute route = DerivativeRoute::Excitation) {
  KernelDerivative d;
  const KernelBehavior base = compose_cascade(net);
  auto diff = [&](const KernelBehavior& moved) {
    d.dH = moved.H - base.H;
    d.dB = moved.B - base.B;
    d.dC = moved.C - base.C;
    d.dD = moved.D - base.D;
  };
  switch (b.target) {
    case ParamTarget::None: return d;
    case ParamTarget::InputOffset:
      d.du = Eigen::VectorXd::Unit(base.B.cols(), static_cast<Eigen::Index>(composed_offset_position(net, b.layer, b.index)));
      return d;
    case ParamTarget::SynapticWeight: {
      Eigen::VectorXd g = net.layers.at(b.layer).synapse.gain;
      g[static_cast<Eigen::Index>(b.index)] += 1.0;
      std::vector<const Eigen::VectorXd*> gains(net.layers.size(), nullptr);
      gains[b.layer] = &g;
      diff(compose_cascade(net, {}, gains));
      return d;
    }
    case ParamTarget::Resistance:
    case ParamTarget::Conductance: {
      const auto& model = net.layers.at(b.layer).model;
      const KernelDerivative kd = model.kernel_derivative(b, route);
      KernelBehavior moved = model.kernel();
      moved.H += kd.dH;
      moved.B += kd.dB;
      moved.C += kd.dC;
      moved.D += kd.dD;
      std::vector<const KernelBehavior*> ks(net.layers.size(), nullptr);
      ks[b.layer] = &moved;
      diff(compose_cascade(net, ks));
      return d;
    }
  }
  return d;
}

// ---- gradients -------------------------------------------------------------

/// Hardware linearizations of every layer at a cascade operating point.
struct CascadeLinearization {
  std::vector<LinearizedKernel> layers;
  bool kink = false;
};

inline CascadeLinearization linearize_cascade(const CascadeNetwork& net, const CascadeState& st) {
  if (!st.converged) throw ConvergenceError("cascade operating point did not converge");
  CascadeLinearization lin;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& k = net.layers[i].model.kernel();
    lin.layers.emplace_back(k, st.z[i], Eigen::VectorXd());
    lin.kink = lin.kink || near_kink(k, st.z[i], st.u[i]);
  }
  return lin;
}

namespace detail {

// dy of layer `j` and the propagation of it to the network output.
inline Eigen::VectorXd propagate(const CascadeNetwork& net, const CascadeLinearization& lin, std::size_t j,
                                 Eigen::VectorXd dy) {
  for (std::size_t i = j + 1; i < net.layers.size(); ++i) {
    const auto& L = net.layers[i];
    Eigen::VectorXd du = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(L.m()));
    for (std::size_t t = 0; t < L.cascade_inputs.size(); ++t)
      du[static_cast<Eigen::Index>(L.cascade_inputs[t])] +=
          L.synapse.gain[static_cast<Eigen::Index>(t)] * dy[static_cast<Eigen::Index>(L.synapse.source[t])];
    dy = lin.layers[i].output(du);
  }
  Eigen::VectorXd out(static_cast<Eigen::Index>(net.outputs.size()));
  for (std::size_t k = 0; k < net.outputs.size(); ++k)
    out[static_cast<Eigen::Index>(k)] = dy[static_cast<Eigen::Index>(net.outputs[k])];
  return out;
}

inline Eigen::VectorXd stack_uz(const Eigen::VectorXd& u, const Eigen::VectorXd& z) {
  Eigen::VectorXd x(u.size() + z.size());
  x << u, z;
  return x;
}

}  // namespace detail

/// Forward-mode gradient of the network output for one parameter: the
/// parameter's own layer is differentiated through its linearization, then
/// each later layer's linearization is driven by the upstream increment
/// through the synapses.
inline GradientResult cascade_gradient(const CascadeNetwork& net, const ParamBinding& b, const CascadeState& st,
                                       const CascadeLinearization& lin,
                                       DerivativeRoute route = DerivativeRoute::Excitation) {
  GradientResult g;
  g.kink = lin.kink;
  if (b.target == ParamTarget::None) {
    g.dy = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.outputs.size()));
    return g;
  }
  const std::size_t j = b.layer;
  if (j >= net.layers.size()) throw InputError("parameter layer out of range");
  const auto& L = net.layers[j];
  const auto& k = L.model.kernel();
  Eigen::VectorXd dy;
  if (b.target == ParamTarget::Resistance || b.target == ParamTarget::Conductance) {
    const KernelDerivative d = L.model.kernel_derivative(b, route);
    const Eigen::VectorXd u_d = d.dH * st.z[j] + d.dB * st.u[j];
    dy = lin.layers[j].output_with(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k.m())), u_d) - d.dC * st.z[j] -
         d.dD * st.u[j];
  } else {
    Eigen::VectorXd du = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k.m()));
    if (b.target == ParamTarget::InputOffset) {
      if (b.index >= k.m()) throw InputError("offset index out of range");
      du[static_cast<Eigen::Index>(b.index)] = 1.0;
    } else {
      if (b.index >= L.cascade_inputs.size()) throw InputError("synapse index out of range");
      du[static_cast<Eigen::Index>(L.cascade_inputs[b.index])] =
          st.previous(j)[static_cast<Eigen::Index>(L.synapse.source[b.index])];
    }
    dy = lin.layers[j].output(du);
  }
  g.dy = detail::propagate(net, lin, j, std::move(dy));
  return g;
}

inline GradientResult cascade_gradient(const CascadeNetwork& net, const ParamBinding& b, const CascadeState& st,
                                       DerivativeRoute route = DerivativeRoute::Excitation) {
  return cascade_gradient(net, b, st, linearize_cascade(net, st), route);
}

/// Jacobian of the network output with respect to `params` by forward mode,
/// using one batch of excitation responses per layer.
inline Eigen::MatrixXd cascade_jacobian_hw(const CascadeNetwork& net, const CascadeState& st,
                                           const CascadeLinearization& lin, const std::vector<ParamBinding>& params) {
  Eigen::MatrixXd J(static_cast<Eigen::Index>(net.outputs.size()), static_cast<Eigen::Index>(params.size()));
  std::vector<Eigen::MatrixXd> excitation(net.layers.size());
  std::vector<Eigen::VectorXd> projected(net.layers.size());
  for (std::size_t c = 0; c < params.size(); ++c) {
    const auto& b = params[c];
    if (b.target != ParamTarget::Resistance && b.target != ParamTarget::Conductance) {
      J.col(static_cast<Eigen::Index>(c)) = cascade_gradient(net, b, st, lin).dy;
      continue;
    }
    const std::size_t j = b.layer;
    const auto& model = net.layers[j].model;
    const auto& form = model.form();
    if (excitation[j].size() == 0) {
      excitation[j] = model.excitation_responses();
      projected[j] = excitation[j].transpose() * (form.signature().asDiagonal() * detail::stack_uz(st.u[j], st.z[j]));
    }
    const std::size_t slot = form.resistive_slot(b.index);
    if (slot == FundamentalForm::npos) throw InputError("edge " + std::to_string(b.index) + " is not resistive");
    const bool cotree = slot < form.cotree_resistive;
    const double rho = form.rho(slot);
    double chain = cotree ? 1.0 : -1.0;  // signature sign s_i
    if (cotree && b.target == ParamTarget::Conductance) chain *= -rho * rho;
    if (!cotree && b.target == ParamTarget::Resistance) chain *= -rho * rho;
    // dHt (u; z) = chain * a (a^T Sigma (u; z)).
    const auto si = static_cast<Eigen::Index>(slot);
    const Eigen::VectorXd v = chain * projected[j][si] * excitation[j].col(si);
    const auto m = static_cast<Eigen::Index>(model.ports());
    const auto n = static_cast<Eigen::Index>(model.diodes());
    // u_d = dH z + dB u = -(dHt (u;z))_diodes ; -dC z - dD u = (dHt (u;z))_ports
    const Eigen::VectorXd u_d = -v.tail(n);
    Eigen::VectorXd dy = lin.layers[j].output_with(Eigen::VectorXd::Zero(m), u_d) + v.head(m);
    J.col(static_cast<Eigen::Index>(c)) = detail::propagate(net, lin, j, std::move(dy));
  }
  return J;
}

/// Reverse-mode (adjoint) gradient of ybar . output with respect to
/// `params`, with edge derivatives from the direct inverse form.
inline Eigen::VectorXd cascade_vjp(const CascadeNetwork& net, const CascadeState& st, const CascadeLinearization& lin,
                                   const Eigen::VectorXd& ybar_out, const std::vector<ParamBinding>& params) {
  const std::size_t L = net.layers.size();
  std::vector<Eigen::VectorXd> ybar(L), offset_bar(L), input_bar(L);
  ybar[L - 1] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.layers.back().model.kernel().outputs()));
  for (std::size_t k = 0; k < net.outputs.size(); ++k)
    ybar[L - 1][static_cast<Eigen::Index>(net.outputs[k])] += ybar_out[static_cast<Eigen::Index>(k)];
  for (std::size_t i = L; i-- > 0;) {
    auto adj = lin.layers[i].adjoint(ybar[i]);
    offset_bar[i] = std::move(adj.offset);
    input_bar[i] = std::move(adj.input);
    if (i == 0) break;
    const auto& Li = net.layers[i];
    ybar[i - 1] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.layers[i - 1].model.kernel().outputs()));
    for (std::size_t t = 0; t < Li.cascade_inputs.size(); ++t)
      ybar[i - 1][static_cast<Eigen::Index>(Li.synapse.source[t])] +=
          Li.synapse.gain[static_cast<Eigen::Index>(t)] * input_bar[i][static_cast<Eigen::Index>(Li.cascade_inputs[t])];
  }

  // Per layer: left = -M^T K^-1 (columns), right = K^-1 M (rows).
  std::vector<Eigen::VectorXd> left_dot(L), right_dot(L);
  Eigen::VectorXd grad(static_cast<Eigen::Index>(params.size()));
  for (std::size_t c = 0; c < params.size(); ++c) {
    const auto& b = params[c];
    const std::size_t j = b.layer;
    double val = 0.0;
    switch (b.target) {
      case ParamTarget::None: break;
      case ParamTarget::InputOffset: val = input_bar[j][static_cast<Eigen::Index>(b.index)]; break;
      case ParamTarget::SynapticWeight: {
        const auto& Lj = net.layers[j];
        val = input_bar[j][static_cast<Eigen::Index>(Lj.cascade_inputs[b.index])] *
              st.previous(j)[static_cast<Eigen::Index>(Lj.synapse.source[b.index])];
        break;
      }
      case ParamTarget::Resistance:
      case ParamTarget::Conductance: {
        const auto& model = net.layers[j].model;
        const auto& form = model.form();
        if (left_dot[j].size() == 0) {
          // (ybar; -lambda) . dHt (u; z) with dHt_i = (M^T K^-1 e_i)(e_i^T K^-1 M).
          const Eigen::VectorXd wbar = detail::stack_uz(ybar[j], -offset_bar[j]);
          const auto& lu = model.resistive_lu();
          left_dot[j] = lu.transpose().solve(Eigen::VectorXd(form.M * wbar));
          right_dot[j] = lu.solve(Eigen::VectorXd(form.M * detail::stack_uz(st.u[j], st.z[j])));
        }
        const std::size_t slot = form.resistive_slot(b.index);
        if (slot == FundamentalForm::npos) throw InputError("edge " + std::to_string(b.index) + " is not resistive");
        const bool cotree = slot < form.cotree_resistive;
        const double rho = form.rho(slot);
        double chain = 1.0;
        if (cotree && b.target == ParamTarget::Conductance) chain = -rho * rho;
        if (!cotree && b.target == ParamTarget::Resistance) chain = -rho * rho;
        const auto si = static_cast<Eigen::Index>(slot);
        val = chain * left_dot[j][si] * right_dot[j][si];
        break;
      }
    }
    grad[static_cast<Eigen::Index>(c)] = val;
  }
  return grad;
}

/// Central finite differences of the network output (independent solves).
inline Eigen::VectorXd cascade_finite_difference(const CascadeNetwork& net, const ParamBinding& b,
                                                 const Eigen::VectorXd& x, double epsilon,
                                                 const SolverOptions& opt = {},
                                                 SolverKind kind = SolverKind::ForwardBackward) {
  if (!(epsilon > 0.0)) throw InputError("finite difference step must be positive");
  if (b.target == ParamTarget::None) return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.outputs.size()));
  const double theta = cascade_parameter(net, b);
  if ((b.target == ParamTarget::Resistance || b.target == ParamTarget::Conductance) && !(theta - epsilon > 0.0))
    throw InputError("finite difference step crosses zero");
  CascadeNetwork plus = net, minus = net;
  set_cascade_parameter(plus, b, theta + epsilon);
  set_cascade_parameter(minus, b, theta - epsilon);
  return (cascade_infer(plus, x, kind, opt) - cascade_infer(minus, x, kind, opt)) / (2.0 * epsilon);
}

// ---- layer builders ----------------------------------------------------------

/// Equilibrium crossbar as a cascade layer: the previous layer's first
/// `p` outputs drive the input voltages; output currents carry offsets.
/// Kernel inputs are (i_out[q], v_in[p]); outputs (v_out[q], i_in[p]).
inline CascadeLayer crossbar_layer(const Eigen::MatrixXd& G, const Eigen::VectorXd& gain,
                                   ActivationKind diode = IdealDiodeReverse{},
                                   ResistiveForm form = ResistiveForm::Conductor) {
  const auto p = static_cast<std::size_t>(G.rows() - 1);
  const auto q = static_cast<std::size_t>(G.cols() - 1);
  if (static_cast<std::size_t>(gain.size()) != p) throw InputError("crossbar layer needs one gain per input");
  CascadeLayer L;
  L.model = CircuitModel(build_crossbar_equilibrium(G, diode, form));
  for (std::size_t j = 0; j < p; ++j) {
    L.cascade_inputs.push_back(q + j);
    L.synapse.source.push_back(j);
  }
  L.synapse.gain = gain;
  L.offset = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p + q));
  return L;
}

/// Common-earth crossbar with duplicated inputs.  G is 2p x q: rows [0, p)
/// see sigma_pos * v, rows [p, 2p) see sigma_neg * v.
struct FeedforwardReluLayer {
  CascadeLayer layer;
  std::size_t p = 0, q = 0;

  /// Effective weights W with v_out = relu(W v) (for zero output currents).
  Eigen::MatrixXd weights() const {
    const auto& k = layer.model.kernel();
    const auto qi = static_cast<Eigen::Index>(q), pi = static_cast<Eigen::Index>(p);
    const Eigen::MatrixXd B1 = k.B.middleCols(qi, pi), B2 = k.B.middleCols(qi + pi, pi);
    const Eigen::VectorXd& s = layer.synapse.gain;
    const Eigen::MatrixXd Beff = B1 * s.head(pi).asDiagonal() + B2 * s.tail(pi).asDiagonal();
    return -k.H.partialPivLu().solve(Beff);
  }

  /// Layer map v -> v_out via the equilibrium solve.
  Eigen::VectorXd operator()(const Eigen::VectorXd& v, const SolverOptions& opt = {}) const {
    if (static_cast<std::size_t>(v.size()) != p) throw InputError("feedforward layer input has the wrong length");
    const Eigen::VectorXd y = infer(layer.model.kernel(), layer_input(layer, v), SolverKind::ForwardBackward, opt);
    return y.head(static_cast<Eigen::Index>(q));
  }
};

inline FeedforwardReluLayer feedforward_relu_layer(const Eigen::MatrixXd& G, const Eigen::VectorXd& sigma_pos,
                                                   const Eigen::VectorXd& sigma_neg,
                                                   ActivationKind diode = IdealDiodeReverse{}) {
  if (G.rows() % 2 != 0) throw InputError("feedforward layer needs 2p rows of conductances");
  FeedforwardReluLayer f;
  f.p = static_cast<std::size_t>(G.rows() / 2);
  f.q = static_cast<std::size_t>(G.cols());
  if (static_cast<std::size_t>(sigma_pos.size()) != f.p || static_cast<std::size_t>(sigma_neg.size()) != f.p)
    throw InputError("feedforward layer needs p positive and p negative gains");
  f.layer.model = CircuitModel(build_crossbar_feedforward(G, diode));
  for (std::size_t j = 0; j < 2 * f.p; ++j) {
    f.layer.cascade_inputs.push_back(f.q + j);
    f.layer.synapse.source.push_back(j % f.p);
  }
  f.layer.synapse.gain.resize(static_cast<Eigen::Index>(2 * f.p));
  f.layer.synapse.gain << sigma_pos, sigma_neg;
  f.layer.offset = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(f.q + 2 * f.p));
  return f;
}

struct RealizedWeights {
  Eigen::MatrixXd G;  // 2p x q
  Eigen::VectorXd sigma_pos, sigma_neg;
};

/// Conductances and gains whose feedforward layer has weights W (q x p).
/// Each output column gets leak conductance `leak` on every line and the
/// split W = W+ - W- scaled by c_k = 2 p leak / (S - sum_j |W_kj|), with the
/// common gain S = 1 + max_k sum_j |W_kj|.
inline RealizedWeights realize_weights(const Eigen::MatrixXd& W, double leak = 1.0) {
  if (!(leak > 0.0)) throw InputError("leak conductance must be positive");
  const auto q = W.rows(), p = W.cols();
  const Eigen::VectorXd rowabs = W.cwiseAbs().rowwise().sum();
  const double S = 1.0 + (q ? rowabs.maxCoeff() : 0.0);
  RealizedWeights r;
  r.G.resize(2 * p, q);
  for (Eigen::Index k = 0; k < q; ++k) {
    const double c = 2.0 * static_cast<double>(p) * leak / (S - rowabs[k]);
    for (Eigen::Index j = 0; j < p; ++j) {
      r.G(j, k) = c * std::max(W(k, j), 0.0) + leak;
      r.G(p + j, k) = c * std::max(-W(k, j), 0.0) + leak;
    }
  }
  r.sigma_pos = Eigen::VectorXd::Constant(p, S);
  r.sigma_neg = Eigen::VectorXd::Constant(p, -S);
  return r;
}

/// Chains feedforward layers; each layer reads the previous v_out.
inline CascadeNetwork feedforward_network(const std::vector<FeedforwardReluLayer>& layers) {
  CascadeNetwork net;
  if (layers.empty()) throw InputError("feedforward network needs a layer");
  net.input_dim = layers.front().p;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i > 0 && layers[i].p != layers[i - 1].q) throw InputError("feedforward widths do not chain");
    net.layers.push_back(layers[i].layer);
  }
  for (std::size_t k = 0; k < layers.back().q; ++k) net.outputs.push_back(k);
  net.validate();
  return net;
}

}  // namespace equinet
