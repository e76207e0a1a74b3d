// SPDX-License-Identifier: Apache-2.0
#pragma once

// Output gradients through the equilibrium by hardware linearization.
//
// At an equilibrium z each diode is replaced by its tangent: pinned rows
// (closed branch of an ideal relation) force z_l = 0, the others add their
// slope to the diagonal of H.  Driving the linearized kernel with offsets
// u_d = dH z + dB u and input du gives dy = y_l - dC z - dD u.

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "equinet/activation.hpp"
#include "equinet/circuit.hpp"
#include "equinet/errors.hpp"
#include "equinet/extraction.hpp"
#include "equinet/kernel.hpp"
#include "equinet/solver.hpp"

namespace equinet {

inline constexpr double kink_tol = 1e-9;

enum class ParamTarget { None, Resistance, Conductance, InputOffset, SynapticWeight };

/// A scalar parameter theta.  `index` is an edge for Resistance/Conductance,
/// an input position for InputOffset and a synapse entry for SynapticWeight;
/// `layer` is only meaningful inside cascades.
struct ParamBinding {
  ParamTarget target = ParamTarget::None;
  std::size_t layer = 0;
  std::size_t index = 0;
  bool operator==(const ParamBinding&) const = default;
};

/// How dHt/dtheta is formed for a resistive edge.
enum class DerivativeRoute {
  Excitation,  // one excitation solve plus the signature (reciprocal networks)
  Inverse      // M^T K^-1 e_i e_i^T K^-1 M, no reciprocity needed
};

/// Matrix derivatives of a kernel with respect to one scalar parameter.
/// Empty matrices stand for zero.
struct KernelDerivative {
  Eigen::MatrixXd dH, dB, dC, dD;
  Eigen::VectorXd du;
};

/// d(K^-1) = -K^-1 dK K^-1.
inline Eigen::MatrixXd matrix_inverse_derivative(const Eigen::MatrixXd& K, const Eigen::MatrixXd& dK) {
  if (K.rows() != K.cols() || dK.rows() != K.rows() || dK.cols() != K.cols())
    throw InputError("matrix_inverse_derivative: dimension mismatch");
  Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
  if (!lu.isInvertible()) throw DegenerateNetworkError("matrix_inverse_derivative: K is singular");
  const Eigen::MatrixXd Ki = lu.inverse();
  return -Ki * dK * Ki;
}

/// dHt with respect to the parameter rho of resistive slot `slot` (r for a
/// cotree edge, g for a tree edge).
///
/// Excitation route: a unit source in series with the edge, all inputs and
/// diodes set to zero, gives the external response a = -M^T K^-1 e_i.  By
/// reciprocity the row response e_i^T K^-1 M equals -s_i a^T Sigma with
/// s_i = +1 for r and -1 for g, hence dHt = s_i a a^T Sigma.
inline Eigen::MatrixXd reciprocal_edge_derivative(const FundamentalForm& form,
                                                  const Eigen::PartialPivLU<Eigen::MatrixXd>& lu,
                                                  std::size_t slot,
                                                  DerivativeRoute route = DerivativeRoute::Excitation) {
  const auto nres = static_cast<Eigen::Index>(form.res_edges.size());
  if (slot >= form.res_edges.size()) throw InputError("resistive slot out of range");
  const Eigen::VectorXd e = Eigen::VectorXd::Unit(nres, static_cast<Eigen::Index>(slot));
  const Eigen::VectorXd a = -form.M.transpose() * lu.solve(e);
  if (route == DerivativeRoute::Excitation) {
    const double s = slot < form.cotree_resistive ? 1.0 : -1.0;
    return s * a * (a.transpose() * form.signature().asDiagonal());
  }
  // e_i^T K^-1 M via a transposed solve.
  const Eigen::VectorXd left = lu.transpose().solve(e);
  const Eigen::RowVectorXd row = left.transpose() * form.M;
  return (-a) * row;
}

/// Circuit graph plus its cached partition, fundamental form, hybrid matrix
/// and kernel.  Value updates keep the topology-dependent parts.
class CircuitModel {
 public:
  CircuitModel() = default;
  explicit CircuitModel(CircuitGraph graph) : graph_(std::move(graph)) {
    part_ = partition_tree_cotree(graph_);
    form_ = fundamental_form(graph_, part_);
    acts_ = diode_activations(graph_, form_);
    check_diode_orientation(form_, acts_);
    refresh();
  }

  const CircuitGraph& graph() const { return graph_; }
  const Partition& partition() const { return part_; }
  const FundamentalForm& form() const { return form_; }
  const HybridMatrix& hybrid() const { return hybrid_; }
  const KernelBehavior& kernel() const { return kernel_; }
  const Eigen::PartialPivLU<Eigen::MatrixXd>& resistive_lu() const { return lu_; }

  std::size_t ports() const { return form_.ports; }
  std::size_t diodes() const { return form_.diodes(); }
  /// Graph edge of kernel input/output k.
  std::size_t port_edge(std::size_t k) const { return form_.ext_edges.at(k); }
  std::size_t diode_edge(std::size_t k) const { return form_.ext_edges.at(form_.ports + k); }

  /// Kernel input position of the port on `edge`.
  std::size_t port_position(std::size_t edge) const {
    for (std::size_t k = 0; k < form_.ports; ++k)
      if (form_.ext_edges[k] == edge) return k;
    throw InputError("edge " + std::to_string(edge) + " is not a port");
  }

  void set_resistance(std::size_t edge, double ohms) {
    graph_.set_resistance(edge, ohms);
    form_.update_values(graph_);
    refresh();
  }

  void set_conductance(std::size_t edge, double siemens) {
    graph_.set_conductance(edge, siemens);
    form_.update_values(graph_);
    refresh();
  }

  /// Sets many resistances with a single refactorization.
  void set_resistances(const std::vector<std::size_t>& edges, const Eigen::VectorXd& ohms) {
    for (std::size_t k = 0; k < edges.size(); ++k) graph_.set_resistance(edges[k], ohms[static_cast<Eigen::Index>(k)]);
    form_.update_values(graph_);
    refresh();
  }

  std::vector<std::size_t> resistive_edges() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < graph_.edge_count(); ++i)
      if (is_resistive(graph_.edge(i).element)) out.push_back(i);
    return out;
  }

  double parameter(const ParamBinding& b) const {
    switch (b.target) {
      case ParamTarget::Resistance: return graph_.resistance(b.index);
      case ParamTarget::Conductance: return graph_.conductance(b.index);
      default: throw InputError("circuit parameters are resistances or conductances");
    }
  }

  void set_parameter(const ParamBinding& b, double value) {
    switch (b.target) {
      case ParamTarget::Resistance: set_resistance(b.index, value); return;
      case ParamTarget::Conductance: set_conductance(b.index, value); return;
      default: throw InputError("circuit parameters are resistances or conductances");
    }
  }

  /// dHt/dtheta for a resistance or conductance binding.
  Eigen::MatrixXd hybrid_derivative(const ParamBinding& b,
                                    DerivativeRoute route = DerivativeRoute::Excitation) const {
    if (b.target != ParamTarget::Resistance && b.target != ParamTarget::Conductance)
      throw InputError("hybrid_derivative needs a resistance or conductance binding");
    const std::size_t slot = form_.resistive_slot(b.index);
    if (slot == FundamentalForm::npos) throw InputError("edge " + std::to_string(b.index) + " is not resistive");
    const bool cotree = slot < form_.cotree_resistive;
    const double rho = form_.rho(slot);
    // d rho / d theta
    double chain = 1.0;
    if (cotree && b.target == ParamTarget::Conductance) chain = -rho * rho;  // r = 1/g
    if (!cotree && b.target == ParamTarget::Resistance) chain = -rho * rho;  // g = 1/R
    return chain * reciprocal_edge_derivative(form_, lu_, slot, route);
  }

  /// Kernel derivative for a circuit-level binding (resistive, offset or none).
  KernelDerivative kernel_derivative(const ParamBinding& b,
                                     DerivativeRoute route = DerivativeRoute::Excitation) const {
    KernelDerivative d;
    if (b.target == ParamTarget::None) return d;
    if (b.target == ParamTarget::InputOffset) {
      if (b.index >= ports()) throw InputError("input offset index out of range");
      d.du = Eigen::VectorXd::Unit(static_cast<Eigen::Index>(ports()), static_cast<Eigen::Index>(b.index));
      return d;
    }
    if (b.target == ParamTarget::SynapticWeight) throw InputError("synaptic weights live in cascades");
    return split_hybrid(hybrid_derivative(b, route));
  }

  /// -[[dD, dC], [dB, dH]] = dHt.
  KernelDerivative split_hybrid(const Eigen::MatrixXd& dHt) const {
    const auto m = static_cast<Eigen::Index>(ports());
    const auto n = static_cast<Eigen::Index>(diodes());
    KernelDerivative d;
    d.dD = -dHt.topLeftCorner(m, m);
    d.dC = -dHt.topRightCorner(m, n);
    d.dB = -dHt.bottomLeftCorner(n, m);
    d.dH = -dHt.bottomRightCorner(n, n);
    return d;
  }

  /// Excitation responses of all resistive slots at once: column i is
  /// -M^T K^-1 e_i.
  Eigen::MatrixXd excitation_responses() const {
    if (form_.res_edges.empty()) return Eigen::MatrixXd(static_cast<Eigen::Index>(form_.ext_edges.size()), 0);
    const Eigen::MatrixXd X = lu_.transpose().solve(form_.M);
    return -X.transpose();
  }

 private:
  void refresh() {
    hybrid_.edges = form_.ext_edges;
    hybrid_.quantity = form_.ext_quantity;
    hybrid_.ports = form_.ports;
    hybrid_.Ht = form_.P;
    if (!form_.res_edges.empty()) {
      lu_ = factor_resistive(form_);
      hybrid_.Ht.noalias() -= form_.M.transpose() * lu_.solve(form_.M);
    }
    kernel_ = extract_kernel(hybrid_, acts_);
  }

  CircuitGraph graph_;
  Partition part_;
  FundamentalForm form_;
  std::vector<ActivationKind> acts_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  HybridMatrix hybrid_;
  KernelBehavior kernel_;
};

/// Kernel with its diodes replaced by their tangents at an equilibrium.
class LinearizedKernel {
 public:
  LinearizedKernel(const KernelBehavior& k, const Eigen::VectorXd& z, Eigen::VectorXd u_d)
      : H_(k.H), B_(k.B), C_(k.C), D_(k.D), u_d_(std::move(u_d)) {
    const auto n = static_cast<Eigen::Index>(k.n());
    if (z.size() != n) throw InputError("operating point has the wrong length");
    if (u_d_.size() == 0) u_d_ = Eigen::VectorXd::Zero(n);
    if (u_d_.size() != n) throw InputError("offset vector has the wrong length");
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& kind = k.activations[static_cast<std::size_t>(i)];
      if (!in_domain(kind, z[i], kink_tol))
        throw InputError("operating point is infeasible at state " + std::to_string(i));
      const Tangent t = tangent(kind, z[i]);
      tangents_.push_back(t);
      elements_.push_back({t.pinned ? LinearizedMode::Open : LinearizedMode::Short, u_d_[i]});
      if (!t.pinned) free_.push_back(i);
    }
    const auto nf = static_cast<Eigen::Index>(free_.size());
    Eigen::MatrixXd A(nf, nf);
    for (Eigen::Index a = 0; a < nf; ++a)
      for (Eigen::Index b = 0; b < nf; ++b) A(a, b) = H_(free_[a], free_[b]);
    for (Eigen::Index a = 0; a < nf; ++a) A(a, a) += tangents_[static_cast<std::size_t>(free_[a])].slope;
    lu_.compute(A);
    if (nf > 0) {
      const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
      if (!(lu_.matrixLU().diagonal().cwiseAbs().minCoeff() > 1e-14 * scale))
        throw DegenerateNetworkError("linearized kernel is singular on its conducting rows");
    }
  }

  const std::vector<LinearizedElement>& elements() const { return elements_; }
  const std::vector<Tangent>& tangents() const { return tangents_; }
  const Eigen::VectorXd& offsets() const { return u_d_; }
  std::size_t free_count() const { return free_.size(); }

  /// z_l solving 0 = (H + diag(slope)) z_l + B u_l + u_d on free rows, 0 on
  /// pinned rows.
  Eigen::VectorXd state(const Eigen::VectorXd& u_l) const { return state_with(u_l, u_d_); }

  Eigen::VectorXd state_with(const Eigen::VectorXd& u_l, const Eigen::VectorXd& u_d) const {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(H_.rows());
    if (free_.empty()) return z;
    const Eigen::VectorXd rhs = (u_l.size() ? Eigen::VectorXd(B_ * u_l) : Eigen::VectorXd::Zero(H_.rows())) + u_d;
    Eigen::VectorXd rf(static_cast<Eigen::Index>(free_.size()));
    for (std::size_t a = 0; a < free_.size(); ++a) rf[static_cast<Eigen::Index>(a)] = -rhs[free_[a]];
    const Eigen::VectorXd zf = lu_.solve(rf);
    for (std::size_t a = 0; a < free_.size(); ++a) z[free_[a]] = zf[static_cast<Eigen::Index>(a)];
    return z;
  }

  /// y_l = -C z_l - D u_l.
  Eigen::VectorXd output(const Eigen::VectorXd& u_l) const { return output_with(u_l, u_d_); }

  Eigen::VectorXd output_with(const Eigen::VectorXd& u_l, const Eigen::VectorXd& u_d) const {
    const Eigen::VectorXd ul = u_l.size() ? u_l : Eigen::VectorXd::Zero(D_.cols());
    return -C_ * state_with(ul, u_d) - D_ * ul;
  }

  struct Adjoint {
    Eigen::VectorXd offset;  // d(ybar . y_l) / d u_d
    Eigen::VectorXd input;   // d(ybar . y_l) / d u_l
  };

  /// Reverse-mode sensitivities of ybar . y_l.
  Adjoint adjoint(const Eigen::VectorXd& ybar) const {
    Adjoint a;
    a.offset = Eigen::VectorXd::Zero(H_.rows());
    if (!free_.empty()) {
      Eigen::VectorXd cf(static_cast<Eigen::Index>(free_.size()));
      const Eigen::VectorXd ct = C_.transpose() * ybar;
      for (std::size_t i = 0; i < free_.size(); ++i) cf[static_cast<Eigen::Index>(i)] = ct[free_[i]];
      const Eigen::VectorXd lam = lu_.transpose().solve(cf);
      for (std::size_t i = 0; i < free_.size(); ++i) a.offset[free_[i]] = lam[static_cast<Eigen::Index>(i)];
    }
    a.input = B_.transpose() * a.offset - D_.transpose() * ybar;
    return a;
  }

 private:
  Eigen::MatrixXd H_, B_, C_, D_;
  Eigen::VectorXd u_d_;
  std::vector<Tangent> tangents_;
  std::vector<LinearizedElement> elements_;
  std::vector<Eigen::Index> free_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
};

inline LinearizedKernel hardware_linearize(const KernelBehavior& k, const Eigen::VectorXd& z_star,
                                           const Eigen::VectorXd& u_d = {}) {
  return LinearizedKernel(k, z_star, u_d);
}

/// True if z sits within kink_tol of a non-differentiable point, or a pinned
/// state has a vanishing dual (no strict complementarity).
inline bool near_kink(const KernelBehavior& k, const Eigen::VectorXd& z, const Eigen::VectorXd& u) {
  const Eigen::VectorXd w = -(k.H * z + k.B * u);
  const double scale = 1.0 + (w.size() ? w.cwiseAbs().maxCoeff() : 0.0);
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const auto& kind = k.activations[static_cast<std::size_t>(i)];
    const Tangent t = tangent(kind, z[i]);
    if (t.pinned) {
      if (std::abs(w[i]) <= kink_tol * scale) return true;
    } else if (kink_distance(kind, z[i]) < kink_tol) {
      return true;
    }
  }
  return false;
}

struct GradientResult {
  Eigen::VectorXd dy;
  bool kink = false;
};

namespace detail {

inline Eigen::VectorXd times_or_zero(const Eigen::MatrixXd& A, const Eigen::VectorXd& x, Eigen::Index rows) {
  if (A.size() == 0) return Eigen::VectorXd::Zero(rows);
  return A * x;
}

}  // namespace detail

/// dy/dtheta from the matrix derivatives at an equilibrium (z, u).
inline GradientResult gradient_from_derivatives(const KernelBehavior& k, const Eigen::VectorXd& z,
                                                const Eigen::VectorXd& u, const KernelDerivative& d) {
  const auto n = static_cast<Eigen::Index>(k.n());
  const auto p = static_cast<Eigen::Index>(k.outputs());
  const Eigen::VectorXd u_d = detail::times_or_zero(d.dH, z, n) + detail::times_or_zero(d.dB, u, n);
  const Eigen::VectorXd u_l = d.du.size() ? d.du : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k.m()));
  LinearizedKernel lin(k, z, u_d);
  GradientResult g;
  g.dy = lin.output(u_l) - detail::times_or_zero(d.dC, z, p) - detail::times_or_zero(d.dD, u, p);
  g.kink = near_kink(k, z, u);
  return g;
}

inline GradientResult gradient_output_wrt_param(const CircuitModel& model, const ParamBinding& b,
                                                const Eigen::VectorXd& u, const SolveReport& operating,
                                                DerivativeRoute route = DerivativeRoute::Excitation) {
  if (!operating.converged) throw ConvergenceError("gradient requested at a non-converged operating point");
  return gradient_from_derivatives(model.kernel(), operating.z_star, u, model.kernel_derivative(b, route));
}

/// Central differences with independent equilibrium solves.
inline Eigen::VectorXd finite_difference_gradient(const CircuitModel& model, const ParamBinding& b,
                                                  const Eigen::VectorXd& u, double epsilon,
                                                  const SolverOptions& opt = {},
                                                  SolverKind solver = SolverKind::ForwardBackward) {
  if (!(epsilon > 0.0)) throw InputError("finite difference step must be positive");
  const auto p = static_cast<Eigen::Index>(model.kernel().outputs());
  if (b.target == ParamTarget::None) return Eigen::VectorXd::Zero(p);
  if (b.target == ParamTarget::InputOffset) {
    if (b.index >= model.ports()) throw InputError("input offset index out of range");
    Eigen::VectorXd up = u, um = u;
    up[static_cast<Eigen::Index>(b.index)] += epsilon;
    um[static_cast<Eigen::Index>(b.index)] -= epsilon;
    return (infer(model.kernel(), up, solver, opt) - infer(model.kernel(), um, solver, opt)) / (2.0 * epsilon);
  }
  const double theta = model.parameter(b);
  if (!(theta - epsilon > 0.0)) throw InputError("finite difference step crosses zero");
  CircuitModel plus = model, minus = model;
  plus.set_parameter(b, theta + epsilon);
  minus.set_parameter(b, theta - epsilon);
  return (infer(plus.kernel(), u, solver, opt) - infer(minus.kernel(), u, solver, opt)) / (2.0 * epsilon);
}

}  // namespace equinet
