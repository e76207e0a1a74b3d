// SPDX-License-Identifier: Apache-2.0
#pragma once

// Tree/cotree partition, fundamental loop and cutset form, resistor
// elimination and kernel extraction.
//
// Every edge contributes one independent variable x and its dual x~: tree
// edges take their voltage as x (and current as x~), cotree edges their
// current.  With N the fundamental matrix (cotree voltages in terms of tree
// voltages) the relation x~ = F x is skew:
//
//   v_c = N v_t,   i_t = -N^T i_c.
//
// External edges (ports and diodes) come first, then resistive edges, giving
// F = [[P, -M^T], [M, Q]].  Resistive edges satisfy w~ = diag(r, g) w, so
// eliminating them leaves x~_ext = Ht x_ext with Ht = P - M^T K^-1 M,
// K = diag(r, g) - Q.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "equinet/circuit.hpp"
#include "equinet/errors.hpp"
#include "equinet/kernel.hpp"

namespace equinet {

struct Partition {
  std::vector<bool> in_tree;  // per edge
  std::vector<std::size_t> tree, cotree;
};

namespace detail {

class DisjointSets {
 public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) x = parent_[x] = parent_[parent_[x]];
    return x;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent_[b] = a;
    return true;
  }

 private:
  std::vector<std::size_t> parent_;
};

}  // namespace detail

/// Spanning tree holding every voltage-input port and voltage-variable diode,
/// with current-input ports and current-variable diodes left in the cotree.
/// Resistive edges fill the rest in insertion order.
inline Partition partition_tree_cotree(const CircuitGraph& graph) {
  const std::size_t nodes = graph.node_count();
  if (nodes == 0) throw TopologyError("graph has no nodes");
  {
    detail::DisjointSets all(nodes);
    std::size_t comps = nodes;
    for (const auto& e : graph.edges()) comps -= all.unite(e.tail, e.head);
    if (comps != 1) throw TopologyError("graph is not connected");
  }

  Partition part;
  part.in_tree.assign(graph.edge_count(), false);
  detail::DisjointSets ds(nodes);
  for (std::size_t i = 0; i < graph.edge_count(); ++i) {
    const auto& e = graph.edge(i);
    if (!requires_tree(e.element)) continue;
    if (!ds.unite(e.tail, e.head))
      throw TopologyError("voltage-input ports and voltage-variable diodes form a loop at edge " +
                          std::to_string(i));
    part.in_tree[i] = true;
  }
  for (std::size_t i = 0; i < graph.edge_count(); ++i) {
    const auto& e = graph.edge(i);
    if (is_resistive(e.element) && ds.unite(e.tail, e.head)) part.in_tree[i] = true;
  }
  for (std::size_t i = 0; i < graph.edge_count(); ++i)
    (part.in_tree[i] ? part.tree : part.cotree).push_back(i);
  if (part.tree.size() + 1 != nodes)
    throw TopologyError("current-input ports and current-variable diodes form a cut set");
  return part;
}

/// Fundamental loop/cutset form restricted to external and resistive blocks.
struct FundamentalForm {
  Eigen::MatrixXd P, Q, M;
  /// External edges: ports (current inputs, then voltage inputs) then diodes.
  std::vector<std::size_t> ext_edges;
  std::vector<Quantity> ext_quantity;  // type of x for each external edge
  std::size_t ports = 0;
  /// Resistive edges: cotree ones (parameterised by r) then tree ones (by g).
  std::vector<std::size_t> res_edges;
  std::size_t cotree_resistive = 0;
  Eigen::VectorXd r, g;
  /// Full fundamental matrix over tree edges: rows cotree edges, columns tree
  /// edges, both in partition order.
  Eigen::MatrixXd N;

  std::size_t diodes() const { return ext_edges.size() - ports; }

  /// Parameter value on resistive slot `k` (r for cotree, g for tree).
  double rho(std::size_t k) const {
    return k < cotree_resistive ? r[static_cast<Eigen::Index>(k)]
                                : g[static_cast<Eigen::Index>(k - cotree_resistive)];
  }

  Eigen::VectorXd rho() const {
    Eigen::VectorXd out(r.size() + g.size());
    out << r, g;
    return out;
  }

  Eigen::MatrixXd K() const {
    Eigen::MatrixXd k = -Q;
    k.diagonal() += rho();
    return k;
  }

  /// Slot of edge `e` among the resistive edges, or npos.
  std::size_t resistive_slot(std::size_t e) const {
    auto it = std::find(res_edges.begin(), res_edges.end(), e);
    return it == res_edges.end() ? npos : static_cast<std::size_t>(it - res_edges.begin());
  }

  /// Signature: -1 where x is a current, +1 where it is a voltage.
  Eigen::VectorXd signature() const {
    Eigen::VectorXd s(static_cast<Eigen::Index>(ext_quantity.size()));
    for (std::size_t k = 0; k < ext_quantity.size(); ++k)
      s[static_cast<Eigen::Index>(k)] = ext_quantity[k] == Quantity::Current ? -1.0 : 1.0;
    return s;
  }

  /// Refreshes r and g from the graph values (topology must be unchanged).
  void update_values(const CircuitGraph& graph) {
    for (std::size_t k = 0; k < res_edges.size(); ++k) {
      if (k < cotree_resistive)
        r[static_cast<Eigen::Index>(k)] = graph.resistance(res_edges[k]);
      else
        g[static_cast<Eigen::Index>(k - cotree_resistive)] = graph.conductance(res_edges[k]);
    }
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

namespace detail {

// Node potential rows: V(n) - V(root) = R.row(n) . v_tree.
inline Eigen::MatrixXd node_potential_rows(const CircuitGraph& graph, const Partition& part) {
  const std::size_t nodes = graph.node_count();
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(nodes);  // (tree slot, other)
  for (std::size_t t = 0; t < part.tree.size(); ++t) {
    const auto& e = graph.edge(part.tree[t]);
    adj[e.tail].push_back({t, e.head});
    adj[e.head].push_back({t, e.tail});
  }
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nodes),
                                            static_cast<Eigen::Index>(part.tree.size()));
  std::vector<bool> seen(nodes, false);
  std::vector<std::size_t> stack{0};
  seen[0] = true;
  while (!stack.empty()) {
    const std::size_t u = stack.back();
    stack.pop_back();
    for (auto [t, w] : adj[u]) {
      if (seen[w]) continue;
      seen[w] = true;
      const auto& e = graph.edge(part.tree[t]);
      // v_t = V(tail) - V(head)
      const double sign = e.tail == w ? 1.0 : -1.0;
      R.row(static_cast<Eigen::Index>(w)) = R.row(static_cast<Eigen::Index>(u));
      R(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(t)) += sign;
      stack.push_back(w);
    }
  }
  return R;
}

}  // namespace detail

inline FundamentalForm fundamental_form(const CircuitGraph& graph, const Partition& part) {
  if (part.in_tree.size() != graph.edge_count()) throw InputError("partition does not match graph");
  const Eigen::MatrixXd R = detail::node_potential_rows(graph, part);
  const auto nt = static_cast<Eigen::Index>(part.tree.size());
  const auto nc = static_cast<Eigen::Index>(part.cotree.size());

  FundamentalForm f;
  f.N.resize(nc, nt);
  for (Eigen::Index c = 0; c < nc; ++c) {
    const auto& e = graph.edge(part.cotree[static_cast<std::size_t>(c)]);
    f.N.row(c) = R.row(static_cast<Eigen::Index>(e.tail)) - R.row(static_cast<Eigen::Index>(e.head));
  }

  // Position of each edge inside the tree or cotree list.
  std::vector<std::size_t> slot(graph.edge_count());
  for (std::size_t t = 0; t < part.tree.size(); ++t) slot[part.tree[t]] = t;
  for (std::size_t c = 0; c < part.cotree.size(); ++c) slot[part.cotree[c]] = c;

  std::vector<std::size_t> current_ports, voltage_ports, diodes;
  for (std::size_t i = 0; i < graph.edge_count(); ++i) {
    const auto& el = graph.edge(i).element;
    if (const auto* p = std::get_if<Port>(&el))
      (p->role == PortRole::CurrentInput ? current_ports : voltage_ports).push_back(i);
    else if (std::holds_alternative<Diode>(el))
      diodes.push_back(i);
  }
  f.ext_edges = current_ports;
  f.ext_edges.insert(f.ext_edges.end(), voltage_ports.begin(), voltage_ports.end());
  f.ports = f.ext_edges.size();
  f.ext_edges.insert(f.ext_edges.end(), diodes.begin(), diodes.end());
  for (auto e : f.ext_edges)
    f.ext_quantity.push_back(part.in_tree[e] ? Quantity::Voltage : Quantity::Current);

  for (auto e : part.cotree)
    if (is_resistive(graph.edge(e).element)) f.res_edges.push_back(e);
  f.cotree_resistive = f.res_edges.size();
  for (auto e : part.tree)
    if (is_resistive(graph.edge(e).element)) f.res_edges.push_back(e);
  f.r.resize(static_cast<Eigen::Index>(f.cotree_resistive));
  f.g.resize(static_cast<Eigen::Index>(f.res_edges.size() - f.cotree_resistive));
  f.update_values(graph);

  // x~_a = F(a, b) x_b.
  auto entry = [&](std::size_t a, std::size_t b) -> double {
    const bool ta = part.in_tree[a], tb = part.in_tree[b];
    if (ta == tb) return 0.0;
    if (!ta) return f.N(static_cast<Eigen::Index>(slot[a]), static_cast<Eigen::Index>(slot[b]));
    return -f.N(static_cast<Eigen::Index>(slot[b]), static_cast<Eigen::Index>(slot[a]));
  };
  auto block = [&](const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < cols.size(); ++j)
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = entry(rows[i], cols[j]);
    return out;
  };
  f.P = block(f.ext_edges, f.ext_edges);
  f.M = block(f.res_edges, f.ext_edges);
  f.Q = block(f.res_edges, f.res_edges);
  return f;
}

/// Hybrid matrix of the external edges, in FundamentalForm::ext_edges order.
struct HybridMatrix {
  Eigen::MatrixXd Ht;
  std::vector<std::size_t> edges;
  std::vector<Quantity> quantity;  // type of the input variable per row
  std::size_t ports = 0;

  Eigen::VectorXd signature() const {
    Eigen::VectorXd s(static_cast<Eigen::Index>(quantity.size()));
    for (std::size_t k = 0; k < quantity.size(); ++k)
      s[static_cast<Eigen::Index>(k)] = quantity[k] == Quantity::Current ? -1.0 : 1.0;
    return s;
  }
};

/// LU of K = diag(r, g) - Q; throws DegenerateNetworkError if singular.
inline Eigen::PartialPivLU<Eigen::MatrixXd> factor_resistive(const FundamentalForm& form) {
  const Eigen::MatrixXd K = form.K();
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(K);
  if (K.size() > 0) {
    const double scale = K.cwiseAbs().maxCoeff();
    const double piv = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
    if (!(piv > 1e-14 * scale) || !std::isfinite(piv))
      throw DegenerateNetworkError("diag(r, g) - Q is singular");
  }
  return lu;
}

inline HybridMatrix reduce_to_hybrid(const FundamentalForm& form) {
  HybridMatrix h;
  h.edges = form.ext_edges;
  h.quantity = form.ext_quantity;
  h.ports = form.ports;
  h.Ht = form.P;
  if (form.res_edges.empty()) return h;
  const auto lu = factor_resistive(form);
  h.Ht.noalias() -= form.M.transpose() * lu.solve(form.M);
  return h;
}

/// Splits Ht = -[[D, C], [B, H]] (ports first, then diodes).
inline KernelBehavior extract_kernel(const HybridMatrix& hybrid,
                                     const std::vector<ActivationKind>& activations) {
  const auto m = static_cast<Eigen::Index>(hybrid.ports);
  const auto n = static_cast<Eigen::Index>(hybrid.edges.size()) - m;
  if (static_cast<Eigen::Index>(activations.size()) != n)
    throw InputError("extract_kernel needs one activation per diode row");
  KernelBehavior k;
  k.D = -hybrid.Ht.topLeftCorner(m, m);
  k.C = -hybrid.Ht.topRightCorner(m, n);
  k.B = -hybrid.Ht.bottomLeftCorner(n, m);
  k.H = -hybrid.Ht.bottomRightCorner(n, n);
  k.activations = activations;
  k.inputs.assign(hybrid.quantity.begin(), hybrid.quantity.begin() + m);
  return k;
}

/// Activation list for the diode rows of a form, read from the graph.
inline std::vector<ActivationKind> diode_activations(const CircuitGraph& graph,
                                                     const FundamentalForm& form) {
  std::vector<ActivationKind> acts;
  for (std::size_t k = form.ports; k < form.ext_edges.size(); ++k)
    acts.push_back(std::get<Diode>(graph.edge(form.ext_edges[k]).element).kind);
  return acts;
}

/// Diode activations must carry the quantity the partition assigns them.
inline void check_diode_orientation(const FundamentalForm& form, const std::vector<ActivationKind>& acts) {
  for (std::size_t k = 0; k < acts.size(); ++k)
    if (variable_quantity(acts[k]) != form.ext_quantity[form.ports + k])
      throw TopologyError("diode on edge " + std::to_string(form.ext_edges[form.ports + k]) +
                          " ended up with the wrong variable type");
}

struct CheckResult {
  bool ok = false;
  double violation = 0.0;
};

/// Signature symmetry Sigma Ht = Ht^T Sigma.
inline CheckResult check_reciprocity(const Eigen::MatrixXd& Ht, const Eigen::VectorXd& sigma,
                                     double tol = 1e-10) {
  if (Ht.rows() != Ht.cols() || Ht.rows() != sigma.size())
    throw InputError("reciprocity check: dimension mismatch");
  const Eigen::MatrixXd S = sigma.asDiagonal();
  const double v = Ht.size() ? (S * Ht - Ht.transpose() * S).cwiseAbs().maxCoeff() : 0.0;
  return {v <= tol, v};
}

/// Largest eigenvalue of the symmetric part; <= tol means dissipative.
inline CheckResult check_dissipative(const Eigen::MatrixXd& Ht, double tol = 1e-10) {
  const double v = detail::max_sym_eigenvalue(Ht);
  return {v <= tol, v};
}

/// Symmetric (1e-10), positive definite, off-diagonal entries <= 1e-12.
inline bool check_stieltjes(const Eigen::MatrixXd& A) {
  if (A.rows() != A.cols() || A.size() == 0) return false;
  if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-10) return false;
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j)
      if (i != j && A(i, j) > 1e-12) return false;
  return detail::min_sym_eigenvalue(A) > 0.0;
}

}  // namespace equinet
