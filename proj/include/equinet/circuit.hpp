// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "equinet/activation.hpp"
#include "equinet/errors.hpp"

namespace equinet {

enum class PortRole { VoltageInput, CurrentInput };

struct Resistor {
  double ohms = 1.0;
  bool operator==(const Resistor&) const = default;
};

struct Conductor {
  double siemens = 1.0;
  bool operator==(const Conductor&) const = default;
};

/// Driving point.  The role says which of the pair (voltage, current) the
/// environment imposes; the other one is read back as an output.
struct Port {
  PortRole role = PortRole::VoltageInput;
  bool operator==(const Port&) const = default;
};

struct Diode {
  ActivationKind kind = IdealDiodeReverse{};
  bool operator==(const Diode&) const = default;
};

using Element = std::variant<Resistor, Conductor, Port, Diode>;

/// Oriented edge.  Voltage is V(tail) - V(head); current flows tail -> head
/// through the element (passive convention, which for a port means the
/// current leaving the network at its positive terminal).
struct Edge {
  std::size_t tail = 0;
  std::size_t head = 0;
  Element element;
  std::string label;
  bool operator==(const Edge&) const = default;
};

inline bool is_resistive(const Element& e) {
  return std::holds_alternative<Resistor>(e) || std::holds_alternative<Conductor>(e);
}

/// Quantity imposed on the edge by the tree/cotree assignment: voltage for
/// tree edges, current for cotree edges.  Only ports and diodes have a fixed
/// requirement; resistive edges are free.
inline bool requires_tree(const Element& e) {
  if (const auto* p = std::get_if<Port>(&e)) return p->role == PortRole::VoltageInput;
  if (const auto* d = std::get_if<Diode>(&e)) return variable_quantity(d->kind) == Quantity::Voltage;
  return false;
}

inline bool requires_cotree(const Element& e) {
  if (const auto* p = std::get_if<Port>(&e)) return p->role == PortRole::CurrentInput;
  if (const auto* d = std::get_if<Diode>(&e)) return variable_quantity(d->kind) == Quantity::Current;
  return false;
}

/// Circuit topology with elements on the edges.  Edge indices follow
/// insertion order, which also fixes tie-breaking in tree selection.
class CircuitGraph {
 public:
  CircuitGraph() = default;
  explicit CircuitGraph(std::size_t nodes) : nodes_(nodes) {}

  std::size_t add_node() { return nodes_++; }

  std::size_t add_edge(std::size_t tail, std::size_t head, Element element, std::string label = {}) {
    if (tail >= nodes_ || head >= nodes_) throw InputError("edge endpoint out of range");
    if (tail == head) throw InputError("self-loop edges are not allowed");
    check_element(element);
    edges_.push_back({tail, head, std::move(element), std::move(label)});
    return edges_.size() - 1;
  }

  std::size_t node_count() const { return nodes_; }
  std::size_t edge_count() const { return edges_.size(); }
  const std::vector<Edge>& edges() const { return edges_; }
  const Edge& edge(std::size_t i) const { return edges_.at(i); }

  std::size_t count_diodes() const {
    std::size_t n = 0;
    for (const auto& e : edges_) n += std::holds_alternative<Diode>(e.element);
    return n;
  }

  /// Resistance of a resistive edge, whichever way it was specified.
  double resistance(std::size_t i) const {
    const auto& el = edge(i).element;
    if (const auto* r = std::get_if<Resistor>(&el)) return r->ohms;
    if (const auto* g = std::get_if<Conductor>(&el)) return 1.0 / g->siemens;
    throw InputError("edge " + std::to_string(i) + " is not resistive");
  }

  double conductance(std::size_t i) const { return 1.0 / resistance(i); }

  /// Updates a resistive edge, keeping the element type it was declared with.
  void set_resistance(std::size_t i, double ohms) {
    if (!(ohms > 0.0) || !std::isfinite(ohms)) throw InputError("resistance must be positive");
    auto& el = edges_.at(i).element;
    if (auto* r = std::get_if<Resistor>(&el))
      r->ohms = ohms;
    else if (auto* g = std::get_if<Conductor>(&el))
      g->siemens = 1.0 / ohms;
    else
      throw InputError("edge " + std::to_string(i) + " is not resistive");
  }

  void set_conductance(std::size_t i, double siemens) {
    if (!(siemens > 0.0) || !std::isfinite(siemens)) throw InputError("conductance must be positive");
    set_resistance(i, 1.0 / siemens);
    if (auto* g = std::get_if<Conductor>(&edges_[i].element)) g->siemens = siemens;
  }

  bool operator==(const CircuitGraph&) const = default;

 private:
  static void check_element(const Element& element) {
    std::visit(overloaded{
                   [](const Resistor& r) {
                     if (!(r.ohms > 0.0) || !std::isfinite(r.ohms))
                       throw InputError("resistance must be positive and finite");
                   },
                   [](const Conductor& g) {
                     if (!(g.siemens > 0.0) || !std::isfinite(g.siemens))
                       throw InputError("conductance must be positive and finite");
                   },
                   [](const Port&) {},
                   [](const Diode& d) { validate(d.kind); },
               },
               element);
  }

  std::size_t nodes_ = 0;
  std::vector<Edge> edges_;
};

enum class ResistiveForm { Conductor, Resistor };

namespace detail {

inline void require_positive(const Eigen::MatrixXd& G) {
  if (G.size() == 0) throw InputError("conductance matrix is empty");
  for (Eigen::Index i = 0; i < G.size(); ++i)
    if (!(G.data()[i] > 0.0) || !std::isfinite(G.data()[i]))
      throw InputError("crossbar conductances must be positive and finite");
}

inline Element resistive(double g, ResistiveForm form) {
  if (form == ResistiveForm::Resistor) return Resistor{1.0 / g};
  return Conductor{g};
}

}  // namespace detail

/// Equilibrium crossbar.
///
/// `G` is (p+1) x (q+1): rows are the p input lines plus the input reference
/// line, columns are the q output lines plus the output reference line, and
/// G(j, k) is the conductance joining row j to column k.  Input port j sits
/// between input line j and the input reference; output port k and reverse
/// diode k sit in parallel between output line k and the output reference.
///
/// Edge order: resistors row-major (edge index j*(q+1)+k), then the p input
/// ports, the q output ports and the q diodes.  Node order: input lines,
/// input reference, output lines, output reference.
inline CircuitGraph build_crossbar_equilibrium(const Eigen::MatrixXd& G,
                                               ActivationKind diode = IdealDiodeReverse{},
                                               ResistiveForm form = ResistiveForm::Conductor) {
  if (G.rows() < 2 || G.cols() < 2)
    throw InputError("equilibrium crossbar needs at least one input and one output line");
  detail::require_positive(G);
  if (variable_quantity(diode) != Quantity::Voltage)
    throw InputError("crossbar diodes must carry a voltage variable");
  const auto p = static_cast<std::size_t>(G.rows() - 1);
  const auto q = static_cast<std::size_t>(G.cols() - 1);
  CircuitGraph graph(p + q + 2);
  const std::size_t in_ref = p, out0 = p + 1, out_ref = p + q + 1;
  for (std::size_t j = 0; j <= p; ++j)
    for (std::size_t k = 0; k <= q; ++k)
      graph.add_edge(j, out0 + k, detail::resistive(G(j, k), form),
                     "g" + std::to_string(j) + "_" + std::to_string(k));
  for (std::size_t j = 0; j < p; ++j)
    graph.add_edge(j, in_ref, Port{PortRole::VoltageInput}, "in" + std::to_string(j));
  for (std::size_t k = 0; k < q; ++k)
    graph.add_edge(out0 + k, out_ref, Port{PortRole::CurrentInput}, "out" + std::to_string(k));
  for (std::size_t k = 0; k < q; ++k)
    graph.add_edge(out0 + k, out_ref, Diode{diode}, "d" + std::to_string(k));
  return graph;
}

/// Uniform reference lines around a p x q signal array.
inline Eigen::MatrixXd with_reference_lines(const Eigen::MatrixXd& signal, double reference) {
  Eigen::MatrixXd G = Eigen::MatrixXd::Constant(signal.rows() + 1, signal.cols() + 1, reference);
  G.topLeftCorner(signal.rows(), signal.cols()) = signal;
  return G;
}

/// Common-earth crossbar.  `G` is p x q; every port and diode returns to a
/// single earth node.  Edge order: resistors row-major, p input ports, q
/// output ports, q diodes.  Node order: input lines, output lines, earth.
inline CircuitGraph build_crossbar_feedforward(const Eigen::MatrixXd& G,
                                               ActivationKind diode = IdealDiodeReverse{},
                                               ResistiveForm form = ResistiveForm::Conductor) {
  detail::require_positive(G);
  if (variable_quantity(diode) != Quantity::Voltage)
    throw InputError("crossbar diodes must carry a voltage variable");
  const auto p = static_cast<std::size_t>(G.rows());
  const auto q = static_cast<std::size_t>(G.cols());
  CircuitGraph graph(p + q + 1);
  const std::size_t earth = p + q;
  for (std::size_t j = 0; j < p; ++j)
    for (std::size_t k = 0; k < q; ++k)
      graph.add_edge(j, p + k, detail::resistive(G(j, k), form),
                     "g" + std::to_string(j) + "_" + std::to_string(k));
  for (std::size_t j = 0; j < p; ++j)
    graph.add_edge(j, earth, Port{PortRole::VoltageInput}, "in" + std::to_string(j));
  for (std::size_t k = 0; k < q; ++k)
    graph.add_edge(p + k, earth, Port{PortRole::CurrentInput}, "out" + std::to_string(k));
  for (std::size_t k = 0; k < q; ++k)
    graph.add_edge(p + k, earth, Diode{diode}, "d" + std::to_string(k));
  return graph;
}

}  // namespace equinet
