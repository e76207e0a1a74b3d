// SPDX-License-Identifier: Apache-2.0
#pragma once

// JSON netlists, cascade descriptions and training configs; CSV curves.
//
// Netlist schema (version 1):
//
//   {
//     "version": 1,
//     "nodes": 5,
//     "edges": [
//       {"tail": 0, "head": 2, "kind": "resistor", "value": 100.0},
//       {"tail": 0, "head": 2, "kind": "conductor", "value": 0.01},
//       {"tail": 0, "head": 1, "kind": "port", "role": "voltage"},
//       {"tail": 2, "head": 4, "kind": "diode", "activation": {"type": "ideal_reverse"}}
//     ],
//     "labels": {"0": "g0_0", "2": "in0"}
//   }
//
// `value` is ohms for resistors and siemens for conductors.  Port roles are
// "voltage" or "current" (the quantity the environment imposes).  Activation
// types: ideal_forward, ideal_reverse, shockley {n, vT, iS, orientation:
// impedance|admittance}, zener_pair {limit}, crd_pair {limit}.  `labels`
// maps edge indices to names; unlabelled edges are omitted.  Numbers are
// written with round-trip precision, so read(write(g)) == g.

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "equinet/cascade.hpp"
#include "equinet/circuit.hpp"
#include "equinet/errors.hpp"
#include "equinet/training.hpp"

namespace equinet {

using json = nlohmann::json;

inline constexpr int schema_version = 1;

namespace detail {

inline std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

[[noreturn]] inline void schema_error(const std::string& where, const std::string& what) {
  throw InputError(where + ": " + what);
}

inline const json& field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object()) schema_error(where, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) schema_error(where, std::string("missing field '") + key + "'");
  return *it;
}

inline double get_number(const json& j, const std::string& where) {
  if (!j.is_number()) schema_error(where, "expected a number");
  return j.get<double>();
}

inline std::size_t get_index(const json& j, const std::string& where) {
  if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() && j.get<long long>() < 0))
    schema_error(where, "expected a non-negative integer");
  return j.get<std::size_t>();
}

inline std::string get_string(const json& j, const std::string& where) {
  if (!j.is_string()) schema_error(where, "expected a string");
  return j.get<std::string>();
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) schema_error(where, "unknown field '" + it.key() + "'");
  }
}

inline void check_version(const json& j, const std::string& where) {
  const auto& v = field(j, "version", where);
  if (!v.is_number_integer() || v.get<int>() != schema_version)
    schema_error(where + ".version", "unsupported schema version (expected 1)");
}

}  // namespace detail

/// Parses JSON text; syntax errors carry "name:line:column".
inline json parse_json(const std::string& text, const std::string& name = "<input>") {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = detail::line_column(text, e.byte == 0 ? 0 : e.byte - 1);
    std::string msg = e.what();
    // Drop the library's "[json.exception.parse_error.101] parse error at line x, column y: " prefix.
    if (auto p = msg.find(": "); p != std::string::npos) msg = msg.substr(p + 2);
    throw InputError(name + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + msg);
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json read_json_file(const std::string& path) { return parse_json(read_text_file(path), path); }

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out << text;
  if (!out) throw InputError("write failed: " + path);
}

// ---- activations ----

inline json activation_to_json(const ActivationKind& a) {
  return std::visit(overloaded{
                        [](const IdealDiodeForward&) { return json{{"type", "ideal_forward"}}; },
                        [](const IdealDiodeReverse&) { return json{{"type", "ideal_reverse"}}; },
                        [](const Shockley& s) {
                          return json{{"type", "shockley"},
                                      {"n", s.n},
                                      {"vT", s.vT},
                                      {"iS", s.iS},
                                      {"orientation", s.orientation == Orientation::Impedance ? "impedance" : "admittance"}};
                        },
                        [](const ZenerPairImpedance& z) { return json{{"type", "zener_pair"}, {"limit", z.limit}}; },
                        [](const CrdPairAdmittance& c) { return json{{"type", "crd_pair"}, {"limit", c.limit}}; },
                    },
                    a);
}

inline ActivationKind activation_from_json(const json& j, const std::string& where = "activation") {
  const std::string type = detail::get_string(detail::field(j, "type", where), where + ".type");
  ActivationKind a;
  if (type == "ideal_forward") {
    detail::reject_unknown(j, {"type"}, where);
    a = IdealDiodeForward{};
  } else if (type == "ideal_reverse") {
    detail::reject_unknown(j, {"type"}, where);
    a = IdealDiodeReverse{};
  } else if (type == "shockley") {
    detail::reject_unknown(j, {"type", "n", "vT", "iS", "orientation"}, where);
    Shockley s;
    s.n = detail::get_number(detail::field(j, "n", where), where + ".n");
    s.vT = detail::get_number(detail::field(j, "vT", where), where + ".vT");
    s.iS = detail::get_number(detail::field(j, "iS", where), where + ".iS");
    const auto o = detail::get_string(detail::field(j, "orientation", where), where + ".orientation");
    if (o == "impedance")
      s.orientation = Orientation::Impedance;
    else if (o == "admittance")
      s.orientation = Orientation::Admittance;
    else
      detail::schema_error(where + ".orientation", "expected 'impedance' or 'admittance'");
    a = s;
  } else if (type == "zener_pair") {
    detail::reject_unknown(j, {"type", "limit"}, where);
    a = ZenerPairImpedance{detail::get_number(detail::field(j, "limit", where), where + ".limit")};
  } else if (type == "crd_pair") {
    detail::reject_unknown(j, {"type", "limit"}, where);
    a = CrdPairAdmittance{detail::get_number(detail::field(j, "limit", where), where + ".limit")};
  } else {
    detail::schema_error(where + ".type", "unknown activation '" + type + "'");
  }
  try {
    validate(a);
  } catch (const InputError& e) {
    detail::schema_error(where, e.what());
  }
  return a;
}

// ---- netlists ----

inline json netlist_to_json(const CircuitGraph& g) {
  json edges = json::array();
  json labels = json::object();
  for (std::size_t i = 0; i < g.edge_count(); ++i) {
    const auto& e = g.edge(i);
    json je{{"tail", e.tail}, {"head", e.head}};
    std::visit(overloaded{
                   [&](const Resistor& r) {
                     je["kind"] = "resistor";
                     je["value"] = r.ohms;
                   },
                   [&](const Conductor& c) {
                     je["kind"] = "conductor";
                     je["value"] = c.siemens;
                   },
                   [&](const Port& p) {
                     je["kind"] = "port";
                     je["role"] = p.role == PortRole::VoltageInput ? "voltage" : "current";
                   },
                   [&](const Diode& d) {
                     je["kind"] = "diode";
                     je["activation"] = activation_to_json(d.kind);
                   },
               },
               e.element);
    edges.push_back(std::move(je));
    if (!e.label.empty()) labels[std::to_string(i)] = e.label;
  }
  return json{{"version", schema_version}, {"nodes", g.node_count()}, {"edges", edges}, {"labels", labels}};
}

inline CircuitGraph netlist_from_json(const json& j, const std::string& where = "netlist") {
  detail::check_version(j, where);
  detail::reject_unknown(j, {"version", "nodes", "edges", "labels"}, where);
  CircuitGraph g(detail::get_index(detail::field(j, "nodes", where), where + ".nodes"));
  const auto& edges = detail::field(j, "edges", where);
  if (!edges.is_array()) detail::schema_error(where + ".edges", "expected an array");

  std::vector<std::string> labels(edges.size());
  if (auto it = j.find("labels"); it != j.end()) {
    if (!it->is_object()) detail::schema_error(where + ".labels", "expected an object");
    for (auto l = it->begin(); l != it->end(); ++l) {
      const std::string lw = where + ".labels." + l.key();
      std::size_t idx = 0;
      const auto& k = l.key();
      auto [ptr, ec] = std::from_chars(k.data(), k.data() + k.size(), idx);
      if (ec != std::errc{} || ptr != k.data() + k.size()) detail::schema_error(lw, "label keys must be edge indices");
      if (idx >= edges.size()) detail::schema_error(lw, "edge index out of range");
      labels[idx] = detail::get_string(l.value(), lw);
    }
  }

  for (std::size_t i = 0; i < edges.size(); ++i) {
    const auto& je = edges[i];
    const std::string ew = where + ".edges[" + std::to_string(i) + "]";
    const auto tail = detail::get_index(detail::field(je, "tail", ew), ew + ".tail");
    const auto head = detail::get_index(detail::field(je, "head", ew), ew + ".head");
    const auto kind = detail::get_string(detail::field(je, "kind", ew), ew + ".kind");
    Element el;
    if (kind == "resistor") {
      detail::reject_unknown(je, {"tail", "head", "kind", "value"}, ew);
      el = Resistor{detail::get_number(detail::field(je, "value", ew), ew + ".value")};
    } else if (kind == "conductor") {
      detail::reject_unknown(je, {"tail", "head", "kind", "value"}, ew);
      el = Conductor{detail::get_number(detail::field(je, "value", ew), ew + ".value")};
    } else if (kind == "port") {
      detail::reject_unknown(je, {"tail", "head", "kind", "role"}, ew);
      const auto role = detail::get_string(detail::field(je, "role", ew), ew + ".role");
      if (role == "voltage")
        el = Port{PortRole::VoltageInput};
      else if (role == "current")
        el = Port{PortRole::CurrentInput};
      else
        detail::schema_error(ew + ".role", "expected 'voltage' or 'current'");
    } else if (kind == "diode") {
      detail::reject_unknown(je, {"tail", "head", "kind", "activation"}, ew);
      el = Diode{activation_from_json(detail::field(je, "activation", ew), ew + ".activation")};
    } else {
      detail::schema_error(ew + ".kind", "unknown edge kind '" + kind + "'");
    }
    try {
      g.add_edge(tail, head, std::move(el), labels[i]);
    } catch (const InputError& e) {
      detail::schema_error(ew, e.what());
    }
  }
  return g;
}

inline CircuitGraph read_netlist(const std::string& path) { return netlist_from_json(read_json_file(path), path); }

inline void write_netlist(const std::string& path, const CircuitGraph& g) {
  write_text_file(path, netlist_to_json(g).dump(2) + "\n");
}

// ---- vectors and matrices ----

inline json vector_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Eigen::VectorXd vector_from_json(const json& j, const std::string& where = "vector") {
  if (!j.is_array()) detail::schema_error(where, "expected an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
    v[static_cast<Eigen::Index>(i)] = detail::get_number(j[i], where + "[" + std::to_string(i) + "]");
  return v;
}

inline json matrix_to_json(const Eigen::MatrixXd& M) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < M.rows(); ++r) rows.push_back(vector_to_json(M.row(r).transpose()));
  return rows;
}

inline Eigen::MatrixXd matrix_from_json(const json& j, const std::string& where = "matrix") {
  if (!j.is_array() || j.empty()) detail::schema_error(where, "expected a non-empty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  Eigen::MatrixXd M;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto row = vector_from_json(j[static_cast<std::size_t>(r)], where + "[" + std::to_string(r) + "]");
    if (r == 0) M.resize(rows, row.size());
    if (row.size() != M.cols() || row.size() == 0) detail::schema_error(where, "rows must be non-empty and of equal length");
    M.row(r) = row.transpose();
  }
  return M;
}

/// Kernel input vector: either a plain array in kernel input order, or
/// {"v": [...], "i": [...]} listing voltage and current inputs separately,
/// each in kernel input order.
inline Eigen::VectorXd input_from_json(const json& j, const std::vector<Quantity>& inputs,
                                       const std::string& where = "input") {
  Eigen::VectorXd u;
  if (j.is_array()) {
    u = vector_from_json(j, where);
  } else if (j.is_object()) {
    detail::reject_unknown(j, {"v", "i"}, where);
    const Eigen::VectorXd v = j.contains("v") ? vector_from_json(j["v"], where + ".v") : Eigen::VectorXd();
    const Eigen::VectorXd i = j.contains("i") ? vector_from_json(j["i"], where + ".i") : Eigen::VectorXd();
    Eigen::Index nv = 0, ni = 0;
    for (auto q : inputs) (q == Quantity::Voltage ? nv : ni) += 1;
    if (v.size() != nv || i.size() != ni)
      detail::schema_error(where, "expected " + std::to_string(nv) + " voltages and " + std::to_string(ni) + " currents");
    u.resize(static_cast<Eigen::Index>(inputs.size()));
    Eigen::Index kv = 0, ki = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k)
      u[static_cast<Eigen::Index>(k)] = inputs[k] == Quantity::Voltage ? v[kv++] : i[ki++];
  } else {
    detail::schema_error(where, "expected an array or an object with 'v' and 'i'");
  }
  if (u.size() == 0) detail::schema_error(where, "input vector is empty");
  if (static_cast<std::size_t>(u.size()) != inputs.size())
    detail::schema_error(where, "expected " + std::to_string(inputs.size()) + " entries, got " + std::to_string(u.size()));
  return u;
}

// ---- cascades ----

inline json cascade_to_json(const CascadeNetwork& net) {
  json layers = json::array();
  for (const auto& L : net.layers) {
    json syn{{"gain", vector_to_json(L.synapse.gain)}, {"source", L.synapse.source}};
    layers.push_back(json{{"netlist", netlist_to_json(L.model.graph())},
                          {"cascade_inputs", L.cascade_inputs},
                          {"synapse", syn},
                          {"offset", vector_to_json(L.offset)}});
  }
  return json{{"version", schema_version}, {"input_dim", net.input_dim}, {"layers", layers}, {"outputs", net.outputs}};
}

inline CascadeNetwork cascade_from_json(const json& j, const std::string& where = "network") {
  detail::check_version(j, where);
  detail::reject_unknown(j, {"version", "input_dim", "layers", "outputs"}, where);
  auto indices = [](const json& a, const std::string& w) {
    if (!a.is_array()) detail::schema_error(w, "expected an array of indices");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < a.size(); ++i) out.push_back(detail::get_index(a[i], w + "[" + std::to_string(i) + "]"));
    return out;
  };
  CascadeNetwork net;
  net.input_dim = detail::get_index(detail::field(j, "input_dim", where), where + ".input_dim");
  const auto& layers = detail::field(j, "layers", where);
  if (!layers.is_array()) detail::schema_error(where + ".layers", "expected an array");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& jl = layers[l];
    const std::string lw = where + ".layers[" + std::to_string(l) + "]";
    detail::reject_unknown(jl, {"netlist", "cascade_inputs", "synapse", "offset"}, lw);
    CascadeLayer L;
    L.model = CircuitModel(netlist_from_json(detail::field(jl, "netlist", lw), lw + ".netlist"));
    L.cascade_inputs = indices(detail::field(jl, "cascade_inputs", lw), lw + ".cascade_inputs");
    const auto& js = detail::field(jl, "synapse", lw);
    detail::reject_unknown(js, {"gain", "source"}, lw + ".synapse");
    L.synapse.gain = vector_from_json(detail::field(js, "gain", lw + ".synapse"), lw + ".synapse.gain");
    L.synapse.source = indices(detail::field(js, "source", lw + ".synapse"), lw + ".synapse.source");
    L.offset = vector_from_json(detail::field(jl, "offset", lw), lw + ".offset");
    net.layers.push_back(std::move(L));
  }
  net.outputs = indices(detail::field(j, "outputs", where), where + ".outputs");
  net.validate();
  return net;
}

// ---- training configs ----

inline json config_to_json(const TrainConfig& c) {
  json j{{"version", schema_version},
         {"widths", c.widths},
         {"epochs", c.epochs},
         {"samples", c.samples},
         {"learning_rate", c.learning_rate},
         {"lr_resistance", c.lr_resistance},
         {"lr_offset", c.lr_offset},
         {"lr_synapse", c.lr_synapse},
         {"method", to_string(c.method)},
         {"device", to_string(c.device)},
         {"seed", c.seed},
         {"init_resistance", c.init_resistance},
         {"strap_resistance", c.strap_resistance},
         {"teacher_resistance_spread", c.teacher_resistance_spread},
         {"teacher_offset", c.teacher_offset},
         {"teacher_gain_spread", c.teacher_gain_spread},
         {"input_min", c.input_min},
         {"input_max", c.input_max},
         {"min_resistance_fraction", c.min_resistance_fraction}};
  j["noise"] = c.noise ? json{{"init_rel", c.noise->init_rel}, {"update_rel", c.noise->update_rel}} : json(nullptr);
  return j;
}

/// Missing fields keep their defaults; unknown fields are rejected.
inline TrainConfig config_from_json(const json& j, const std::string& where = "config") {
  detail::check_version(j, where);
  detail::reject_unknown(j,
                         {"version", "widths", "epochs", "samples", "learning_rate", "lr_resistance", "lr_offset",
                          "lr_synapse", "method", "device", "seed", "noise", "init_resistance", "strap_resistance",
                          "teacher_resistance_spread", "teacher_offset", "teacher_gain_spread", "input_min", "input_max",
                          "min_resistance_fraction"},
                         where);
  TrainConfig c;
  auto num = [&](const char* k, double& dst) {
    if (j.contains(k)) dst = detail::get_number(j[k], where + "." + k);
  };
  auto idx = [&](const char* k, std::size_t& dst) {
    if (j.contains(k)) dst = detail::get_index(j[k], where + "." + k);
  };
  if (j.contains("widths")) {
    const auto& w = j["widths"];
    if (!w.is_array()) detail::schema_error(where + ".widths", "expected an array of positive integers");
    c.widths.clear();
    for (std::size_t i = 0; i < w.size(); ++i) c.widths.push_back(detail::get_index(w[i], where + ".widths[" + std::to_string(i) + "]"));
  }
  idx("epochs", c.epochs);
  idx("samples", c.samples);
  num("learning_rate", c.learning_rate);
  num("lr_resistance", c.lr_resistance);
  num("lr_offset", c.lr_offset);
  num("lr_synapse", c.lr_synapse);
  num("init_resistance", c.init_resistance);
  num("strap_resistance", c.strap_resistance);
  num("teacher_resistance_spread", c.teacher_resistance_spread);
  num("teacher_offset", c.teacher_offset);
  num("teacher_gain_spread", c.teacher_gain_spread);
  num("input_min", c.input_min);
  num("input_max", c.input_max);
  num("min_resistance_fraction", c.min_resistance_fraction);
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) detail::schema_error(where + ".seed", "expected a non-negative integer");
    c.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("method")) {
    const auto m = detail::get_string(j["method"], where + ".method");
    if (m == "hw")
      c.method = GradMethod::HardwareLinearization;
    else if (m == "eb")
      c.method = GradMethod::EquilibriumBackprop;
    else
      detail::schema_error(where + ".method", "expected 'hw' or 'eb'");
  }
  if (j.contains("device")) {
    const auto d = detail::get_string(j["device"], where + ".device");
    if (d == "ideal")
      c.device = DeviceModel::Ideal;
    else if (d == "shockley")
      c.device = DeviceModel::Shockley;
    else
      detail::schema_error(where + ".device", "expected 'ideal' or 'shockley'");
  }
  if (j.contains("noise") && !j["noise"].is_null()) {
    const auto& n = j["noise"];
    detail::reject_unknown(n, {"init_rel", "update_rel"}, where + ".noise");
    NoiseConfig nc;
    if (n.contains("init_rel")) nc.init_rel = detail::get_number(n["init_rel"], where + ".noise.init_rel");
    if (n.contains("update_rel")) nc.update_rel = detail::get_number(n["update_rel"], where + ".noise.update_rel");
    c.noise = nc;
  }
  try {
    c.validate();
  } catch (const InputError& e) {
    detail::schema_error(where, e.what());
  }
  return c;
}

// ---- curves ----

/// Shortest decimal that reads back to the same double.
inline std::string format_double(double x) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, end);
}

inline void write_curve_csv(std::ostream& out, const std::vector<double>& errors) {
  out << "errors\n";
  for (double e : errors) out << format_double(e) << "\n";
}

inline void write_curve_csv(const std::string& path, const std::vector<double>& errors) {
  std::ostringstream ss;
  write_curve_csv(ss, errors);
  write_text_file(path, ss.str());
}

inline std::vector<double> read_curve_csv(std::istream& in, const std::string& name = "<csv>") {
  std::string line;
  if (!std::getline(in, line)) throw InputError(name + ":1: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "errors") throw InputError(name + ":1: expected header 'errors'");
  std::vector<double> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
    if (ec != std::errc{} || ptr != line.data() + line.size())
      throw InputError(name + ":" + std::to_string(lineno) + ": not a number: '" + line + "'");
    out.push_back(v);
  }
  return out;
}

inline std::vector<double> read_curve_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  return read_curve_csv(in, path);
}

}  // namespace equinet
