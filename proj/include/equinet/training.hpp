// SPDX-License-Identifier: Apache-2.0
#pragma once

// SGD on cascaded equilibrium crossbars against a random teacher network.
//
// Every layer is a crossbar with reference lines; layer i has widths[i]
// inputs and widths[i+1] outputs, and its input voltages are the previous
// layer's output voltages times the synaptic gains (the first layer's gains
// act on the network input).  Trainable parameters are all resistances,
// the current offsets at every layer's output ports and all synaptic gains.
//
// With noise enabled the circuit that is measured (the "true" circuit)
// drifts from the nominal model the trainer believes in: initial
// resistances are perturbed, and every resistance update lands with a
// relative error.  Hardware linearization measures gradients on the true
// circuit; equilibrium backprop computes them on the nominal model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "equinet/cascade.hpp"
#include "equinet/errors.hpp"
#include "equinet/gradient.hpp"
#include "equinet/solver.hpp"

namespace equinet {

enum class GradMethod { HardwareLinearization, EquilibriumBackprop };
enum class DeviceModel { Ideal, Shockley };

inline const char* to_string(GradMethod m) {
  return m == GradMethod::HardwareLinearization ? "hw" : "eb";
}
inline const char* to_string(DeviceModel d) { return d == DeviceModel::Ideal ? "ideal" : "shockley"; }

/// Relative standard deviations of device errors.
struct NoiseConfig {
  double init_rel = 0.05;
  double update_rel = 0.10;
};

struct TrainConfig {
  std::vector<std::size_t> widths{10, 9, 7, 8, 4};
  std::size_t epochs = 250;
  std::size_t samples = 10;
  double learning_rate = 1e-2;
  // Per-type multipliers on learning_rate.  Resistances move in log space.
  // Offsets are currents in amperes next to 100 ohm lines, hence the small scale.
  double lr_resistance = 1.0;
  double lr_offset = 1e-4;
  double lr_synapse = 1.0;
  GradMethod method = GradMethod::HardwareLinearization;
  std::optional<NoiseConfig> noise;
  DeviceModel device = DeviceModel::Ideal;
  std::uint64_t seed = 1;
  // Student initialization.
  double init_resistance = 100.0;
  double strap_resistance = 1.0;  // reference-line strap, see make_crossbar_cascade
  // Teacher: resistances init_resistance * 2^U[-s, s], offsets U[-o, o],
  // gains (layer index) * U[1 - g, 1 + g].
  double teacher_resistance_spread = 1.0;
  double teacher_offset = 2e-3;
  double teacher_gain_spread = 0.25;
  // Inputs U[input_min, input_max] volts.  With the default window no
  // pre-activation goes negative, so no diode ever clamps.
  double input_min = 0.0;
  double input_max = 1.0;
  /// Resistances are kept above this fraction of init_resistance.
  double min_resistance_fraction = 1e-6;

  void validate() const {
    if (widths.size() < 2) throw InputError("widths needs at least two entries");
    for (auto w : widths)
      if (w == 0) throw InputError("widths must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw InputError("learning rate must be non-negative");
    if (samples == 0) throw InputError("need at least one sample");
    if (noise && !(noise->init_rel >= 0.0 && noise->init_rel < 1.0 && noise->update_rel >= 0.0 && noise->update_rel < 1.0))
      throw InputError("noise variances must lie in [0, 1)");
    if (!(init_resistance > 0.0) || !(strap_resistance > 0.0)) throw InputError("initial resistances must be positive");
    if (!(input_min < input_max) || !std::isfinite(input_min) || !std::isfinite(input_max))
      throw InputError("input window must satisfy input_min < input_max");
  }
};

/// Shockley parameters used for the non-ideal device.
inline Shockley nonideal_diode() { return Shockley{1.05, 0.025852, 1e-13, Orientation::Admittance}; }

inline ActivationKind device_activation(DeviceModel d) {
  if (d == DeviceModel::Shockley) return nonideal_diode();
  return IdealDiodeReverse{};
}

/// Crossbar cascade with resistance R everywhere except the strap joining
/// the two reference lines, zero offsets and gains equal to the 1-based layer
/// index.  With the strap at R too, output lines and output reference sit at
/// the same potential for every input and all diodes are stuck at the kink.
inline CascadeNetwork make_crossbar_cascade(const std::vector<std::size_t>& widths, double R,
                                            DeviceModel device = DeviceModel::Ideal, double strap = 1.0) {
  if (widths.size() < 2) throw InputError("widths needs at least two entries");
  CascadeNetwork net;
  net.input_dim = widths.front();
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const auto p = static_cast<Eigen::Index>(widths[i]), q = static_cast<Eigen::Index>(widths[i + 1]);
    Eigen::MatrixXd G = Eigen::MatrixXd::Constant(p + 1, q + 1, 1.0 / R);
    G(p, q) = 1.0 / strap;
    net.layers.push_back(crossbar_layer(G, Eigen::VectorXd::Constant(p, static_cast<double>(i + 1)),
                                        device_activation(device), ResistiveForm::Resistor));
  }
  for (std::size_t k = 0; k < widths.back(); ++k) net.outputs.push_back(k);
  net.validate();
  return net;
}

/// Trainable parameters in a fixed order: per layer, resistances, output
/// current offsets, synaptic gains.
inline std::vector<ParamBinding> trainable_parameters(const CascadeNetwork& net) {
  std::vector<ParamBinding> ps;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& L = net.layers[l];
    for (auto e : L.model.resistive_edges()) ps.push_back({ParamTarget::Resistance, l, e});
    for (std::size_t k = 0; k < L.m(); ++k)
      if (L.model.kernel().inputs[k] == Quantity::Current) ps.push_back({ParamTarget::InputOffset, l, k});
    for (std::size_t k = 0; k < L.cascade_inputs.size(); ++k) ps.push_back({ParamTarget::SynapticWeight, l, k});
  }
  return ps;
}

struct Dataset {
  std::vector<Eigen::VectorXd> inputs, targets;
  std::size_t size() const { return inputs.size(); }
};

/// Inputs uniform in [lo, hi]; targets from the teacher.  Negative inputs
/// tend to switch off every first-layer diode of the uniform student, which
/// leaves the sample without any gradient.
inline Dataset generate_synthetic_dataset(const CascadeNetwork& teacher, std::size_t n_samples, std::mt19937_64& rng,
                                          double lo = 0.0, double hi = 1.0, const SolverOptions& opt = {}) {
  if (n_samples == 0) throw InputError("need at least one sample");
  if (!(lo < hi)) throw InputError("input window must satisfy lo < hi");
  std::uniform_real_distribution<double> U(lo, hi);
  Dataset d;
  for (std::size_t s = 0; s < n_samples; ++s) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(teacher.input_dim));
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = U(rng);
    d.inputs.push_back(x);
    d.targets.push_back(cascade_infer(teacher, x, SolverKind::ForwardBackward, opt));
  }
  return d;
}

/// Random teacher in the student's family.
inline CascadeNetwork make_teacher(const TrainConfig& cfg, std::mt19937_64& rng) {
  CascadeNetwork t = make_crossbar_cascade(cfg.widths, cfg.init_resistance, cfg.device, cfg.strap_resistance);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (std::size_t l = 0; l < t.layers.size(); ++l) {
    auto& L = t.layers[l];
    const auto edges = L.model.resistive_edges();
    Eigen::VectorXd R(static_cast<Eigen::Index>(edges.size()));
    for (Eigen::Index k = 0; k < R.size(); ++k)
      R[k] = L.model.graph().resistance(edges[static_cast<std::size_t>(k)]) * std::exp2(cfg.teacher_resistance_spread * U(rng));
    L.model.set_resistances(edges, R);
    for (std::size_t k = 0; k < L.m(); ++k)
      if (L.model.kernel().inputs[k] == Quantity::Current) L.offset[static_cast<Eigen::Index>(k)] = cfg.teacher_offset * U(rng);
    for (Eigen::Index k = 0; k < L.synapse.gain.size(); ++k)
      L.synapse.gain[k] = static_cast<double>(l + 1) * (1.0 + cfg.teacher_gain_spread * U(rng));
  }
  return t;
}

/// (sum_i ||y_d,i - y_i||^2)^(1/2) over the dataset.
inline double aggregate_error(const CascadeNetwork& net, const Dataset& data, const SolverOptions& opt = {}) {
  double s = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    s += (cascade_infer(net, data.inputs[i], SolverKind::ForwardBackward, opt) - data.targets[i]).squaredNorm();
  return std::sqrt(s);
}

/// Loss ||y - y_d||^2 and its gradient over `params`.
struct LossGrad {
  double loss = 0.0;
  Eigen::VectorXd grad;
  bool kink = false;
};

inline LossGrad loss_grad(const CascadeNetwork& net, const CascadeState& st, const Eigen::VectorXd& target,
                          const std::vector<ParamBinding>& params, GradMethod method) {
  const Eigen::VectorXd r = st.output(net) - target;
  const auto lin = linearize_cascade(net, st);
  LossGrad out;
  out.loss = r.squaredNorm();
  out.kink = lin.kink;
  if (method == GradMethod::HardwareLinearization)
    out.grad = cascade_jacobian_hw(net, st, lin, params).transpose() * (2.0 * r);
  else
    out.grad = cascade_vjp(net, st, lin, 2.0 * r, params);
  return out;
}

inline LossGrad loss_grad(const CascadeNetwork& net, const Eigen::VectorXd& x, const Eigen::VectorXd& target,
                          const std::vector<ParamBinding>& params, GradMethod method, const SolverOptions& opt = {}) {
  const auto st = cascade_forward(net, x, SolverKind::ForwardBackward, opt);
  if (!st.converged) throw ConvergenceError("equilibrium solve failed");
  return loss_grad(net, st, target, params, method);
}

struct TrainingCurve {
  std::vector<double> errors;  // one per epoch, measured after the epoch
  double initial_error = 0.0;
  std::size_t kink_warnings = 0;
};

/// Applies one SGD step to `nominal` and, when present, the drifting `actual`
/// circuit.  Resistances move in log space; the same ohmic change lands on
/// `actual` with relative error `update_rel`.
inline void apply_update(CascadeNetwork& nominal, CascadeNetwork* actual, const std::vector<ParamBinding>& params,
                         const Eigen::VectorXd& grad, const TrainConfig& cfg, std::mt19937_64& rng) {
  std::normal_distribution<double> N(0.0, 1.0);
  const double floor = cfg.min_resistance_fraction * cfg.init_resistance;
  // Group resistance updates per layer to refactor once.
  std::vector<std::vector<std::size_t>> edges(nominal.layers.size());
  std::vector<std::vector<double>> nom_R(nominal.layers.size()), act_R(nominal.layers.size());
  for (std::size_t c = 0; c < params.size(); ++c) {
    const auto& b = params[c];
    const double g = grad[static_cast<Eigen::Index>(c)];
    switch (b.target) {
      case ParamTarget::Resistance: {
        const double R = nominal.layers[b.layer].model.graph().resistance(b.index);
        const double Rn = std::max(floor, R * std::exp(-cfg.learning_rate * cfg.lr_resistance * R * g));
        edges[b.layer].push_back(b.index);
        nom_R[b.layer].push_back(Rn);
        if (actual) {
          const double Ra = actual->layers[b.layer].model.graph().resistance(b.index);
          const double xi = cfg.noise ? N(rng) : 0.0;
          const double delta = (Rn - R) * (1.0 + (cfg.noise ? cfg.noise->update_rel : 0.0) * xi);
          act_R[b.layer].push_back(std::max(floor, Ra + delta));
        }
        break;
      }
      case ParamTarget::InputOffset:
      case ParamTarget::SynapticWeight: {
        const double scale = b.target == ParamTarget::InputOffset ? cfg.lr_offset : cfg.lr_synapse;
        const double v = cascade_parameter(nominal, b) - cfg.learning_rate * scale * g;
        set_cascade_parameter(nominal, b, v);
        if (actual) set_cascade_parameter(*actual, b, v);
        break;
      }
      case ParamTarget::None:
      case ParamTarget::Conductance: break;
    }
  }
  for (std::size_t l = 0; l < edges.size(); ++l) {
    if (edges[l].empty()) continue;
    nominal.layers[l].model.set_resistances(edges[l], Eigen::Map<const Eigen::VectorXd>(nom_R[l].data(), static_cast<Eigen::Index>(nom_R[l].size())));
    if (actual)
      actual->layers[l].model.set_resistances(edges[l], Eigen::Map<const Eigen::VectorXd>(act_R[l].data(), static_cast<Eigen::Index>(act_R[l].size())));
  }
}

struct TrainResult {
  TrainingCurve curve;
  CascadeNetwork nominal;
  CascadeNetwork actual;  // equals nominal without noise
};

/// Per-epoch shuffled single-sample SGD.  `on_epoch` (optional) sees the
/// epoch index and its error.
inline TrainResult sgd_train(CascadeNetwork student, const Dataset& data, const TrainConfig& cfg,
                             const std::function<void(std::size_t, double)>& on_epoch = {},
                             const SolverOptions& opt = {}) {
  cfg.validate();
  student.validate();
  std::mt19937_64 rng(cfg.seed ^ 0x5eedf00dULL);
  std::normal_distribution<double> N(0.0, 1.0);
  const auto params = trainable_parameters(student);

  TrainResult res;
  res.nominal = std::move(student);
  const bool noisy = cfg.noise.has_value();
  if (noisy) {
    res.actual = res.nominal;
    for (auto& L : res.actual.layers) {
      const auto edges = L.model.resistive_edges();
      Eigen::VectorXd R(static_cast<Eigen::Index>(edges.size()));
      for (std::size_t k = 0; k < edges.size(); ++k)
        R[static_cast<Eigen::Index>(k)] = std::max(cfg.min_resistance_fraction * cfg.init_resistance,
                                                   L.model.graph().resistance(edges[k]) * (1.0 + cfg.noise->init_rel * N(rng)));
      L.model.set_resistances(edges, R);
    }
  }
  auto measured = [&]() -> const CascadeNetwork& { return noisy ? res.actual : res.nominal; };
  // Network the gradient is computed on.
  auto gradient_net = [&]() -> const CascadeNetwork& {
    return (noisy && cfg.method == GradMethod::HardwareLinearization) ? res.actual : res.nominal;
  };

  res.curve.initial_error = aggregate_error(measured(), data, opt);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<CascadeState> warm(data.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (auto s : order) {
      const CascadeNetwork& gnet = gradient_net();
      SolverOptions o = opt;
      auto st = cascade_forward(gnet, data.inputs[s], SolverKind::ForwardBackward, o,
                                warm[s].z.empty() ? nullptr : &warm[s]);
      if (!st.converged)
        throw ConvergenceError("equilibrium solve diverged in epoch " + std::to_string(epoch + 1));
      const auto lg = loss_grad(gnet, st, data.targets[s], params, cfg.method);
      res.curve.kink_warnings += lg.kink;
      warm[s] = std::move(st);
      apply_update(res.nominal, noisy ? &res.actual : nullptr, params, lg.grad, cfg, rng);
    }
    double err = 0.0;
    try {
      err = aggregate_error(measured(), data, opt);
    } catch (const ConvergenceError&) {
      throw ConvergenceError("equilibrium solve diverged in epoch " + std::to_string(epoch + 1));
    }
    res.curve.errors.push_back(err);
    if (on_epoch) on_epoch(epoch, err);
  }
  if (!noisy) res.actual = res.nominal;
  return res;
}

/// Teacher, dataset and student for a configuration (deterministic per seed).
struct Experiment {
  CascadeNetwork teacher;
  Dataset data;
  CascadeNetwork student;
};

inline Experiment setup_experiment(const TrainConfig& cfg, const SolverOptions& opt = {}) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  Experiment e;
  e.teacher = make_teacher(cfg, rng);
  e.data = generate_synthetic_dataset(e.teacher, cfg.samples, rng, cfg.input_min, cfg.input_max, opt);
  e.student = make_crossbar_cascade(cfg.widths, cfg.init_resistance, cfg.device, cfg.strap_resistance);
  return e;
}

inline TrainResult run_experiment(const TrainConfig& cfg, const std::function<void(std::size_t, double)>& on_epoch = {},
                                  const SolverOptions& opt = {}) {
  auto e = setup_experiment(cfg, opt);
  return sgd_train(std::move(e.student), e.data, cfg, on_epoch, opt);
}

}  // namespace equinet
