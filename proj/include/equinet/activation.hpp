// SPDX-License-Identifier: Apache-2.0
#pragma once

// Scalar monotone device relations (ideal diodes, Shockley diodes and the
// saturating Zener/CRD pairs), their resolvents and their linearizations.
//
// Every relation psi is stated in the passive sign convention of the edge it
// sits on: z is the element's *input* quantity (current for impedance-type
// elements, voltage for admittance-type ones) and psi(z) is its electrical
// dual.  The resolvent (I + alpha*psi)^{-1} is the activation function the
// element induces in the equilibrium network.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <type_traits>
#include <variant>

#include "equinet/errors.hpp"

namespace equinet {

enum class Quantity { Current, Voltage };

inline Quantity dual(Quantity q) {
  return q == Quantity::Current ? Quantity::Voltage : Quantity::Current;
}

inline const char* to_string(Quantity q) {
  return q == Quantity::Current ? "current" : "voltage";
}

/// Forward biased ideal diode, impedance form: v in Z(i), i >= 0.
struct IdealDiodeForward {
  bool operator==(const IdealDiodeForward&) const = default;
};

/// Reverse biased ideal diode, admittance form: i in Y(v), v >= 0.
struct IdealDiodeReverse {
  bool operator==(const IdealDiodeReverse&) const = default;
};

enum class Orientation { Impedance, Admittance };

/// Shockley diode.
///
/// Impedance orientation: v = n*vT*ln(i/iS + 1), defined for i > -iS.  Its
/// resolvent is the "diode ReLU".
///
/// Admittance orientation: the same junction mounted like IdealDiodeReverse
/// (anode on the head node), i = iS*(1 - exp(-v/(n*vT))).  This is the point
/// reflection of the inverse impedance law, so its resolvent follows from the
/// impedance resolvent by the Moreau identity.
struct Shockley {
  double n = 1.0;
  double vT = 0.025852;
  double iS = 1e-12;
  Orientation orientation = Orientation::Impedance;
  bool operator==(const Shockley&) const = default;
};

/// Opposing pair of ideal Zener diodes with breakdown `limit`.  The kernel
/// variable is the pair's voltage, confined to [-limit, limit]; the current is
/// the normal cone of that interval, so the resolvent is a clamp.
struct ZenerPairImpedance {
  double limit = 1.0;
  bool operator==(const ZenerPairImpedance&) const = default;
};

/// Anti-parallel pair of ideal current regulator diodes; dual of the Zener
/// pair with the current confined to [-limit, limit].
struct CrdPairAdmittance {
  double limit = 1.0;
  bool operator==(const CrdPairAdmittance&) const = default;
};

using ActivationKind = std::variant<IdealDiodeForward, IdealDiodeReverse, Shockley,
                                    ZenerPairImpedance, CrdPairAdmittance>;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

/// Physical type of the kernel variable z carried by an element.
inline Quantity variable_quantity(const ActivationKind& kind) {
  return std::visit(overloaded{
                        [](const IdealDiodeForward&) { return Quantity::Current; },
                        [](const IdealDiodeReverse&) { return Quantity::Voltage; },
                        [](const Shockley& s) {
                          return s.orientation == Orientation::Impedance ? Quantity::Current
                                                                         : Quantity::Voltage;
                        },
                        [](const ZenerPairImpedance&) { return Quantity::Voltage; },
                        [](const CrdPairAdmittance&) { return Quantity::Current; },
                    },
                    kind);
}

inline bool is_ideal_diode(const ActivationKind& kind) {
  return std::holds_alternative<IdealDiodeForward>(kind) ||
         std::holds_alternative<IdealDiodeReverse>(kind);
}

inline std::string describe(const ActivationKind& kind) {
  return std::visit(overloaded{
                        [](const IdealDiodeForward&) { return std::string("ideal_forward"); },
                        [](const IdealDiodeReverse&) { return std::string("ideal_reverse"); },
                        [](const Shockley&) { return std::string("shockley"); },
                        [](const ZenerPairImpedance&) { return std::string("zener_pair"); },
                        [](const CrdPairAdmittance&) { return std::string("crd_pair"); },
                    },
                    kind);
}

/// Throws InputError if the parameters of `kind` are not admissible.
inline void validate(const ActivationKind& kind) {
  std::visit(overloaded{
                 [](const Shockley& s) {
                   if (!(s.n > 0.0) || !(s.vT > 0.0) || !(s.iS > 0.0) || !std::isfinite(s.n) ||
                       !std::isfinite(s.vT) || !std::isfinite(s.iS))
                     throw InputError("Shockley parameters n, vT, iS must be positive and finite");
                 },
                 [](const ZenerPairImpedance& z) {
                   if (!(z.limit > 0.0)) throw InputError("Zener pair limit must be positive");
                 },
                 [](const CrdPairAdmittance& c) {
                   if (!(c.limit > 0.0)) throw InputError("CRD pair limit must be positive");
                 },
                 [](const auto&) {},
             },
             kind);
}

namespace detail {

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

// Solves y + a*ln(y/iS + 1) = x for y > -iS.  With t = y + iS = exp(s) the
// equation becomes h(s) = exp(s) + a*(s - ln iS) - (x + iS) = 0, which is
// convex and increasing in s; Newton started to the right of the root
// decreases monotonically onto it.  The bracket is kept for a bisection
// fallback.
inline double shockley_impedance_resolvent(double x, double a, double iS) {
  constexpr int max_iter = 200;
  const double c = x + iS;
  const double log_iS = std::log(iS);
  auto h = [&](double s) { return std::exp(s) + a * (s - log_iS) - c; };

  double hi = std::log(std::max(c, 0.0) + iS);
  double lo = log_iS + (c - std::exp(hi)) / a;
  if (h(lo) > 0.0) lo -= 1.0 + std::abs(lo);
  double s = hi;
  for (int it = 0; it < max_iter; ++it) {
    const double hs = h(s);
    if (hs == 0.0) return std::exp(s) - iS;
    if (hs > 0.0)
      hi = s;
    else
      lo = s;
    double next = s - hs / (std::exp(s) + a);
    if (!std::isfinite(next) || next <= lo || next >= hi) next = 0.5 * (lo + hi);
    const double step = std::abs(next - s);
    s = next;
    // |dy| = exp(s)*|ds|; accept at 1e-14 absolute (plus rounding room).
    const double t = std::exp(s);
    if (step * t <= 1e-14 + 4.0 * std::numeric_limits<double>::epsilon() * t ||
        step <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(s)))
      return t - iS;
  }
  throw ConvergenceError("Shockley resolvent did not converge; parameters are pathological");
}

}  // namespace detail

/// Resolvent (I + alpha*psi)^{-1}(x) of the relation `kind`.
inline double resolvent(const ActivationKind& kind, double x, double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw InputError("resolvent step alpha must be positive");
  return std::visit(
      overloaded{
          [&](const IdealDiodeForward&) { return detail::relu(x); },
          [&](const IdealDiodeReverse&) { return detail::relu(x); },
          [&](const Shockley& s) {
            if (!std::isfinite(x)) throw InputError("Shockley resolvent needs a finite argument");
            const double nvt = s.n * s.vT;
            if (s.orientation == Orientation::Impedance)
              return detail::shockley_impedance_resolvent(x, alpha * nvt, s.iS);
            // Moreau: y = x + alpha * J_{psi_imp / alpha}(-x / alpha).
            const double t = detail::shockley_impedance_resolvent(-x / alpha, nvt / alpha, s.iS);
            return x + alpha * t;
          },
          [&](const ZenerPairImpedance& z) { return std::clamp(x, -z.limit, z.limit); },
          [&](const CrdPairAdmittance& c) { return std::clamp(x, -c.limit, c.limit); },
      },
      kind);
}

/// Derivative of the resolvent with respect to x (a selection at kinks:
/// the closed-branch value 0 for ideal elements).
inline double resolvent_derivative(const ActivationKind& kind, double x, double alpha) {
  return std::visit(overloaded{
                        [&](const IdealDiodeForward&) { return x > 0.0 ? 1.0 : 0.0; },
                        [&](const IdealDiodeReverse&) { return x > 0.0 ? 1.0 : 0.0; },
                        [&](const Shockley& s) {
                          const double y = resolvent(kind, x, alpha);
                          const double nvt = s.n * s.vT;
                          double slope = 0.0;
                          if (s.orientation == Orientation::Impedance)
                            slope = nvt / (y + s.iS);
                          else
                            slope = s.iS / nvt * std::exp(-y / nvt);
                          if (!std::isfinite(slope)) return 0.0;
                          return 1.0 / (1.0 + alpha * slope);
                        },
                        [&](const ZenerPairImpedance& z) { return std::abs(x) < z.limit ? 1.0 : 0.0; },
                        [&](const CrdPairAdmittance& c) { return std::abs(x) < c.limit ? 1.0 : 0.0; },
                    },
                    kind);
}

/// True when z lies in the domain of psi (within `slack`).
inline bool in_domain(const ActivationKind& kind, double z, double slack = 0.0) {
  return std::visit(overloaded{
                        [&](const IdealDiodeForward&) { return z >= -slack; },
                        [&](const IdealDiodeReverse&) { return z >= -slack; },
                        [&](const Shockley& s) {
                          return s.orientation == Orientation::Admittance || z > -s.iS - slack;
                        },
                        [&](const ZenerPairImpedance& p) { return std::abs(z) <= p.limit + slack; },
                        [&](const CrdPairAdmittance& p) { return std::abs(z) <= p.limit + slack; },
                    },
                    kind);
}

/// Distance from w to the set psi(z); +inf outside the domain.
inline double inclusion_distance(const ActivationKind& kind, double z, double w) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  // Normal cone of [lo, hi] evaluated at z.
  auto cone = [&](double lo, double hi) {
    if (z < lo || z > hi) return inf;
    const bool at_lo = z <= lo, at_hi = z >= hi;
    if (at_lo && at_hi) return 0.0;
    if (at_lo) return std::max(0.0, w);
    if (at_hi) return std::max(0.0, -w);
    return std::abs(w);
  };
  return std::visit(overloaded{
                        [&](const IdealDiodeForward&) { return cone(0.0, inf); },
                        [&](const IdealDiodeReverse&) { return cone(0.0, inf); },
                        [&](const Shockley& s) {
                          const double nvt = s.n * s.vT;
                          if (s.orientation == Orientation::Impedance) {
                            if (!(z > -s.iS)) return inf;
                            return std::abs(w - nvt * std::log1p(z / s.iS));
                          }
                          return std::abs(w + s.iS * std::expm1(-z / nvt));
                        },
                        [&](const ZenerPairImpedance& p) { return cone(-p.limit, p.limit); },
                        [&](const CrdPairAdmittance& p) { return cone(-p.limit, p.limit); },
                    },
                    kind);
}

/// Local first-order model of psi at an operating value: either the element
/// pins its increment to zero (closed branch of a set-valued relation) or it
/// responds with a finite slope dpsi/dz.
struct Tangent {
  bool pinned = false;
  double slope = 0.0;
};

inline Tangent tangent(const ActivationKind& kind, double z) {
  return std::visit(overloaded{
                        [&](const IdealDiodeForward&) { return Tangent{!(z > 0.0), 0.0}; },
                        [&](const IdealDiodeReverse&) { return Tangent{!(z > 0.0), 0.0}; },
                        [&](const Shockley& s) {
                          const double nvt = s.n * s.vT;
                          if (s.orientation == Orientation::Impedance)
                            return Tangent{false, nvt / (z + s.iS)};
                          return Tangent{false, s.iS / nvt * std::exp(-z / nvt)};
                        },
                        [&](const ZenerPairImpedance& p) { return Tangent{!(std::abs(z) < p.limit), 0.0}; },
                        [&](const CrdPairAdmittance& p) { return Tangent{!(std::abs(z) < p.limit), 0.0}; },
                    },
                    kind);
}

/// Distance of an operating value from the nearest non-differentiable point
/// of psi (infinite for smooth relations).
inline double kink_distance(const ActivationKind& kind, double z) {
  return std::visit(overloaded{
                        [&](const IdealDiodeForward&) { return std::abs(z); },
                        [&](const IdealDiodeReverse&) { return std::abs(z); },
                        [&](const Shockley&) { return std::numeric_limits<double>::infinity(); },
                        [&](const ZenerPairImpedance& p) { return std::abs(p.limit - std::abs(z)); },
                        [&](const CrdPairAdmittance& p) { return std::abs(p.limit - std::abs(z)); },
                    },
                    kind);
}

/// Named in kernel variables: Short means the increment of z is free and its
/// dual has zero slope, Open means z is pinned.  For the reverse diode, whose
/// z is a voltage, Short is therefore the physically blocking state.
enum class LinearizedMode { Short, Open };

/// Hardware linearization of an ideal diode: conducting branch (Short) plus
/// an offset source, or the blocking branch (Open).
struct LinearizedElement {
  LinearizedMode mode = LinearizedMode::Open;
  double offset = 0.0;
};

/// Linearizes an ideal diode at `operating_value` (current for the forward
/// diode, voltage for the reverse one).  At the kink the Open branch is used.
inline LinearizedElement linearize(const ActivationKind& kind, double operating_value,
                                   double offset) {
  if (!is_ideal_diode(kind)) throw InputError("linearize: only ideal diodes have a switch model");
  if (!(operating_value >= 0.0))
    throw InputError("linearize: negative operating value is infeasible for an ideal diode");
  return {operating_value > 0.0 ? LinearizedMode::Short : LinearizedMode::Open, offset};
}

}  // namespace equinet
