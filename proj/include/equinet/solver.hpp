// SPDX-License-Identifier: Apache-2.0
#pragma once

// Equilibrium solvers for 0 in H z + psi(z) + B u.
//
// A block lower triangular H (cascades) is handled by forward substitution
// over its diagonal blocks; each block is solved with the chosen splitting.
// Once the splitting is close, a semismooth Newton step on the
// forward/backward fixed-point map G(z) = z - J(z - a(Hz + r)) removes the
// remaining linear-rate tail.  Newton steps are only kept when they reduce
// |G|, so the fixed point is the same one the plain iteration converges to.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>

#include <Eigen/Dense>

#include "equinet/activation.hpp"
#include "equinet/errors.hpp"
#include "equinet/kernel.hpp"

namespace equinet {

enum class SolverKind { ForwardBackward, PeacemanRachford };

struct SolverOptions {
  double alpha = 0.0;  // <= 0 selects 1 / (1 + lambda_max(sym H)) per block
  double tol = 1e-10;
  std::size_t max_iter = 100000;
  /// Relaxation of the reflected-resolvent iteration: 1 is Peaceman-Rachford,
  /// 0.5 is Douglas-Rachford.
  double relaxation = 0.5;
  /// Switch to Newton polishing once the step falls below this.
  double polish_below = 1e-6;
  bool polish = true;
  std::optional<Eigen::VectorXd> z0;
};

struct SolveReport {
  Eigen::VectorXd z_star;
  Eigen::VectorXd y;
  std::size_t iterations = 0;
  double residual = std::numeric_limits<double>::infinity();
  bool converged = false;
  double alpha = 0.0;  // step of the last block solved
};

/// Largest eigenvalue of (A + A^T)/2 by power iteration on a shifted matrix.
inline double lambda_max_sym(const Eigen::MatrixXd& A, int max_iter = 500) {
  if (A.size() == 0) return 0.0;
  const Eigen::MatrixXd S = detail::sym(A);
  // Gershgorin shift makes S + c I positive semidefinite.
  const double c = S.cwiseAbs().rowwise().sum().maxCoeff();
  if (c == 0.0) return 0.0;
  Eigen::VectorXd x = Eigen::VectorXd::Ones(S.rows()) / std::sqrt(static_cast<double>(S.rows()));
  for (Eigen::Index i = 0; i < S.rows(); ++i) x[i] += 1e-3 * static_cast<double>(i % 7);
  x.normalize();
  double lam = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd y = S * x + c * x;
    const double nrm = y.norm();
    if (nrm == 0.0) return -c;
    const double next = x.dot(y);
    y /= nrm;
    const bool done = std::abs(next - lam) <= 1e-13 * std::max(1.0, std::abs(next));
    x = y;
    lam = next;
    if (done) break;
  }
  return lam - c;
}

inline double auto_alpha(const Eigen::MatrixXd& H) {
  const double lmax = lambda_max_sym(H);
  return lmax > 0.0 ? 1.0 / (1.0 + lmax) : 1.0;
}

namespace detail {

inline Eigen::VectorXd apply_resolvent(const std::vector<ActivationKind>& acts, std::size_t off,
                                       const Eigen::VectorXd& x, double alpha) {
  Eigen::VectorXd out(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k)
    out[k] = resolvent(acts[off + static_cast<std::size_t>(k)], x[k], alpha);
  return out;
}

// One block of 0 in H z + psi(z) + r.
class BlockProblem {
 public:
  BlockProblem(const Eigen::Ref<const Eigen::MatrixXd>& H, const Eigen::VectorXd& r,
               const std::vector<ActivationKind>& acts, std::size_t off, double alpha)
      : H_(H), r_(r), acts_(acts), off_(off), alpha_(alpha) {}

  Eigen::VectorXd fb_step(const Eigen::VectorXd& z) const {
    return apply_resolvent(acts_, off_, z - alpha_ * (H_ * z + r_), alpha_);
  }

  double fb_residual(const Eigen::VectorXd& z) const {
    return z.size() ? (fb_step(z) - z).cwiseAbs().maxCoeff() : 0.0;
  }

  // Semismooth Newton on G(z) = z - J(z - a(Hz + r)).  Returns the improved
  // point, or nullopt when no step decreased |G|.
  std::optional<Eigen::VectorXd> newton(const Eigen::VectorXd& z0, double tol, int max_steps = 30) const {
    const auto n = z0.size();
    Eigen::VectorXd z = z0;
    double res = fb_residual(z);
    bool improved = false;
    for (int step = 0; step < max_steps && res > tol; ++step) {
      const Eigen::VectorXd x = z - alpha_ * (H_ * z + r_);
      const Eigen::VectorXd G = z - apply_resolvent(acts_, off_, x, alpha_);
      Eigen::MatrixXd Jm = Eigen::MatrixXd::Identity(n, n);
      for (Eigen::Index k = 0; k < n; ++k) {
        const double d = resolvent_derivative(acts_[off_ + static_cast<std::size_t>(k)], x[k], alpha_);
        Jm.row(k) -= d * (Eigen::RowVectorXd::Unit(n, k) - alpha_ * H_.row(k));
      }
      Eigen::PartialPivLU<Eigen::MatrixXd> lu(Jm);
      const Eigen::VectorXd dz = lu.solve(-G);
      if (!dz.allFinite()) break;
      double t = 1.0;
      bool accepted = false;
      for (int ls = 0; ls < 8; ++ls, t *= 0.5) {
        Eigen::VectorXd cand = z + t * dz;
        // Keep the iterate in the activation domains.
        bool feasible = true;
        for (Eigen::Index k = 0; k < n && feasible; ++k)
          feasible = in_domain(acts_[off_ + static_cast<std::size_t>(k)], cand[k]);
        if (!feasible) cand = fb_step(cand);
        const double cres = fb_residual(cand);
        if (cres < res) {
          z = std::move(cand);
          res = cres;
          accepted = improved = true;
          break;
        }
      }
      if (!accepted) break;
    }
    if (!improved) return std::nullopt;
    return z;
  }

  double alpha() const { return alpha_; }

 private:
  Eigen::Ref<const Eigen::MatrixXd> H_;
  const Eigen::VectorXd& r_;
  const std::vector<ActivationKind>& acts_;
  std::size_t off_;
  double alpha_;
};

struct BlockOutcome {
  Eigen::VectorXd z;
  std::size_t iterations = 0;
  double residual = 0.0;
  bool converged = false;
};

// Runs `step` (returns the new iterate and the step size) with Newton
// polishing once steps are small.
template <class Step, class Project>
BlockOutcome iterate_block(const BlockProblem& prob, Eigen::VectorXd z, const SolverOptions& opt,
                           Step&& step, Project&& project) {
  BlockOutcome out;
  const double switch_at = std::max(opt.tol, opt.polish_below);
  bool polished_at_switch = false;
  double res = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    res = step(z);
    ++out.iterations;
    if (!std::isfinite(res)) break;
    if (res <= opt.tol) break;
    if (opt.polish && !polished_at_switch && res <= switch_at) {
      polished_at_switch = true;
      Eigen::VectorXd zz = project(z);
      if (auto p = prob.newton(zz, opt.tol)) {
        if (prob.fb_residual(*p) <= opt.tol) {
          out.z = std::move(*p);
          out.residual = prob.fb_residual(out.z);
          out.converged = true;
          return out;
        }
      }
    }
  }
  out.z = project(z);
  out.residual = prob.fb_residual(out.z);
  if (opt.polish && out.residual > 0.0 && out.z.allFinite()) {
    if (auto p = prob.newton(out.z, 0.1 * opt.tol)) {
      out.z = std::move(*p);
      out.residual = prob.fb_residual(out.z);
    }
  }
  out.converged = out.z.allFinite() && out.residual <= opt.tol;
  return out;
}

}  // namespace detail

inline Eigen::VectorXd output_map(const KernelBehavior& k, const Eigen::VectorXd& z, const Eigen::VectorXd& u) {
  return -k.C * z - k.D * u;
}

/// max_k dist(-(Hz + Bu)_k, psi_k(z_k)); infinite outside the domain.
inline double inclusion_residual(const KernelBehavior& k, const Eigen::VectorXd& z, const Eigen::VectorXd& u) {
  const Eigen::VectorXd w = -(k.H * z + k.B * u);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i)
    worst = std::max(worst, inclusion_distance(k.activations[static_cast<std::size_t>(i)], z[i], w[i]));
  return worst;
}

namespace detail {

inline void check_solve_args(const KernelBehavior& k, const Eigen::VectorXd& u, const SolverOptions& opt) {
  k.validate();
  if (static_cast<std::size_t>(u.size()) != k.m())
    throw InputError("input vector has length " + std::to_string(u.size()) + ", kernel expects " +
                     std::to_string(k.m()));
  if (!u.allFinite()) throw InputError("input vector has non-finite entries");
  if (!(opt.tol > 0.0)) throw InputError("solver tolerance must be positive");
  if (!(opt.relaxation > 0.0 && opt.relaxation <= 1.0))
    throw InputError("relaxation must lie in (0, 1]");
  if (opt.alpha < 0.0 || !std::isfinite(opt.alpha)) throw InputError("alpha must be positive (or 0 for auto)");
  if (opt.z0 && static_cast<std::size_t>(opt.z0->size()) != k.n())
    throw InputError("warm start has the wrong length");
}

template <class BlockSolver>
SolveReport solve_blocks(const KernelBehavior& k, const Eigen::VectorXd& u, const SolverOptions& opt,
                         BlockSolver&& solve_block) {
  check_solve_args(k, u, opt);
  SolveReport rep;
  rep.z_star = opt.z0 ? *opt.z0 : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k.n()));
  rep.converged = true;
  rep.residual = 0.0;
  const Eigen::VectorXd Bu = k.B * u;
  std::size_t off = 0;
  for (auto s : k.block_sizes()) {
    const auto o = static_cast<Eigen::Index>(off), n = static_cast<Eigen::Index>(s);
    const Eigen::VectorXd r = Bu.segment(o, n) + k.H.block(o, 0, n, o) * rep.z_star.head(o);
    const Eigen::Ref<const Eigen::MatrixXd> Hb = k.H.block(o, o, n, n);
    const double alpha = opt.alpha > 0.0 ? opt.alpha : auto_alpha(Hb);
    BlockOutcome b = solve_block(Hb, r, off, alpha, Eigen::VectorXd(rep.z_star.segment(o, n)));
    rep.z_star.segment(o, n) = b.z;
    rep.iterations += b.iterations;
    rep.residual = std::max(rep.residual, b.residual);
    rep.converged = rep.converged && b.converged;
    rep.alpha = alpha;
    off += s;
  }
  rep.y = output_map(k, rep.z_star, u);
  return rep;
}

}  // namespace detail

/// z <- J(z - alpha (H z + B u)), entrywise resolvents.
inline SolveReport forward_backward(const KernelBehavior& k, const Eigen::VectorXd& u,
                                    const SolverOptions& opt = {}) {
  return detail::solve_blocks(k, u, opt, [&](const Eigen::Ref<const Eigen::MatrixXd>& Hb, const Eigen::VectorXd& r,
                                             std::size_t off, double alpha, Eigen::VectorXd z) {
    detail::BlockProblem prob(Hb, r, k.activations, off, alpha);
    auto step = [&](Eigen::VectorXd& zz) {
      Eigen::VectorXd next = prob.fb_step(zz);
      const double res = zz.size() ? (next - zz).cwiseAbs().maxCoeff() : 0.0;
      zz = std::move(next);
      return res;
    };
    return detail::iterate_block(prob, std::move(z), opt, step, [](const Eigen::VectorXd& zz) { return zz; });
  });
}

/// Relaxed reflected-resolvent splitting with the linear resolvent
/// (I + alpha H)^-1 factored once per block.  The iterate s is a shadow
/// variable; the reported point is J_psi(2 J_H(s) - s).
inline SolveReport peaceman_rachford(const KernelBehavior& k, const Eigen::VectorXd& u,
                                     const SolverOptions& opt = {}) {
  return detail::solve_blocks(k, u, opt, [&](const Eigen::Ref<const Eigen::MatrixXd>& Hb, const Eigen::VectorXd& r,
                                             std::size_t off, double alpha, Eigen::VectorXd z) {
    detail::BlockProblem prob(Hb, r, k.activations, off, alpha);
    const auto n = Hb.rows();
    const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) + alpha * Hb;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
    const double lam = opt.relaxation;
    auto linear = [&](const Eigen::VectorXd& s) -> Eigen::VectorXd { return lu.solve(s - alpha * r); };
    auto nonlinear = [&](const Eigen::VectorXd& s) {
      const Eigen::VectorXd zl = linear(s);
      return detail::apply_resolvent(k.activations, off, 2.0 * zl - s, alpha);
    };
    // Shadow start consistent with z: s = z + alpha (H z + r) gives J_H(s) = z.
    Eigen::VectorXd s = z + alpha * (Hb * z + r);
    auto step = [&](Eigen::VectorXd&) {
      const Eigen::VectorXd zl = linear(s);
      const Eigen::VectorXd x = detail::apply_resolvent(k.activations, off, 2.0 * zl - s, alpha);
      const Eigen::VectorXd d = x - zl;
      s += 2.0 * lam * d;
      return n ? d.cwiseAbs().maxCoeff() : 0.0;
    };
    auto project = [&](const Eigen::VectorXd&) { return nonlinear(s); };
    return detail::iterate_block(prob, std::move(z), opt, step, project);
  });
}

inline SolveReport solve(const KernelBehavior& k, const Eigen::VectorXd& u, SolverKind kind,
                         const SolverOptions& opt = {}) {
  return kind == SolverKind::ForwardBackward ? forward_backward(k, u, opt) : peaceman_rachford(k, u, opt);
}

/// Output y at the equilibrium; throws ConvergenceError if the solve fails.
inline Eigen::VectorXd infer(const KernelBehavior& k, const Eigen::VectorXd& u,
                             SolverKind kind = SolverKind::ForwardBackward, const SolverOptions& opt = {}) {
  auto rep = solve(k, u, kind, opt);
  if (!rep.converged)
    throw ConvergenceError("equilibrium solve did not converge after " + std::to_string(rep.iterations) +
                           " iterations (residual " + std::to_string(rep.residual) + ")");
  return rep.y;
}

}  // namespace equinet
