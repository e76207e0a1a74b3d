// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "equinet/activation.hpp"
#include "equinet/errors.hpp"

namespace equinet {

/// Kernel behavior 0 in H z + psi(z) + B u, y = -C z - D u.
///
/// `inputs[k]` is the physical type of u[k]; y[k] is its dual.  `blocks`
/// lists the diagonal block sizes when H is block lower triangular (cascades);
/// an empty list means a single block.  Only the diagonal blocks of H are
/// required to be monotone.
struct KernelBehavior {
  Eigen::MatrixXd H, B, C, D;
  std::vector<ActivationKind> activations;
  std::vector<Quantity> inputs;
  std::vector<std::size_t> blocks;

  std::size_t n() const { return static_cast<std::size_t>(H.rows()); }
  std::size_t m() const { return static_cast<std::size_t>(D.cols()); }
  std::size_t outputs() const { return static_cast<std::size_t>(D.rows()); }

  std::vector<std::size_t> block_sizes() const {
    if (blocks.empty()) return n() ? std::vector<std::size_t>{n()} : std::vector<std::size_t>{};
    return blocks;
  }

  /// Throws InputError on inconsistent dimensions.
  void validate() const {
    const auto nn = static_cast<Eigen::Index>(n());
    if (H.cols() != nn || B.rows() != nn || C.cols() != nn || C.rows() != D.rows() ||
        B.cols() != D.cols())
      throw InputError("kernel matrices have inconsistent dimensions");
    if (activations.size() != n()) throw InputError("kernel needs one activation per state");
    if (!inputs.empty() && inputs.size() != m())
      throw InputError("kernel input labels do not match the input dimension");
    if (!blocks.empty() && std::accumulate(blocks.begin(), blocks.end(), std::size_t{0}) != n())
      throw InputError("kernel block sizes do not add up to the state dimension");
  }
};

namespace detail {

inline Eigen::MatrixXd sym(const Eigen::MatrixXd& A) { return 0.5 * (A + A.transpose()); }

inline double max_sym_eigenvalue(const Eigen::MatrixXd& A) {
  if (A.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym(A), Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

inline double min_sym_eigenvalue(const Eigen::MatrixXd& A) {
  if (A.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym(A), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace detail

/// True when every diagonal block of H, and D, has a PSD symmetric part
/// (eigenvalues >= -tol).
inline bool is_monotone(const KernelBehavior& k, double tol = 1e-10) {
  std::size_t off = 0;
  for (auto s : k.block_sizes()) {
    const auto o = static_cast<Eigen::Index>(off), n = static_cast<Eigen::Index>(s);
    if (detail::min_sym_eigenvalue(k.H.block(o, o, n, n)) < -tol) return false;
    off += s;
  }
  return k.D.rows() != k.D.cols() || detail::min_sym_eigenvalue(k.D) >= -tol;
}

}  // namespace equinet
