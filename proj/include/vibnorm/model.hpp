#pragma once

// Vibrational systems M x'' + (C_int + C_ext) x' + K x = ..., their modal
// representation and the rank-1 damper factorization D = gamma * U U^T.

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "vibnorm/error.hpp"

namespace vibnorm {

struct SecondOrderSystem {
  Eigen::MatrixXd M;
  Eigen::MatrixXd K;
  double alpha = 0.005;        ///< internal damping as a fraction of critical
  Eigen::VectorXd damper_e;    ///< C_ext = v * e e^T

  Eigen::Index n() const noexcept { return M.rows(); }
};

/// Mass/stiffness part of the modal representation; independent of the damper.
struct ModalBasis {
  Eigen::VectorXd omega;  ///< undamped eigenfrequencies, ascending
  Eigen::MatrixXd Phi;    ///< Phi^T M Phi = I, Phi^T K Phi = diag(omega^2)
  double nu = 0.0;        ///< Phi^T C_int Phi = nu * diag(omega)

  Eigen::Index n() const noexcept { return omega.size(); }
};

struct ModalSystem {
  Eigen::VectorXd omega;
  Eigen::MatrixXd Phi;
  double nu = 0.0;
  Eigen::VectorXd U;                 ///< unit damping direction
  double gamma_per_viscosity = 0.0;  ///< |Phi^T e|^2

  Eigen::Index n() const noexcept { return omega.size(); }
  double omega_max() const { return omega.maxCoeff(); }
  double gamma(double viscosity) const { return viscosity * gamma_per_viscosity; }
};

namespace detail {

inline void require_square_symmetric(const Eigen::MatrixXd& A, const char* name) {
  if (A.rows() == 0 || A.rows() != A.cols()) {
    throw ConfigError(std::string(name) + " must be a non-empty square matrix");
  }
  const double scale = std::max(A.norm(), 1.0);
  if ((A - A.transpose()).norm() > 1e-12 * scale) {
    throw ConfigError(std::string(name) + " is not symmetric");
  }
}

// First entry above a relative noise floor is made positive.
inline void normalize_column_signs(Eigen::MatrixXd& Phi) {
  for (Eigen::Index c = 0; c < Phi.cols(); ++c) {
    const double floor = 1e-12 * Phi.col(c).cwiseAbs().maxCoeff();
    for (Eigen::Index r = 0; r < Phi.rows(); ++r) {
      if (std::abs(Phi(r, c)) > floor) {
        if (Phi(r, c) < 0.0) Phi.col(c) *= -1.0;
        break;
      }
    }
  }
}

}  // namespace detail

/// Simultaneous diagonalization of (M, K): M = L L^T, eig(L^-1 K L^-T) = Q diag(w^2) Q^T,
/// Phi = L^-T Q.
inline ModalBasis modal_basis(const Eigen::MatrixXd& M, const Eigen::MatrixXd& K, double alpha) {
  detail::require_square_symmetric(M, "M");
  detail::require_square_symmetric(K, "K");
  if (M.rows() != K.rows()) throw ConfigError("M and K differ in size");
  if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");

  Eigen::LLT<Eigen::MatrixXd> chol_m(M);
  if (chol_m.info() != Eigen::Success) throw NotPositiveDefinite("M is not positive definite");
  Eigen::LLT<Eigen::MatrixXd> chol_k(K);
  if (chol_k.info() != Eigen::Success) throw NotPositiveDefinite("K is not positive definite");

  const Eigen::Index n = M.rows();
  const Eigen::MatrixXd L = chol_m.matrixL();
  // C = L^-1 K L^-T
  Eigen::MatrixXd C = L.triangularView<Eigen::Lower>().solve(K);
  C = L.triangularView<Eigen::Lower>().solve(C.transpose()).eval();
  C = 0.5 * (C + C.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(C);
  if (eig.info() != Eigen::Success) throw SolverFailure("symmetric eigensolver did not converge");

  // Eigen returns ascending eigenvalues; a stable sort keeps that order and
  // makes the tie rule explicit.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return lambda(a) < lambda(b); });

  ModalBasis basis;
  basis.omega.resize(n);
  Eigen::MatrixXd Q(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double l = lambda(order[static_cast<std::size_t>(i)]);
    if (!(l > 0.0)) throw NotPositiveDefinite("K is not positive definite");
    basis.omega(i) = std::sqrt(l);
    Q.col(i) = eig.eigenvectors().col(order[static_cast<std::size_t>(i)]);
  }
  basis.Phi = L.transpose().triangularView<Eigen::Upper>().solve(Q);
  detail::normalize_column_signs(basis.Phi);
  basis.nu = 2.0 * alpha;
  return basis;
}

/// Rank-1 factorization of the modal damper: Phi^T (v e e^T) Phi = v * gamma_per_viscosity * U U^T.
inline ModalSystem attach_damper(const ModalBasis& basis, const Eigen::VectorXd& damper_e) {
  if (damper_e.size() != basis.n()) throw InvalidGeometry("damper vector has wrong length");
  const Eigen::VectorXd w = basis.Phi.transpose() * damper_e;
  const double norm = w.norm();
  if (!(norm > 0.0)) throw InvalidGeometry("damper vector must be nonzero");

  ModalSystem modal;
  modal.omega = basis.omega;
  modal.Phi = basis.Phi;
  modal.nu = basis.nu;
  modal.U = w / norm;
  modal.gamma_per_viscosity = norm * norm;
  return modal;
}

inline ModalSystem modal_transform(const SecondOrderSystem& sys) {
  if (sys.damper_e.size() == sys.n() && sys.damper_e.cwiseAbs().maxCoeff() == 0.0) {
    throw InvalidGeometry("damper vector must be nonzero");
  }
  return attach_damper(modal_basis(sys.M, sys.K, sys.alpha), sys.damper_e);
}

/// C_crit = 2 M^{1/2} (M^{-1/2} K M^{-1/2})^{1/2} M^{1/2}.
inline Eigen::MatrixXd critical_damping(const Eigen::MatrixXd& M, const Eigen::MatrixXd& K) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(M);
  if (em.eigenvalues().minCoeff() <= 0.0) throw NotPositiveDefinite("M is not positive definite");
  const Eigen::MatrixXd m_half = em.operatorSqrt();
  const Eigen::MatrixXd m_inv_half = em.operatorInverseSqrt();
  Eigen::MatrixXd inner = m_inv_half * K * m_inv_half;
  inner = 0.5 * (inner + inner.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ek(inner);
  return 2.0 * m_half * ek.operatorSqrt() * m_half;
}

inline Eigen::VectorXd unit_vector(Eigen::Index n, Eigen::Index one_based) {
  Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
  e(one_based - 1) = 1.0;
  return e;
}

/// Masses of the n-mass ladder: (n-2j)/10 for j <= n/4, (n/4+j)/10 after.
inline Eigen::VectorXd example1_masses(int n) {
  Eigen::VectorXd m(n);
  for (int j = 1; j <= n; ++j) {
    m(j - 1) = j <= n / 4 ? (n - 2.0 * j) / 10.0 : (n / 4.0 + j) / 10.0;
  }
  return m;
}

/// Grounded n-mass ladder with n+1 springs of stiffness n/2 and one grounded
/// damper at mass damper_index (1-based). Accepts any n >= 1; the light
/// block of the mass formula is j <= floor(n/4).
inline SecondOrderSystem build_ladder(int n, int damper_index, double alpha = 0.005) {
  if (n <= 0) throw ConfigError("ladder: n must be positive");
  if (damper_index < 1 || damper_index > n) throw ConfigError("ladder: damper index out of range");

  const double k = n / 2.0;
  SecondOrderSystem sys;
  sys.M = example1_masses(n).asDiagonal();
  sys.K = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    sys.K(i, i) = 2.0 * k;
    if (i + 1 < n) {
      sys.K(i, i + 1) = -k;
      sys.K(i + 1, i) = -k;
    }
  }
  sys.alpha = alpha;
  sys.damper_e = unit_vector(n, damper_index);
  return sys;
}

/// build_ladder restricted to n divisible by 4.
inline SecondOrderSystem build_example1(int n, int damper_index, double alpha = 0.005) {
  if (n <= 0 || n % 4 != 0) throw ConfigError("example1: n must be a positive multiple of 4");
  return build_ladder(n, damper_index, alpha);
}

/// Masses of the three-row oscillator, n = 3d+1. The third row uses the
/// row-local index (n - 2(j - 2d)); the global-index form is negative there.
inline Eigen::VectorXd example3_masses(int d) {
  const int n = 3 * d + 1;
  Eigen::VectorXd m(n);
  for (int j = 1; j <= n; ++j) {
    double mj;
    if (j <= d / 2) {
      mj = 1000.0 - 2.0 * j;
    } else if (j <= d) {
      mj = j - 200.0;
    } else if (j <= 2 * d) {
      mj = j + 100.0;
    } else if (j <= 3 * d) {
      mj = n - 2.0 * (j - 2 * d);
    } else {
      mj = 2000.0;
    }
    m(j - 1) = mj;
  }
  return m;
}

/// Block stiffness of three spring rows (k1, k2, k3) = (800, 600, 700) joined at
/// one extra mass grounded through k4.
inline Eigen::MatrixXd example3_stiffness(int d, double k4) {
  if (d <= 0) throw ConfigError("example3: d must be positive");
  const int n = 3 * d + 1;
  const double ks[3] = {800.0, 600.0, 700.0};
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n, n);
  for (int row = 0; row < 3; ++row) {
    const int off = row * d;
    for (int i = 0; i < d; ++i) {
      K(off + i, off + i) = 2.0 * ks[row];
      if (i + 1 < d) {
        K(off + i, off + i + 1) = -ks[row];
        K(off + i + 1, off + i) = -ks[row];
      }
    }
    K(off + d - 1, n - 1) = -ks[row];
    K(n - 1, off + d - 1) = -ks[row];
  }
  K(n - 1, n - 1) = ks[0] + ks[1] + ks[2] + k4;
  return K;
}

/// Three-row oscillator with a damper between mass i and mass i+d, i in 1..2d.
inline SecondOrderSystem build_example3(int d, double k4, int damper_row_index, double alpha = 0.005) {
  if (d <= 0 || d % 2 != 0) throw ConfigError("example3: d must be a positive even integer");
  if (damper_row_index < 1 || damper_row_index > 2 * d) {
    throw ConfigError("example3: damper index must lie in 1..2d");
  }
  if (!(k4 > 0.0)) throw ConfigError("example3: k4 must be positive");
  const int n = 3 * d + 1;
  const Eigen::VectorXd m = example3_masses(d);
  if (m.minCoeff() <= 0.0) throw ConfigError("example3: mass formula gives nonpositive masses for this d");

  SecondOrderSystem sys;
  sys.M = m.asDiagonal();
  sys.K = example3_stiffness(d, k4);
  sys.alpha = alpha;
  sys.damper_e = Eigen::VectorXd::Zero(n);
  sys.damper_e(damper_row_index - 1) = 1.0;
  sys.damper_e(damper_row_index - 1 + d) = -1.0;
  return sys;
}

}  // namespace vibnorm
