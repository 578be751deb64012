#pragma once

// Dense reference evaluation of the same norm:
//   trace(X - e^{AT} X e^{A^T T}),  A X + X A^T = -Z,
// its dual form, and brute-force quadrature of trace(e^{At} Z e^{A^T t}).

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "vibnorm/engine.hpp"
#include "vibnorm/error.hpp"
#include "vibnorm/model.hpp"

namespace vibnorm {

struct StateSpace {
  Eigen::MatrixXd A;       ///< [0, Omega; -Omega, -nu Omega - gamma U U^T]
  Eigen::VectorXd z_diag;  ///< p on 1..r, 1 on n+1..n+r, 0 elsewhere

  Eigen::MatrixXd Z() const { return z_diag.asDiagonal(); }
};

inline StateSpace state_space(const ModalSystem& modal, const NormProblem& problem,
                              double viscosity) {
  problem.validate(modal.n());
  const Eigen::Index n = modal.n();
  const double gamma = modal.gamma(viscosity);
  StateSpace ss;
  ss.A = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  ss.A.topRightCorner(n, n) = modal.omega.asDiagonal();
  ss.A.bottomLeftCorner(n, n) = -modal.omega.asDiagonal().toDenseMatrix();
  ss.A.bottomRightCorner(n, n) = -gamma * modal.U * modal.U.transpose();
  ss.A.bottomRightCorner(n, n).diagonal() -= modal.nu * modal.omega;
  ss.z_diag = Eigen::VectorXd::Zero(2 * n);
  ss.z_diag.head(problem.r).setConstant(problem.p);
  ss.z_diag.segment(n, problem.r).setConstant(1.0);
  return ss;
}

/// e^{A t} by Pade scaling and squaring (Eigen's MatrixFunctions module).
inline Eigen::MatrixXd expm(const Eigen::MatrixXd& A, double t) {
  if (!A.allFinite() || !std::isfinite(t)) throw SolverFailure("expm: non-finite input");
  const Eigen::MatrixXd At = A * t;
  Eigen::MatrixXd E = At.exp();
  if (!E.allFinite()) throw SolverFailure("expm: overflow");
  return E;
}

namespace detail {

inline Eigen::MatrixXd lyap_kronecker(const Eigen::MatrixXd& A, const Eigen::MatrixXd& W) {
  const Eigen::Index m = A.rows();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(m, m);
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(m * m, m * m);
  // vec(A X + X A^T) = (I kron A + A kron I) vec(X), column-major vec.
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      L.block(i * m, j * m, m, m) += I(i, j) * A + A(i, j) * I;
    }
  }
  const Eigen::VectorXd rhs = -Eigen::Map<const Eigen::VectorXd>(W.data(), m * m);
  const Eigen::VectorXd x = L.partialPivLu().solve(rhs);
  return Eigen::Map<const Eigen::MatrixXd>(x.data(), m, m);
}

// Split point near the middle of a quasi-triangular matrix that does not cut
// a 2x2 diagonal block.
inline Eigen::Index schur_split(const Eigen::MatrixXd& T, Eigen::Index begin, Eigen::Index size) {
  Eigen::Index k = size / 2;
  if (T(begin + k, begin + k - 1) != 0.0) ++k;
  return k;
}

constexpr Eigen::Index kDirectBlock = 64;

inline void trsyl_block(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, Eigen::MatrixXd& C) {
  const auto m = static_cast<lapack_int>(A.rows());
  const auto n = static_cast<lapack_int>(B.rows());
  double scale = 1.0;
  const lapack_int info = LAPACKE_dtrsyl(LAPACK_COL_MAJOR, 'N', 'T', 1, m, n, A.data(), m,
                                         B.data(), n, C.data(), m, &scale);
  if (info < 0) throw SolverFailure("lyap: triangular Sylvester solve failed");
  if (scale != 1.0) C /= scale;
}

// Solves Ta X + X Tb^T = C in place, Ta and Tb upper quasi-triangular
// (diagonal blocks of one real Schur factor). Recursive splitting keeps the
// bulk of the work in matrix products.
inline void sylvester_qt(const Eigen::MatrixXd& T, Eigen::Index a0, Eigen::Index m, Eigen::Index b0,
                         Eigen::Index n, Eigen::Ref<Eigen::MatrixXd> C) {
  if (m <= kDirectBlock && n <= kDirectBlock) {
    const Eigen::MatrixXd A = T.block(a0, a0, m, m);
    const Eigen::MatrixXd B = T.block(b0, b0, n, n);
    Eigen::MatrixXd X = C;
    trsyl_block(A, B, X);
    C = X;
    return;
  }
  if (m >= n) {
    const Eigen::Index k = schur_split(T, a0, m);
    auto C1 = C.topRows(k);
    auto C2 = C.bottomRows(m - k);
    sylvester_qt(T, a0 + k, m - k, b0, n, C2);
    C1.noalias() -= T.block(a0, a0 + k, k, m - k) * C2;
    sylvester_qt(T, a0, k, b0, n, C1);
  } else {
    const Eigen::Index k = schur_split(T, b0, n);
    auto C1 = C.leftCols(k);
    auto C2 = C.rightCols(n - k);
    sylvester_qt(T, a0, m, b0 + k, n - k, C2);
    C1.noalias() -= C2 * T.block(b0, b0 + k, k, n - k).transpose();
    sylvester_qt(T, a0, m, b0, k, C1);
  }
}

// Solves T X + X T^T = C in place for the trailing block [b, b+m) of T, C symmetric.
inline void lyapunov_qt(const Eigen::MatrixXd& T, Eigen::Index b, Eigen::Index m,
                        Eigen::Ref<Eigen::MatrixXd> C) {
  if (m <= kDirectBlock) {
    sylvester_qt(T, b, m, b, m, C);
    return;
  }
  const Eigen::Index k = schur_split(T, b, m);
  const Eigen::Index l = m - k;
  auto C11 = C.topLeftCorner(k, k);
  auto C12 = C.topRightCorner(k, l);
  auto C22 = C.bottomRightCorner(l, l);
  const auto T12 = T.block(b, b + k, k, l);
  lyapunov_qt(T, b + k, l, C22);
  C12.noalias() -= T12 * C22;
  sylvester_qt(T, b, k, b + k, l, C12);
  const Eigen::MatrixXd P = T12 * C12.transpose();
  C11 -= P + P.transpose();
  lyapunov_qt(T, b, k, C11);
  C.bottomLeftCorner(l, k) = C12.transpose();
}

// Real Schur A = Q T Q^T, reused for refinement steps.
class SchurLyapunov {
 public:
  explicit SchurLyapunov(const Eigen::MatrixXd& A) : T_(A), Q_(A.rows(), A.cols()) {
    const auto m = static_cast<lapack_int>(A.rows());
    std::vector<double> wr(static_cast<std::size_t>(m)), wi(static_cast<std::size_t>(m));
    lapack_int sdim = 0;
    const lapack_int info = LAPACKE_dgees(LAPACK_COL_MAJOR, 'V', 'N', nullptr, m, T_.data(), m,
                                          &sdim, wr.data(), wi.data(), Q_.data(), m);
    if (info != 0) throw SolverFailure("lyap: real Schur decomposition failed");
    // A broken BLAS kernel shows up here first; refuse to continue on garbage.
    const double err = (Q_ * T_ * Q_.transpose() - A).norm();
    if (!(err <= 1e-10 * std::max(A.norm(), 1.0))) {
      throw SolverFailure("lyap: Schur factorization residual " + std::to_string(err) +
                          " (faulty BLAS/LAPACK build? try OPENBLAS_CORETYPE=Haswell)");
    }
    // dgees leaves rounding noise below the quasi-triangle; the split logic
    // reads the first subdiagonal, so clear everything under it.
    for (Eigen::Index j = 0; j < T_.cols(); ++j) {
      for (Eigen::Index i = j + 2; i < T_.rows(); ++i) T_(i, j) = 0.0;
    }
  }

  // Solves A X + X A^T = -W.
  Eigen::MatrixXd solve(const Eigen::MatrixXd& W) const {
    Eigen::MatrixXd C = -(Q_.transpose() * W * Q_);
    C = 0.5 * (C + C.transpose()).eval();
    lyapunov_qt(T_, 0, T_.rows(), C);
    return Q_ * C * Q_.transpose();
  }

 private:
  Eigen::MatrixXd T_;
  Eigen::MatrixXd Q_;
};

inline double lyap_residual(const Eigen::MatrixXd& A, const Eigen::MatrixXd& X,
                            const Eigen::MatrixXd& W) {
  return (A * X + X * A.transpose() + W).norm();
}

}  // namespace detail

/// Kronecker solve for order <= 60; real-Schur Bartels-Stewart with one
/// refinement step above. Throws SolverFailure when the relative residual
/// exceeds 1e-9.
inline Eigen::MatrixXd lyap(const Eigen::MatrixXd& A, const Eigen::MatrixXd& W) {
  if (A.rows() != A.cols() || W.rows() != A.rows() || W.cols() != A.cols()) {
    throw ConfigError("lyap: dimension mismatch");
  }
  const double wnorm = W.norm();
  Eigen::MatrixXd X;
  if (A.rows() <= 60) {
    X = detail::lyap_kronecker(A, W);
    X = 0.5 * (X + X.transpose()).eval();
  } else {
    const detail::SchurLyapunov schur(A);
    X = schur.solve(W);
    X = 0.5 * (X + X.transpose()).eval();
    if (detail::lyap_residual(A, X, W) > 1e-10 * wnorm) {
      const Eigen::MatrixXd residual = A * X + X * A.transpose() + W;
      X += schur.solve(residual);
      X = 0.5 * (X + X.transpose()).eval();
    }
  }
  const double res = detail::lyap_residual(A, X, W);
  if (!(res <= 1e-9 * wnorm) && !(wnorm == 0.0 && res == 0.0)) {
    throw SolverFailure("lyap: residual " + std::to_string(res / wnorm) + " above 1e-9");
  }
  return X;
}

/// trace(E W E^T) without forming the product.
inline double congruence_trace(const Eigen::MatrixXd& E, const Eigen::MatrixXd& W) {
  return (E * W).cwiseProduct(E).sum();
}

inline double norm_reference(const ModalSystem& modal, const NormProblem& problem,
                             double viscosity) {
  const StateSpace ss = state_space(modal, problem, viscosity);
  const Eigen::MatrixXd X = lyap(ss.A, ss.Z());
  const Eigen::MatrixXd E = expm(ss.A, problem.T);
  return X.trace() - congruence_trace(E, X);
}

/// norm_reference for several horizons sharing one Lyapunov solve.
inline std::vector<double> reference_horizon_sweep(const ModalSystem& modal, NormProblem problem,
                                                   double viscosity,
                                                   std::span<const double> horizons) {
  const StateSpace ss = state_space(modal, problem, viscosity);
  const Eigen::MatrixXd X = lyap(ss.A, ss.Z());
  std::vector<double> out;
  out.reserve(horizons.size());
  for (double T : horizons) {
    problem.T = T;
    problem.validate(modal.n());
    out.push_back(X.trace() - congruence_trace(expm(ss.A, T), X));
  }
  return out;
}

/// Dual form trace(Z (Y - e^{A^T T} Y e^{AT})) with A^T Y + Y A = -I.
inline double norm_dual(const ModalSystem& modal, const NormProblem& problem, double viscosity) {
  const StateSpace ss = state_space(modal, problem, viscosity);
  const Eigen::Index m = ss.A.rows();
  const Eigen::MatrixXd Y = lyap(ss.A.transpose(), Eigen::MatrixXd::Identity(m, m));
  const Eigen::MatrixXd E = expm(ss.A, problem.T);
  double sum = 0.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    if (ss.z_diag(j) == 0.0) continue;
    const Eigen::VectorXd e = E.col(j);
    sum += ss.z_diag(j) * (Y(j, j) - e.dot(Y * e));
  }
  return sum;
}

/// int_0^T trace(e^{At} W e^{A^T t}) dt by composite Simpson with dense expm
/// at every node, doubling the node count until successive values agree to
/// 1e-9 relative.
inline double trace_integral_bruteforce(const Eigen::MatrixXd& A, const Eigen::MatrixXd& W,
                                        double T, int n_intervals = 16) {
  if (!(T > 0.0)) throw ConfigError("T must be positive");
  if (n_intervals < 2) n_intervals = 2;
  if (n_intervals % 2) ++n_intervals;
  constexpr int max_intervals = 1 << 18;
  auto integrand = [&](double t) { return congruence_trace(expm(A, t), W); };

  std::vector<double> values(static_cast<std::size_t>(n_intervals) + 1);
  for (int i = 0; i <= n_intervals; ++i) values[static_cast<std::size_t>(i)] = integrand(T * i / n_intervals);
  auto simpson = [&] {
    const double h = T / static_cast<double>(values.size() - 1);
    return simpson_fixed(values, h);
  };
  double prev = simpson();
  for (int m = 2 * n_intervals; m <= max_intervals; m *= 2) {
    std::vector<double> next(static_cast<std::size_t>(m) + 1);
    for (int i = 0; i <= m; ++i) {
      next[static_cast<std::size_t>(i)] =
          i % 2 == 0 ? values[static_cast<std::size_t>(i / 2)] : integrand(T * i / m);
    }
    values = std::move(next);
    const double cur = simpson();
    if (std::abs(cur - prev) <= 1e-9 * std::abs(cur) || (cur == 0.0 && prev == 0.0)) return cur;
    prev = cur;
  }
  throw SolverFailure("bruteforce quadrature did not converge");
}

inline double norm_bruteforce(const ModalSystem& modal, const NormProblem& problem,
                              double viscosity, int n_nodes = 16) {
  const StateSpace ss = state_space(modal, problem, viscosity);
  return trace_integral_bruteforce(ss.A, ss.Z(), problem.T, n_nodes);
}

}  // namespace vibnorm
