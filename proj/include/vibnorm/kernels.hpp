#pragma once

// Closed-form frequency-domain quantities of the modal system
//
//   A = [0, Omega; -Omega, -nu*Omega - gamma*U*U^T]
//
// evaluated along the imaginary axis: the diagonal kernel
// L(s) = (Omega^2 + i*s*nu*Omega - s^2)^-1 = F(s) - i*G(s), the rank-1 solution
// vectors x_j and R_jk(s) = Re(e_j^T (i*s - A^T)^-1 e_k).
//
// Rows j are the 2r nonzero rows of Z in the compact layout
// q = 0..r-1 -> state index q, q = r..2r-1 -> state index n + (q - r).

#include <Eigen/Dense>

#include <cmath>

#include "vibnorm/error.hpp"
#include "vibnorm/model.hpp"

namespace vibnorm {

struct FrequencyKernel {
  double s = 0.0;
  Eigen::VectorXd fdiag;
  Eigen::VectorXd gdiag;
  double fscalar = 0.0;  ///< U^T F(s) U
  double gscalar = 0.0;  ///< U^T G(s) U
};

/// f_k(s), g_k(s) with f - i g = 1 / (omega^2 + i s nu omega - s^2).
inline void diagonal_kernel(double omega, double nu, double s, double& f, double& g) noexcept {
  const double re = (omega - s) * (omega + s);
  const double im = s * nu * omega;
  const double den = re * re + im * im;
  f = re / den;
  g = im / den;
}

inline FrequencyKernel frequency_kernel(const ModalSystem& modal, double s) {
  const Eigen::Index n = modal.n();
  FrequencyKernel k;
  k.s = s;
  k.fdiag.resize(n);
  k.gdiag.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    diagonal_kernel(modal.omega(i), modal.nu, s, k.fdiag(i), k.gdiag(i));
  }
  const Eigen::VectorXd u2 = modal.U.cwiseAbs2();
  k.fscalar = u2.dot(k.fdiag);
  k.gscalar = u2.dot(k.gdiag);
  return k;
}

/// x_j^2 = beta * U (+ e_{j-n} for velocity rows). `re`/`im` are the real and
/// imaginary parts of beta for one compact row.
struct XCoefficient {
  double re = 0.0;
  double im = 0.0;
};

/// Per-mode shared part of both coefficient families.
struct ModeResponse {
  double p = 0.0;   ///< f_m (1 + s*gamma*g) - s*gamma*f * g_m
  double q = 0.0;   ///< g_m (1 + s*gamma*g) + s*gamma*f * f_m
  double den = 1.0; ///< (1 + s*gamma*g)^2 + (s*gamma*f)^2
};

inline ModeResponse mode_response(double f_m, double g_m, double f, double g, double s,
                                  double gamma) noexcept {
  const double sg = s * gamma;
  const double one_x = 1.0 + sg * g;  // >= 1 since s*g(s) >= 0
  const double y = sg * f;
  return {f_m * one_x - y * g_m, g_m * one_x + y * f_m, one_x * one_x + y * y};
}

/// Displacement row j <= r: x_j^Re = re * U, x_j^Im = im * U (im is a(s, gamma)).
inline XCoefficient displacement_coefficient(const ModeResponse& m, double u_m, double omega_m,
                                             double gamma) noexcept {
  const double c = gamma * u_m * omega_m / m.den;
  return {c * m.p, -c * m.q};
}

/// Velocity row n+m: x_j^Re = e_m + re * U, x_j^Im = im * U (im is b(s, gamma)).
inline XCoefficient velocity_coefficient(const ModeResponse& m, double u_m, double s,
                                         double gamma) noexcept {
  const double c = s * gamma * u_m / m.den;
  return {-c * m.q, -c * m.p};
}

/// Real and imaginary parts of the vectors x_j^2 for the 2r compact rows.
struct XSolution {
  int r = 0;
  Eigen::MatrixXd x_re;  ///< 2r x n
  Eigen::MatrixXd x_im;  ///< 2r x n
};

inline void check_rows(const ModalSystem& modal, int r) {
  if (r < 1 || r > modal.n()) throw ConfigError("r must lie in 1..n");
}

/// Coefficients beta_q for all compact rows at one frequency node.
template <class Out>
inline void x_coefficients(const ModalSystem& modal, const double* fdiag, const double* gdiag,
                           double f, double g, double s, double gamma, int r, Out&& out) {
  for (int m = 0; m < r; ++m) {
    const ModeResponse resp = mode_response(fdiag[m], gdiag[m], f, g, s, gamma);
    const XCoefficient d = displacement_coefficient(resp, modal.U(m), modal.omega(m), gamma);
    const XCoefficient v = velocity_coefficient(resp, modal.U(m), s, gamma);
    if (!std::isfinite(d.re) || !std::isfinite(d.im) || !std::isfinite(v.re) ||
        !std::isfinite(v.im)) {
      throw NumericFailure(s, gamma, "non-finite rank-1 solution coefficient");
    }
    out(m, d);
    out(r + m, v);
  }
}

inline XSolution x_solution(const ModalSystem& modal, const FrequencyKernel& kern, double gamma,
                            int r) {
  check_rows(modal, r);
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be nonnegative");
  const Eigen::Index n = modal.n();
  XSolution xs;
  xs.r = r;
  xs.x_re = Eigen::MatrixXd::Zero(2 * r, n);
  xs.x_im = Eigen::MatrixXd::Zero(2 * r, n);
  x_coefficients(modal, kern.fdiag.data(), kern.gdiag.data(), kern.fscalar, kern.gscalar, kern.s,
                 gamma, r, [&](int q, const XCoefficient& c) {
                   xs.x_re.row(q) = c.re * modal.U.transpose();
                   xs.x_im.row(q) = c.im * modal.U.transpose();
                 });
  for (int m = 0; m < r; ++m) xs.x_re(r + m, m) += 1.0;
  return xs;
}

/// R (2r x 2n) with h_jk(t, s) = 2 cos(s t) R_jk(s), from the full x vectors.
inline Eigen::MatrixXd integrand_factors(const ModalSystem& modal, const FrequencyKernel& kern,
                                         const XSolution& xs, int r) {
  check_rows(modal, r);
  const Eigen::Index n = modal.n();
  const double s = kern.s;
  const double nu = modal.nu;
  Eigen::MatrixXd R(2 * r, 2 * n);
  for (int q = 0; q < 2 * r; ++q) {
    const bool displacement = q < r;
    const int jm = displacement ? q : q - r;  // mode index of row j (0-based)
    for (Eigen::Index k = 0; k < n; ++k) {
      const double fk = kern.fdiag(k);
      const double gk = kern.gdiag(k);
      const double wk = modal.omega(k);
      const double xr = xs.x_re(q, k);
      const double xi = xs.x_im(q, k);
      double val = wk * (fk * xr + gk * xi);
      if (displacement && jm == k) val += nu * wk * fk + s * gk;
      R(q, k) = val;

      double vel = s * (gk * xr - fk * xi);
      if (displacement && jm == k) vel -= wk * fk;
      R(q, n + k) = vel;
    }
  }
  return R;
}

}  // namespace vibnorm
