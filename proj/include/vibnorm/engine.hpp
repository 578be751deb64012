#pragma once

// Quadrature evaluation of the finite-horizon p-mixed H2 norm
//
//   trace( int_0^T e^{At} Z e^{A^T t} dt ),  Z = diag(p Z1, Z1), Z1 = diag(I_r, 0),
//
// as sum over rows j of Z and columns k of int_0^T (1/2pi int h_jk(t,s) ds)^2 dt
// with h_jk(t,s) = 2 cos(st) R_jk(s). The s-integral over the real line is
// folded to 2 * int_{-S_max}^0 and split at -S1: composite Simpson outside,
// adaptive Simpson on a dyadic grid inside. The time integral is Gauss-Legendre.
//
// Offline tables (s-grid, F/G diagonals, f/g, cos(s t)) do not depend on the
// viscosity; the per-viscosity work is the rank-1 coefficient table plus the
// (j, k) quadrature loop, where R_jk(s_i) is never stored beyond one pair.

#include <Eigen/Dense>

#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "vibnorm/error.hpp"
#include "vibnorm/kernels.hpp"
#include "vibnorm/model.hpp"
#include "vibnorm/parallel.hpp"
#include "vibnorm/quad.hpp"

namespace vibnorm {

struct NormProblem {
  double p = 0.5;  ///< weight of the homogeneous (initial-data) part
  int r = 1;       ///< number of dangerous modes
  double T = 1.0;  ///< time horizon

  void validate(Eigen::Index n) const {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("p must lie in [0, 1]");
    if (r < 1 || r > n) throw ConfigError("r must lie in 1..n");
    if (!(T > 0.0)) throw ConfigError("T must be positive");
  }
};

/// Viscosity- and horizon-independent frequency data.
struct FrequencyTables {
  double s_max = 0.0;
  double S1 = 0.0;
  double gamma_max = 0.0;
  int n_1 = 0;
  DyadicGrid inner;                  ///< [-S1, 0]
  Eigen::VectorXd s;                 ///< n_1 outer nodes, then inner.size() inner nodes
  std::vector<double> outer_weights; ///< composite Simpson on [-S_max, -S1]
  Eigen::MatrixXd F;                 ///< n_s x n, F(i, k) = f_k(s_i)
  Eigen::MatrixXd G;                 ///< n_s x n
  Eigen::VectorXd f;                 ///< U^T F(s_i) U
  Eigen::VectorXd g;                 ///< U^T G(s_i) U

  Eigen::Index n_s() const noexcept { return s.size(); }
  std::span<const double> outer_nodes() const {
    return {s.data(), static_cast<std::size_t>(n_1)};
  }
  std::span<const double> inner_nodes() const {
    return {s.data() + n_1, inner.size()};
  }
};

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct TimeTables {
  double T = 0.0;
  TGrid tgrid;
  RowMajorMatrix cos_table;  ///< n_s x n_t, cos(s_i t_l)
};

struct OfflineTables {
  std::shared_ptr<const FrequencyTables> freq;
  std::shared_ptr<const TimeTables> time;

  double s_max() const { return freq->s_max; }
  const TGrid& tgrid() const { return time->tgrid; }
  const Eigen::MatrixXd& F_table() const { return freq->F; }
  const Eigen::MatrixXd& G_table() const { return freq->G; }
  const Eigen::VectorXd& f_vec() const { return freq->f; }
  const Eigen::VectorXd& g_vec() const { return freq->g; }
  const RowMajorMatrix& cos_table() const { return time->cos_table; }
};

struct NormDiagnostics {
  std::size_t pairs = 0;                          ///< (j, k) pairs integrated
  std::size_t inner_nodes_max = 0;                ///< max inner evaluations of one pair
  double inner_nodes_mean = 0.0;
  std::vector<std::size_t> inner_nodes_histogram; ///< bucket b: [2^b, 2^{b+1}) evaluations
  int adaptive_depth_max = 0;
  std::size_t refinements = 0;
  std::size_t kernel_evaluations = 0;             ///< R_jk(s_i) evaluations, all pairs
  std::size_t time_weighted_terms = 0;            ///< cos-weighted multiply-adds
  double coefficients_ms = 0.0;
  double integration_ms = 0.0;
  double total_ms = 0.0;
};

struct NormValue {
  double value = 0.0;
  double displacement_part = 0.0;  ///< rows 1..r before the factor p
  double velocity_part = 0.0;      ///< rows n+1..n+r
  double gamma = 0.0;
  NormDiagnostics diagnostics;
};

/// Per-node coefficients beta_q(s_i) of the 2r compact rows (x_q^2 = beta U [+ e]).
struct RowCoefficients {
  double gamma = 0.0;
  Eigen::MatrixXd re;  ///< n_s x 2r
  Eigen::MatrixXd im;  ///< n_s x 2r
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Neumaier compensated summation.
struct CompensatedSum {
  double sum = 0.0;
  double c = 0.0;
  void add(double x) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) {
      c += (sum - t) + x;
    } else {
      c += (x - t) + sum;
    }
    sum = t;
  }
  double value() const { return sum + c; }
};

}  // namespace detail

inline double resolve_gamma_max(const ModalSystem& modal, const QuadratureSpec& spec,
                                std::span<const double> viscosities) {
  if (spec.gamma_max) return *spec.gamma_max;
  double vmax = 0.0;
  for (double v : viscosities) vmax = std::max(vmax, v);
  return modal.gamma(vmax);
}

inline std::shared_ptr<const FrequencyTables> build_frequency_tables(const ModalSystem& modal,
                                                                     const QuadratureSpec& spec,
                                                                     int threads = 1) {
  spec.validate();
  if (!spec.gamma_max) throw ConfigError("gamma_max must be resolved before building tables");
  auto tab = std::make_shared<FrequencyTables>();
  tab->gamma_max = *spec.gamma_max;
  tab->s_max = s_max(modal.omega_max(), modal.nu, tab->gamma_max, spec.tol_s);
  tab->S1 = spec.S1;
  if (!(spec.S1 < tab->s_max)) {
    throw ConfigError("S1 must be smaller than S_max = " + std::to_string(tab->s_max));
  }
  tab->n_1 = spec.n_1;
  tab->inner = DyadicGrid{-spec.S1, 0.0, spec.b_max};

  const Eigen::Index n_1 = spec.n_1;
  const Eigen::Index n_s = n_1 + static_cast<Eigen::Index>(tab->inner.size());
  const double h1 = (tab->s_max - spec.S1) / static_cast<double>(n_1 - 1);
  tab->s.resize(n_s);
  for (Eigen::Index i = 0; i < n_1; ++i) {
    tab->s(i) = i + 1 == n_1 ? -spec.S1 : -tab->s_max + static_cast<double>(i) * h1;
  }
  for (std::size_t i = 0; i < tab->inner.size(); ++i) {
    tab->s(n_1 + static_cast<Eigen::Index>(i)) = tab->inner.node(i);
  }
  tab->outer_weights = simpson_weights(static_cast<std::size_t>(n_1), h1);

  const Eigen::Index n = modal.n();
  tab->F.resize(n_s, n);
  tab->G.resize(n_s, n);
  // Column-major tables: fill one mode column per task.
  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t kk) {
    const auto k = static_cast<Eigen::Index>(kk);
    const double w = modal.omega(k);
    for (Eigen::Index i = 0; i < n_s; ++i) {
      diagonal_kernel(w, modal.nu, tab->s(i), tab->F(i, k), tab->G(i, k));
    }
  });
  const Eigen::VectorXd u2 = modal.U.cwiseAbs2();
  tab->f = tab->F * u2;
  tab->g = tab->G * u2;
  return tab;
}

inline std::shared_ptr<const TimeTables> build_time_tables(const FrequencyTables& freq, double T,
                                                           int n_t) {
  auto tt = std::make_shared<TimeTables>();
  tt->T = T;
  tt->tgrid = gauss_legendre(T, n_t);
  tt->cos_table.resize(freq.n_s(), n_t);
  for (Eigen::Index i = 0; i < freq.n_s(); ++i) {
    for (int l = 0; l < n_t; ++l) tt->cos_table(i, l) = std::cos(freq.s(i) * tt->tgrid.nodes(l));
  }
  return tt;
}

/// Offline part: grids, kernel diagonals and the cos table. spec.gamma_max must
/// be set (viscosity_sweep derives it from the viscosity list when unset).
inline OfflineTables offline(const ModalSystem& modal, const NormProblem& problem,
                             const QuadratureSpec& spec, int threads = 1) {
  problem.validate(modal.n());
  OfflineTables tables;
  tables.freq = build_frequency_tables(modal, spec, threads);
  tables.time = build_time_tables(*tables.freq, problem.T, spec.n_t);
  return tables;
}

inline OfflineTables with_horizon(const OfflineTables& tables, double T, int n_t) {
  return {tables.freq, build_time_tables(*tables.freq, T, n_t)};
}

inline RowCoefficients row_coefficients(const ModalSystem& modal, const FrequencyTables& freq,
                                        int r, double gamma, int threads = 1) {
  const Eigen::Index n_s = freq.n_s();
  RowCoefficients rc;
  rc.gamma = gamma;
  rc.re.resize(n_s, 2 * r);
  rc.im.resize(n_s, 2 * r);
  constexpr std::size_t chunk = 256;
  const std::size_t tasks = (static_cast<std::size_t>(n_s) + chunk - 1) / chunk;
  parallel_for(tasks, threads, [&](std::size_t task) {
    const auto begin = static_cast<Eigen::Index>(task * chunk);
    const Eigen::Index end = std::min<Eigen::Index>(n_s, begin + static_cast<Eigen::Index>(chunk));
    for (Eigen::Index i = begin; i < end; ++i) {
      const double s = freq.s(i);
      for (int m = 0; m < r; ++m) {
        const ModeResponse resp = mode_response(freq.F(i, m), freq.G(i, m), freq.f(i), freq.g(i), s, gamma);
        const XCoefficient d = displacement_coefficient(resp, modal.U(m), modal.omega(m), gamma);
        const XCoefficient v = velocity_coefficient(resp, modal.U(m), s, gamma);
        if (!std::isfinite(d.re) || !std::isfinite(d.im) || !std::isfinite(v.re) ||
            !std::isfinite(v.im)) {
          throw NumericFailure(s, gamma, "non-finite rank-1 solution coefficient");
        }
        rc.re(i, m) = d.re;
        rc.im(i, m) = d.im;
        rc.re(i, r + m) = v.re;
        rc.im(i, r + m) = v.im;
      }
    }
  });
  return rc;
}

namespace detail {

// R_jk(s_i) for one (row, column) pair from the compressed x representation.
class PairKernel {
 public:
  PairKernel(const ModalSystem& modal, const FrequencyTables& freq, const RowCoefficients& rc,
             int r, int q, Eigen::Index k)
      : freq_(freq), nu_(modal.nu), n_(modal.n()) {
    displacement_ = q < r;
    const int jm = displacement_ ? q : q - r;
    velocity_col_ = k >= n_;
    mode_ = velocity_col_ ? k - n_ : k;
    delta_ = jm == mode_ ? 1.0 : 0.0;
    u_ = modal.U(mode_);
    w_ = modal.omega(mode_);
    re_ = rc.re.col(q).data();
    im_ = rc.im.col(q).data();
    fcol_ = freq.F.col(mode_).data();
    gcol_ = freq.G.col(mode_).data();
  }

  double operator()(Eigen::Index i) const {
    const double s = freq_.s(i);
    const double f = fcol_[i];
    const double g = gcol_[i];
    const double cr = re_[i];
    const double ci = im_[i];
    if (displacement_) {
      if (!velocity_col_) {
        return w_ * u_ * (f * cr + g * ci) + delta_ * (nu_ * w_ * f + s * g);
      }
      return s * u_ * (g * cr - f * ci) - delta_ * w_ * f;
    }
    if (!velocity_col_) return w_ * (f * (delta_ + cr * u_) + g * ci * u_);
    return s * (g * (delta_ + cr * u_) - f * ci * u_);
  }

 private:
  const FrequencyTables& freq_;
  double nu_;
  Eigen::Index n_;
  bool displacement_ = true;
  bool velocity_col_ = false;
  Eigen::Index mode_ = 0;
  double delta_ = 0.0;
  double u_ = 0.0;
  double w_ = 0.0;
  const double* re_ = nullptr;
  const double* im_ = nullptr;
  const double* fcol_ = nullptr;
  const double* gcol_ = nullptr;
};

struct PairResult {
  double contribution = 0.0;
  std::size_t inner_evaluations = 0;
  int depth = 0;
  std::size_t refinements = 0;
};

struct PairWorkspace {
  DyadicSimpson rule;
  std::vector<double> outer;
  std::vector<double> inner;
};

}  // namespace detail

/// Online quadrature for precomputed coefficients; shared by norm_fast and
/// horizon_sweep.
inline NormValue integrate_norm(const ModalSystem& modal, const NormProblem& problem,
                                const QuadratureSpec& spec, const OfflineTables& tables,
                                const RowCoefficients& rc, int threads = 1) {
  const auto t0 = detail::Clock::now();
  const FrequencyTables& freq = *tables.freq;
  const TimeTables& time = *tables.time;
  const int r = problem.r;
  const Eigen::Index n = modal.n();
  const auto n_t = static_cast<std::size_t>(time.tgrid.size());
  const auto cols = static_cast<std::size_t>(2 * n);
  const std::size_t pairs = static_cast<std::size_t>(2 * r) * cols;
  const Eigen::Index n_1 = freq.n_1;
  const double scale = 1.0 / (4.0 * std::numbers::pi * std::numbers::pi);

  std::vector<detail::PairResult> results(pairs);
  constexpr std::size_t block = 32;
  const std::size_t blocks_per_row = (cols + block - 1) / block;

  parallel_for_with_state(
      static_cast<std::size_t>(2 * r) * blocks_per_row, threads,
      [&] {
        return detail::PairWorkspace{DyadicSimpson(freq.inner, spec.b0, spec.tol, n_t),
                                     std::vector<double>(n_t), std::vector<double>(n_t)};
      },
      [&](detail::PairWorkspace& ws, std::size_t task) {
        const int q = static_cast<int>(task / blocks_per_row);
        const std::size_t k_begin = (task % blocks_per_row) * block;
        const std::size_t k_end = std::min(cols, k_begin + block);
        for (std::size_t kk = k_begin; kk < k_end; ++kk) {
          const detail::PairKernel R(modal, freq, rc, r, q, static_cast<Eigen::Index>(kk));

          // Outer segment, h = 2 cos(st) R.
          std::fill(ws.outer.begin(), ws.outer.end(), 0.0);
          for (Eigen::Index i = 0; i < n_1; ++i) {
            const double c = 2.0 * freq.outer_weights[static_cast<std::size_t>(i)] * R(i);
            const double* cs = time.cos_table.row(i).data();
            for (std::size_t l = 0; l < n_t; ++l) ws.outer[l] += c * cs[l];
          }

          // Inner segment on the dyadic grid.
          const AdaptiveStats st = ws.rule.integrate(
              [&](std::size_t idx, double* out) {
                const Eigen::Index i = n_1 + static_cast<Eigen::Index>(idx);
                const double c = 2.0 * R(i);
                const double* cs = time.cos_table.row(i).data();
                for (std::size_t l = 0; l < n_t; ++l) out[l] = c * cs[l];
              },
              ws.inner.data());

          double acc = 0.0;
          for (std::size_t l = 0; l < n_t; ++l) {
            const double integral = 2.0 * (ws.outer[l] + ws.inner[l]);
            acc += time.tgrid.weights(static_cast<Eigen::Index>(l)) * integral * integral;
          }
          detail::PairResult& out = results[static_cast<std::size_t>(q) * cols + kk];
          out.contribution = scale * acc;
          out.inner_evaluations = st.evaluations;
          out.depth = st.max_level;
          out.refinements = st.refinements;
        }
      });

  // Deterministic reduction: j-major, then k.
  NormValue nv;
  nv.gamma = rc.gamma;
  detail::CompensatedSum disp;
  detail::CompensatedSum vel;
  NormDiagnostics& d = nv.diagnostics;
  d.pairs = pairs;
  double inner_total = 0.0;
  for (std::size_t idx = 0; idx < pairs; ++idx) {
    const detail::PairResult& pr = results[idx];
    (idx / cols < static_cast<std::size_t>(r) ? disp : vel).add(pr.contribution);
    d.inner_nodes_max = std::max(d.inner_nodes_max, pr.inner_evaluations);
    d.adaptive_depth_max = std::max(d.adaptive_depth_max, pr.depth);
    d.refinements += pr.refinements;
    inner_total += static_cast<double>(pr.inner_evaluations);
    std::size_t bucket = 0;
    while ((std::size_t{2} << bucket) <= pr.inner_evaluations) ++bucket;
    if (d.inner_nodes_histogram.size() <= bucket) d.inner_nodes_histogram.resize(bucket + 1, 0);
    ++d.inner_nodes_histogram[bucket];
    d.kernel_evaluations += static_cast<std::size_t>(n_1) + pr.inner_evaluations;
  }
  d.inner_nodes_mean = pairs ? inner_total / static_cast<double>(pairs) : 0.0;
  d.time_weighted_terms = d.kernel_evaluations * n_t;
  nv.displacement_part = disp.value();
  nv.velocity_part = vel.value();
  nv.value = problem.p * nv.displacement_part + nv.velocity_part;
  d.integration_ms = detail::ms_since(t0);
  return nv;
}

inline void check_gamma(double gamma, const FrequencyTables& freq) {
  if (gamma > freq.gamma_max * (1.0 + 1e-12)) {
    throw OutOfRange("gamma = " + std::to_string(gamma) + " exceeds gamma_max = " +
                     std::to_string(freq.gamma_max) + " used for S_max");
  }
}

/// Norm for one viscosity from precomputed tables.
inline NormValue norm_fast(const ModalSystem& modal, const NormProblem& problem,
                           const QuadratureSpec& spec, const OfflineTables& tables,
                           double viscosity, int threads = 1) {
  problem.validate(modal.n());
  if (!(viscosity >= 0.0)) throw ConfigError("viscosity must be nonnegative");
  const double gamma = modal.gamma(viscosity);
  check_gamma(gamma, *tables.freq);
  const auto t0 = detail::Clock::now();
  const RowCoefficients rc = row_coefficients(modal, *tables.freq, problem.r, gamma, threads);
  const double coeff_ms = detail::ms_since(t0);
  NormValue nv = integrate_norm(modal, problem, spec, tables, rc, threads);
  nv.diagnostics.coefficients_ms = coeff_ms;
  nv.diagnostics.total_ms = detail::ms_since(t0);
  return nv;
}

inline QuadratureSpec with_resolved_gamma(const ModalSystem& modal, QuadratureSpec spec,
                                          std::span<const double> viscosities) {
  spec.gamma_max = resolve_gamma_max(modal, spec, viscosities);
  return spec;
}

/// One offline pass, then norm_fast per viscosity.
inline std::vector<NormValue> viscosity_sweep(const ModalSystem& modal, const NormProblem& problem,
                                              const QuadratureSpec& spec,
                                              std::span<const double> viscosities,
                                              int threads = 1) {
  const QuadratureSpec resolved = with_resolved_gamma(modal, spec, viscosities);
  const OfflineTables tables = offline(modal, problem, resolved, threads);
  std::vector<NormValue> out;
  out.reserve(viscosities.size());
  for (double v : viscosities) out.push_back(norm_fast(modal, problem, resolved, tables, v, threads));
  return out;
}

/// Norm for several horizons at one viscosity; frequency tables and the
/// rank-1 coefficients are built once, only the time tables change per T.
inline std::vector<NormValue> horizon_sweep(const ModalSystem& modal, NormProblem problem,
                                            const QuadratureSpec& spec, double viscosity,
                                            std::span<const double> horizons, int threads = 1) {
  const std::array<double, 1> vlist{viscosity};
  const QuadratureSpec resolved = with_resolved_gamma(modal, spec, vlist);
  for (double T : horizons) {
    problem.T = T;
    problem.validate(modal.n());
  }
  if (horizons.empty()) return {};
  const auto freq = build_frequency_tables(modal, resolved, threads);
  const double gamma = modal.gamma(viscosity);
  check_gamma(gamma, *freq);
  const auto t0 = detail::Clock::now();
  const RowCoefficients rc = row_coefficients(modal, *freq, problem.r, gamma, threads);
  const double coeff_ms = detail::ms_since(t0);

  std::vector<NormValue> out;
  out.reserve(horizons.size());
  for (double T : horizons) {
    problem.T = T;
    const auto t1 = detail::Clock::now();
    const OfflineTables tables{freq, build_time_tables(*freq, T, resolved.n_t)};
    NormValue nv = integrate_norm(modal, problem, resolved, tables, rc, threads);
    nv.diagnostics.coefficients_ms = out.empty() ? coeff_ms : 0.0;
    nv.diagnostics.total_ms = detail::ms_since(t1) + nv.diagnostics.coefficients_ms;
    out.push_back(std::move(nv));
  }
  return out;
}

}  // namespace vibnorm
