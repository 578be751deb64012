#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "vibnorm/engine.hpp"
#include "vibnorm/model.hpp"
#include "vibnorm/oracle.hpp"

using namespace vibnorm;

namespace {

ModalSystem ladder(int n, int pos) { return modal_transform(build_ladder(n, pos)); }

// Tight settings for small systems; S1 covers the whole resonant band.
QuadratureSpec tight_spec(const ModalSystem& m, double gamma_max) {
  QuadratureSpec s;
  s.tol = 1e-7;
  s.tol_s = 0.002;
  s.n_t = 40;
  s.n_1 = 100001;
  s.S1 = 2.0 * m.omega_max();
  s.b0 = 6;
  s.b_max = 14;
  s.gamma_max = gamma_max;
  return s;
}

// tol = 1e-5 as in the large sweeps. One extra dyadic level resolves the
// undamped peaks (half-width nu*omega/2) of the v = 0 cases.
QuadratureSpec production_spec(const ModalSystem& m, std::optional<double> gamma_max = std::nullopt) {
  QuadratureSpec s;
  s.tol = 1e-5;
  s.tol_s = 0.05;
  s.n_t = 20;
  s.n_1 = 599;
  s.S1 = 2.0 * m.omega_max();
  s.b0 = 8;
  s.b_max = 13;
  s.gamma_max = gamma_max;
  return s;
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

}  // namespace

TEST(NormFast, MatchesReferenceOnFourMasses) {
  const ModalSystem m = modal_transform(build_example1(4, 1));
  const NormProblem prob{0.5, 1, 1.0};
  const QuadratureSpec spec = tight_spec(m, m.gamma(5.0));
  const OfflineTables tab = offline(m, prob, spec);
  const NormValue nv = norm_fast(m, prob, spec, tab, 5.0);
  EXPECT_LE(rel(nv.value, norm_reference(m, prob, 5.0)), 1e-4);
  EXPECT_GT(nv.value, 0.0);
  EXPECT_DOUBLE_EQ(nv.gamma, m.gamma(5.0));
}

TEST(NormFast, AffineInP) {
  const ModalSystem m = ladder(10, 4);
  const QuadratureSpec spec = production_spec(m, m.gamma(50.0));
  NormProblem prob{0.5, 2, 2.0};
  const OfflineTables tab = offline(m, prob, spec);
  const double mid = norm_fast(m, prob, spec, tab, 7.0).value;
  prob.p = 0.0;
  const double lo = norm_fast(m, prob, spec, tab, 7.0).value;
  prob.p = 1.0;
  const double hi = norm_fast(m, prob, spec, tab, 7.0).value;
  EXPECT_LE(rel(mid, 0.5 * (lo + hi)), 1e-12);
}

TEST(NormFast, ShortHorizonLimit) {
  const ModalSystem m = ladder(8, 3);
  const QuadratureSpec spec = tight_spec(m, m.gamma(5.0));
  const NormProblem prob{0.5, 2, 1e-8};
  const OfflineTables tab = offline(m, prob, spec);
  const double v = norm_fast(m, prob, spec, tab, 5.0).value;
  EXPECT_LE(rel(v, 1e-8 * 2 * 1.5), 1e-2);
}

TEST(NormFast, OracleEquivalenceProductionTolerance) {
  for (int n : {4, 10}) {
    for (int pos : {1, n}) {
      const ModalSystem m = ladder(n, pos);
      const std::array<double, 3> visc{0.0, 1.0, 50.0};
      const QuadratureSpec spec = with_resolved_gamma(m, production_spec(m), visc);
      for (int r : {1, 2}) {
        for (double T : {0.5, 2.0}) {
          for (double p : {0.0, 0.5, 1.0}) {
            const NormProblem prob{p, r, T};
            const std::vector<NormValue> fast = viscosity_sweep(m, prob, spec, visc);
            for (std::size_t i = 0; i < visc.size(); ++i) {
              const double ref = norm_reference(m, prob, visc[i]);
              EXPECT_LE(rel(fast[i].value, ref), 1e-3)
                  << "n=" << n << " pos=" << pos << " r=" << r << " T=" << T << " p=" << p
                  << " v=" << visc[i];
            }
          }
        }
      }
    }
  }
}

TEST(NormFast, OutOfRangeViscosity) {
  const ModalSystem m = ladder(4, 1);
  const NormProblem prob{0.5, 1, 1.0};
  const QuadratureSpec spec = production_spec(m, m.gamma(10.0));
  const OfflineTables tab = offline(m, prob, spec);
  EXPECT_NO_THROW(norm_fast(m, prob, spec, tab, 10.0));
  EXPECT_THROW(norm_fast(m, prob, spec, tab, 10.5), OutOfRange);
  EXPECT_THROW(norm_fast(m, prob, spec, tab, -1.0), ConfigError);
}

TEST(Offline, SplitPointMustBeInsideCutoff) {
  const ModalSystem m = ladder(4, 1);
  QuadratureSpec spec = production_spec(m, m.gamma(1.0));
  spec.S1 = 1e6;
  EXPECT_THROW(offline(m, NormProblem{}, spec), ConfigError);
  spec = production_spec(m, m.gamma(1.0));
  spec.gamma_max.reset();
  EXPECT_THROW(offline(m, NormProblem{}, spec), ConfigError);
  EXPECT_THROW(offline(m, NormProblem{0.5, 5, 1.0}, production_spec(m, 1.0)), ConfigError);
}

TEST(Offline, TablesAreHorizonIndependent) {
  const ModalSystem m = ladder(6, 2);
  const QuadratureSpec spec = production_spec(m, m.gamma(20.0));
  const OfflineTables a = offline(m, NormProblem{0.5, 2, 0.5}, spec);
  const OfflineTables b = offline(m, NormProblem{0.5, 2, 3.0}, spec);
  EXPECT_EQ(a.freq->s, b.freq->s);
  EXPECT_EQ(a.F_table(), b.F_table());
  EXPECT_EQ(a.G_table(), b.G_table());
  EXPECT_EQ(a.f_vec(), b.f_vec());
  EXPECT_EQ(a.g_vec(), b.g_vec());
  EXPECT_EQ(a.freq->n_s(), spec.n_1 + static_cast<Eigen::Index>(spec.n_2()) + 1);
  EXPECT_DOUBLE_EQ(a.s_max(), s_max(m.omega_max(), m.nu, m.gamma(20.0), spec.tol_s));

  // Last node of each segment and the shared split point.
  EXPECT_DOUBLE_EQ(a.freq->s(0), -a.s_max());
  EXPECT_DOUBLE_EQ(a.freq->s(spec.n_1 - 1), -spec.S1);
  EXPECT_DOUBLE_EQ(a.freq->s(spec.n_1), -spec.S1);
  EXPECT_DOUBLE_EQ(a.freq->s(a.freq->n_s() - 1), 0.0);

  // Spot-check against the kernel module and the cos table.
  for (Eigen::Index i = 0; i < a.freq->n_s(); i += 97) {
    const FrequencyKernel k = frequency_kernel(m, a.freq->s(i));
    EXPECT_EQ(a.F_table().row(i).transpose(), k.fdiag);
    EXPECT_EQ(a.G_table().row(i).transpose(), k.gdiag);
    EXPECT_NEAR(a.f_vec()(i), k.fscalar, 1e-14 * std::abs(k.fscalar) + 1e-300);
    for (Eigen::Index l = 0; l < a.tgrid().size(); ++l) {
      EXPECT_EQ(b.cos_table()(i, l), std::cos(a.freq->s(i) * b.tgrid().nodes(l)));
    }
  }
  const Eigen::Index zero_row = a.freq->n_s() - 1;
  for (Eigen::Index l = 0; l < a.tgrid().size(); ++l) EXPECT_EQ(a.cos_table()(zero_row, l), 1.0);
}

TEST(Offline, LargeViscosityCutoff) {
  const ModalSystem m = ladder(40, 8);
  // gamma_max = 1500, tol_s = 0.05.
  const double got = s_max(m.omega_max(), m.nu, 1500.0, 0.05);
  const double w = m.omega_max();
  EXPECT_NEAR(got, w + std::sqrt(m.nu * w * w + 76.0 * 76.0 / 0.0025), 1e-9 * got);
}

TEST(ViscositySweep, IdenticalToIsolatedCalls) {
  const ModalSystem m = ladder(10, 2);
  const NormProblem prob{0.5, 2, 1.0};
  const std::vector<double> visc{0.5, 3.0, 12.0, 40.0};
  const QuadratureSpec spec = with_resolved_gamma(m, production_spec(m), visc);
  const std::vector<NormValue> sweep = viscosity_sweep(m, prob, spec, visc);
  const OfflineTables tab = offline(m, prob, spec);
  for (std::size_t i = 0; i < visc.size(); ++i) {
    EXPECT_EQ(sweep[i].value, norm_fast(m, prob, spec, tab, visc[i]).value);
  }
  // Batch composition does not matter once gamma_max is fixed.
  const std::vector<double> sub{visc[2]};
  EXPECT_EQ(viscosity_sweep(m, prob, spec, sub)[0].value, sweep[2].value);
}

TEST(ViscositySweep, SingletonDerivesGammaMax) {
  const ModalSystem m = ladder(4, 1);
  const NormProblem prob{0.5, 1, 1.0};
  const QuadratureSpec spec = production_spec(m);
  const std::vector<double> one{5.0};
  const NormValue a = viscosity_sweep(m, prob, spec, one)[0];
  const QuadratureSpec resolved = with_resolved_gamma(m, spec, one);
  EXPECT_DOUBLE_EQ(*resolved.gamma_max, m.gamma(5.0));
  EXPECT_EQ(a.value, norm_fast(m, prob, resolved, offline(m, prob, resolved), 5.0).value);
}

TEST(HorizonSweep, MatchesFreshEvaluationAndIsMonotone) {
  const ModalSystem m = ladder(10, 3);
  const NormProblem prob{0.5, 2, 1.0};
  const QuadratureSpec spec = production_spec(m, m.gamma(8.0));
  const std::vector<double> hs{0.1, 0.3, 1.0, 3.0, 10.0};
  const std::vector<NormValue> sweep = horizon_sweep(m, prob, spec, 8.0, hs);
  ASSERT_EQ(sweep.size(), hs.size());
  for (std::size_t i = 0; i < hs.size(); ++i) {
    NormProblem one = prob;
    one.T = hs[i];
    const double fresh = norm_fast(m, one, spec, offline(m, one, spec), 8.0).value;
    EXPECT_LE(rel(sweep[i].value, fresh), 1e-12);
    EXPECT_GE(sweep[i].value, 0.0);
    if (i) EXPECT_GT(sweep[i].value, sweep[i - 1].value);
  }
  const std::array<double, 1> single{2.0};
  NormProblem two = prob;
  two.T = 2.0;
  EXPECT_EQ(horizon_sweep(m, prob, spec, 8.0, single)[0].value,
            norm_fast(m, two, spec, offline(m, two, spec), 8.0).value);
}

TEST(HorizonSweep, LargeHorizonApproachesInfiniteHorizon) {
  const ModalSystem m = modal_transform(build_example1(4, 1));
  const NormProblem prob{0.5, 1, 1.0};
  // T = 1000 needs an s-step well below 2 pi / T and enough t-nodes for the
  // slow decay of the lightly damped modes.
  QuadratureSpec spec;
  spec.tol = 1e-10;
  spec.tol_s = 0.01;
  spec.n_t = 1000;
  spec.n_1 = 100001;
  spec.S1 = 2.0 * m.omega_max();
  spec.b0 = 6;
  spec.b_max = 16;
  const std::array<double, 1> hs{1000.0};
  const double fast = horizon_sweep(m, prob, spec, 5.0, hs)[0].value;
  const StateSpace ss = state_space(m, prob, 5.0);
  const double inf = lyap(ss.A, ss.Z()).trace();
  EXPECT_LE(rel(fast, inf), 1e-6);
}

TEST(Determinism, FixedThreadCountIsBitwiseStable) {
  const ModalSystem m = ladder(12, 5);
  const NormProblem prob{0.5, 2, 2.0};
  const QuadratureSpec spec = production_spec(m, m.gamma(30.0));
  for (int threads : {1, 3}) {
    const OfflineTables tab = offline(m, prob, spec, threads);
    const double a = norm_fast(m, prob, spec, tab, 30.0, threads).value;
    const double b = norm_fast(m, prob, spec, tab, 30.0, threads).value;
    EXPECT_EQ(a, b) << threads;
  }
  // Per-pair results do not depend on the partition; only the fixed-order
  // reduction touches them.
  const OfflineTables t1 = offline(m, prob, spec, 1);
  const OfflineTables t4 = offline(m, prob, spec, 4);
  EXPECT_EQ(norm_fast(m, prob, spec, t1, 30.0, 1).value, norm_fast(m, prob, spec, t4, 30.0, 4).value);
}

TEST(Diagnostics, CountersAreConsistent) {
  const ModalSystem m = ladder(10, 2);
  const NormProblem prob{0.5, 3, 1.0};
  const QuadratureSpec spec = production_spec(m, m.gamma(5.0));
  const OfflineTables tab = offline(m, prob, spec);
  const NormDiagnostics d = norm_fast(m, prob, spec, tab, 5.0).diagnostics;
  EXPECT_EQ(d.pairs, std::size_t{2 * 3 * 2 * 10});
  EXPECT_LE(d.inner_nodes_max, spec.n_2() + 1);
  EXPECT_GE(d.inner_nodes_max, (std::size_t{1} << (spec.b0 + 1)) + 1);
  EXPECT_LE(d.adaptive_depth_max, spec.b_max);
  EXPECT_GE(d.adaptive_depth_max, spec.b0);
  std::size_t hist = 0;
  for (std::size_t c : d.inner_nodes_histogram) hist += c;
  EXPECT_EQ(hist, d.pairs);
  EXPECT_EQ(d.time_weighted_terms, d.kernel_evaluations * static_cast<std::size_t>(spec.n_t));
  EXPECT_GE(d.kernel_evaluations, d.pairs * static_cast<std::size_t>(spec.n_1));
  EXPECT_GE(d.total_ms, d.integration_ms);
}

TEST(NormFast, ZeroViscosityUsesInternalDampingOnly) {
  const ModalSystem m = ladder(4, 2);
  const NormProblem prob{1.0, 2, 0.5};
  const std::array<double, 1> visc{0.0};
  QuadratureSpec spec = production_spec(m);
  const NormValue nv = viscosity_sweep(m, prob, spec, visc)[0];
  EXPECT_EQ(nv.gamma, 0.0);
  EXPECT_LE(rel(nv.value, norm_reference(m, prob, 0.0)), 1e-3);
}
