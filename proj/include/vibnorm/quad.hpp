#pragma once

// Quadrature primitives: Gauss-Legendre in time, composite Simpson on the
// outer frequency segment and memoized adaptive Simpson on a dyadic grid.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "vibnorm/error.hpp"

namespace vibnorm {

struct QuadratureSpec {
  double tol = 1e-5;     ///< adaptive Simpson tolerance
  double tol_s = 0.05;   ///< resolvent-norm target defining S_max
  int n_t = 20;          ///< Gauss-Legendre nodes in t
  int n_1 = 599;         ///< Simpson nodes on [-S_max, -S1], odd
  double S1 = 0.0;       ///< split point, absolute
  int b0 = 8;            ///< initial dyadic level on [-S1, 0]
  int b_max = 12;        ///< finest dyadic level
  std::optional<double> gamma_max;  ///< unset: derived from the viscosities

  std::size_t n_2() const { return std::size_t{1} << b_max; }

  void validate() const {
    if (!(tol > 0.0)) throw ConfigError("tol must be positive");
    if (!(tol_s > 0.0)) throw ConfigError("tol_s must be positive");
    if (n_t < 1) throw ConfigError("n_t must be at least 1");
    if (n_1 < 3 || n_1 % 2 == 0) throw ConfigError("n_1 must be odd and at least 3");
    if (!(S1 > 0.0)) throw ConfigError("S1 must be positive");
    if (b0 < 1 || b_max < b0) throw ConfigError("need 1 <= b0 <= b_max");
    if (b_max > 24) throw ConfigError("b_max above 24 is not supported");
    if (gamma_max && !(*gamma_max >= 0.0)) throw ConfigError("gamma_max must be nonnegative");
  }
};

/// Frequency radius beyond which |(is - A^T)^-1| <= eps for every gamma <= gamma_max.
inline double s_max(double omega_max, double nu, double gamma_max, double eps) {
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  const double c = (1.0 + gamma_max * eps) / eps;
  return omega_max + std::sqrt(nu * omega_max * omega_max + c * c);
}

struct TGrid {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;

  Eigen::Index size() const noexcept { return nodes.size(); }
};

/// n-point Gauss-Legendre rule mapped to [0, T].
inline TGrid gauss_legendre(double T, int n) {
  if (!(T > 0.0)) throw ConfigError("T must be positive");
  if (n < 1) throw ConfigError("n_t must be at least 1");
  TGrid grid;
  grid.nodes.resize(n);
  grid.weights.resize(n);
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      // Three-term recurrence for P_n(x) and its derivative.
      double p0 = 1.0;
      double p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      const double pn = n == 1 ? x : p1;
      const double pm = n == 1 ? 1.0 : p0;
      dp = n * (x * pn - pm) / (x * x - 1.0);
      const double dx = pn / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    if (n == 1) {
      x = 0.0;
      dp = 1.0;
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    // x is the (i+1)-th largest root; store ascending.
    grid.nodes(n - 1 - i) = 0.5 * T * (1.0 + x);
    grid.nodes(i) = 0.5 * T * (1.0 - x);
    grid.weights(n - 1 - i) = 0.5 * T * w;
    grid.weights(i) = 0.5 * T * w;
  }
  return grid;
}

/// Composite Simpson weights for `count` equidistant nodes (count odd, >= 3).
inline std::vector<double> simpson_weights(std::size_t count, double step) {
  if (count < 3 || count % 2 == 0) {
    throw ContractViolation("composite Simpson needs an odd node count >= 3");
  }
  std::vector<double> w(count);
  const double h3 = step / 3.0;
  for (std::size_t i = 0; i < count; ++i) {
    w[i] = (i == 0 || i + 1 == count) ? h3 : (i % 2 == 1 ? 4.0 * h3 : 2.0 * h3);
  }
  return w;
}

inline double simpson_fixed(std::span<const double> values, double step) {
  const std::vector<double> w = simpson_weights(values.size(), step);
  double sum = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) sum += w[i] * values[i];
  return sum;
}

/// Equidistant grid of 2^b_max intervals on [left, right]; every coarser
/// dyadic level is a subset of it.
struct DyadicGrid {
  double left = 0.0;
  double right = 1.0;
  int b_max = 1;

  std::size_t intervals() const { return std::size_t{1} << b_max; }
  std::size_t size() const { return intervals() + 1; }
  double step() const { return (right - left) / static_cast<double>(intervals()); }
  double node(std::size_t i) const {
    return i + 1 == size() ? right : left + static_cast<double>(i) * step();
  }
};

struct AdaptiveStats {
  std::size_t evaluations = 0;  ///< distinct grid nodes evaluated
  int max_level = 0;            ///< finest panel level used
  std::size_t refinements = 0;  ///< panel splits
};

/// Adaptive Simpson on a DyadicGrid for integrands with `dim` components
/// (one per time node in the norm engine). A panel is refined while
///   max_c |S_half - S_coarse| > 15 * tol * (panel length / grid length);
/// accepted panels contribute S_half, and at level b_max the coarse value. Node
/// values are memoized, so each grid index is evaluated at most once per call.
class DyadicSimpson {
 public:
  DyadicSimpson(DyadicGrid grid, int b0, double tol, std::size_t dim)
      : grid_(grid), b0_(b0), tol_(tol), dim_(dim) {
    if (b0 < 1 || grid.b_max < b0) throw ConfigError("need 1 <= b0 <= b_max");
    if (!(tol > 0.0)) throw ConfigError("tol must be positive");
    if (dim == 0) throw ConfigError("integrand dimension must be positive");
    cache_.assign(grid_.size() * dim_, 0.0);
    stamp_.assign(grid_.size(), 0);
  }

  const DyadicGrid& grid() const noexcept { return grid_; }
  std::size_t dim() const noexcept { return dim_; }

  /// eval(index, double* out) fills dim values at grid node `index`; result
  /// receives dim integrals.
  template <class Eval>
  AdaptiveStats integrate(Eval&& eval, double* result) {
    if (++generation_ == 0) {  // wrapped: reset stamps
      std::fill(stamp_.begin(), stamp_.end(), 0u);
      generation_ = 1;
    }
    AdaptiveStats stats;
    std::fill(result, result + dim_, 0.0);

    const int b_max = grid_.b_max;
    const double h = grid_.step();
    const double total = grid_.right - grid_.left;
    auto value = [&](std::size_t i) -> const double* {
      double* slot = cache_.data() + i * dim_;
      if (stamp_[i] != generation_) {
        eval(i, slot);
        stamp_[i] = generation_;
        ++stats.evaluations;
      }
      return slot;
    };
    // Simpson over [i0, i0 + 2w] (in grid indices) into out.
    auto simpson = [&](std::size_t i0, std::size_t w, double* out) {
      const double* fa = value(i0);
      const double* fm = value(i0 + w);
      const double* fb = value(i0 + 2 * w);
      const double c = static_cast<double>(2 * w) * h / 6.0;
      for (std::size_t d = 0; d < dim_; ++d) out[d] = c * (fa[d] + 4.0 * fm[d] + fb[d]);
    };

    // Depth-first, left child first, so panels are accepted left to right.
    stack_.clear();
    coarse_.clear();
    const std::size_t w0 = std::size_t{1} << (b_max - b0_);
    const std::size_t panels = std::size_t{1} << (b0_ - 1);
    coarse_.resize(panels * dim_);
    for (std::size_t p = panels; p-- > 0;) {
      simpson(2 * w0 * p, w0, coarse_.data() + p * dim_);
      stack_.push_back({2 * w0 * p, b0_, p * dim_});
    }

    std::vector<double> left(dim_), right(dim_);
    while (!stack_.empty()) {
      const Panel panel = stack_.back();
      stack_.pop_back();
      const std::size_t w = std::size_t{1} << (b_max - panel.level);
      const double* coarse = coarse_.data() + panel.coarse;
      stats.max_level = std::max(stats.max_level, panel.level);
      if (panel.level == b_max) {
        for (std::size_t d = 0; d < dim_; ++d) result[d] += coarse[d];
        continue;
      }
      const std::size_t hw = w / 2;
      simpson(panel.start, hw, left.data());
      simpson(panel.start + w, hw, right.data());
      double err = 0.0;
      for (std::size_t d = 0; d < dim_; ++d) {
        err = std::max(err, std::abs(left[d] + right[d] - coarse[d]));
      }
      const double panel_len = static_cast<double>(2 * w) * h;
      if (err <= 15.0 * tol_ * panel_len / total) {
        for (std::size_t d = 0; d < dim_; ++d) result[d] += left[d] + right[d];
        continue;
      }
      ++stats.refinements;
      const std::size_t off = coarse_.size();
      coarse_.insert(coarse_.end(), left.begin(), left.end());
      coarse_.insert(coarse_.end(), right.begin(), right.end());
      stack_.push_back({panel.start + w, panel.level + 1, off + dim_});
      stack_.push_back({panel.start, panel.level + 1, off});
    }
    return stats;
  }

 private:
  struct Panel {
    std::size_t start;
    int level;
    std::size_t coarse;  ///< offset of the panel's coarse estimate in coarse_
  };

  DyadicGrid grid_;
  int b0_;
  double tol_;
  std::size_t dim_;
  std::vector<double> cache_;
  std::vector<std::uint32_t> stamp_;
  std::uint32_t generation_ = 0;
  std::vector<Panel> stack_;
  std::vector<double> coarse_;
};

struct AdaptiveResult {
  double value = 0.0;
  AdaptiveStats stats;
};

/// Scalar adaptive Simpson; evaluator maps a grid index to the integrand.
template <class Eval>
AdaptiveResult simpson_adaptive(Eval&& evaluator, const DyadicGrid& grid, double tol, int b0) {
  DyadicSimpson rule(grid, b0, tol, 1);
  AdaptiveResult res;
  res.stats = rule.integrate([&](std::size_t i, double* out) { *out = evaluator(i); }, &res.value);
  return res;
}

}  // namespace vibnorm
