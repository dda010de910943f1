#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "tdr/error.hpp"
#include "tdr/quadrature.hpp"

namespace tdr {

// ---------------------------------------------------------------------------
// Shifted Legendre polynomials on [0, 1]
//
// P_r(p) = sum_k s_{r,k} p^k with
//   s_{r,k} = (-1)^{r-k} (r+k)! / ((k!)^2 (r-k)!).
// The coefficients are integers, exactly representable in doubles for the
// orders used here (guarded below). Orthogonality:
//   integral P_a(p) P_b(p) dp = delta_ab / (2a + 1).
// Projecting a quantile function on P_{r-1} yields the r-th L-moment.
// ---------------------------------------------------------------------------

inline constexpr int kMaxLegendreOrder = 20;

inline const std::vector<std::vector<double>>& legendre_coefficients() {
  static const std::vector<std::vector<double>> table = [] {
    std::vector<std::vector<double>> t(kMaxLegendreOrder + 1);
    for (int r = 0; r <= kMaxLegendreOrder; ++r) {
      t[static_cast<std::size_t>(r)].resize(static_cast<std::size_t>(r) + 1);
      // s_{r,0} = (-1)^r, then s_{r,k} = -s_{r,k-1} (r-k+1)(r+k) / k^2
      double s = (r % 2 == 0) ? 1.0 : -1.0;
      t[static_cast<std::size_t>(r)][0] = s;
      for (int k = 1; k <= r; ++k) {
        s = -s * static_cast<double>(r - k + 1) * static_cast<double>(r + k) /
            (static_cast<double>(k) * static_cast<double>(k));
        t[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)] = s;
      }
    }
    return t;
  }();
  return table;
}

inline double shifted_legendre(int r, double p) {
  if (r < 0 || r > kMaxLegendreOrder)
    fail(ErrorCategory::domain, "distribution", "legendre order out of range");
  if (p < 0.0 || p > 1.0)
    fail(ErrorCategory::domain, "distribution", "legendre argument outside [0,1]");
  const auto& c = legendre_coefficients()[static_cast<std::size_t>(r)];
  double v = 0.0;
  for (std::size_t k = c.size(); k-- > 0;) v = v * p + c[k];
  return v;
}

// Basis of shifted Legendre polynomials P_0..P_R with an evaluation grid.
class LegendreBasis {
 public:
  LegendreBasis(int max_order, std::vector<double> grid)
      : max_order_(max_order), grid_(std::move(grid)) {
    if (max_order_ < 0 || max_order_ > kMaxLegendreOrder)
      fail(ErrorCategory::domain, "distribution", "legendre max_order out of range");
    if (grid_.size() < 2)
      fail(ErrorCategory::domain, "distribution", "legendre grid needs >= 2 points");
  }

  explicit LegendreBasis(int max_order) : LegendreBasis(max_order, default_grid(1001)) {}

  static std::vector<double> default_grid(int n) {
    std::vector<double> g(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) g[static_cast<std::size_t>(i)] = static_cast<double>(i) / (n - 1);
    return g;
  }

  int max_order() const { return max_order_; }
  const std::vector<double>& grid() const { return grid_; }

  double eval(int r, double p) const { return shifted_legendre(r, p); }

  // Inner product of P_a and P_b over [0,1] by per-cell Gauss quadrature on
  // the stored grid; exact for polynomials, so it reproduces
  // delta_ab / (2a+1) to machine precision.
  double grid_inner_product(int a, int b) const {
    int npc = std::min(32, (a + b) / 2 + 2);
    const GaussRule& rule = gauss_rule(npc);
    double s = 0.0;
    for (std::size_t c = 0; c + 1 < grid_.size(); ++c) {
      double x0 = grid_[c], x1 = grid_[c + 1];
      for (int q = 0; q < npc; ++q) {
        double x = 0.5 * (x0 + x1) + 0.5 * (x1 - x0) * rule.nodes[static_cast<std::size_t>(q)];
        s += 0.5 * (x1 - x0) * rule.weights[static_cast<std::size_t>(q)] *
             shifted_legendre(a, x) * shifted_legendre(b, x);
      }
    }
    return s;
  }

 private:
  int max_order_;
  std::vector<double> grid_;
};

// ---------------------------------------------------------------------------
// Empirical quantiles (Parzen interpolation of order statistics)
// ---------------------------------------------------------------------------

struct QuantileFunction {
  std::vector<double> p_grid;
  std::vector<double> values;
  std::size_t sample_size = 0;
  // sample extremes: the Parzen estimator equals these at the ends of [0,1],
  // so quadrature over the closed interval can use them as endpoint values
  double min_value = std::numeric_limits<double>::quiet_NaN();
  double max_value = std::numeric_limits<double>::quiet_NaN();
};

// Q(p) = (1-w) X_(j) + w X_(j+1) with j = floor((n+1)p), w the fractional
// part. Positions below 1 clamp to X_(1), positions at or above n clamp to
// X_(n). `sorted` must be in nondecreasing order.
inline double empirical_quantile(std::span<const double> sorted, double p) {
  const std::size_t n = sorted.size();
  if (n == 0) fail(ErrorCategory::domain, "distribution", "empty sample");
  if (!(p > 0.0 && p < 1.0))
    fail(ErrorCategory::domain, "distribution", "quantile level must be in (0,1)");
  double g = (static_cast<double>(n) + 1.0) * p;
  double j = std::floor(g);
  double w = g - j;
  if (j < 1.0) return sorted[0];
  if (j >= static_cast<double>(n)) return sorted[n - 1];
  std::size_t idx = static_cast<std::size_t>(j);
  return (1.0 - w) * sorted[idx - 1] + w * sorted[idx];
}

inline QuantileFunction quantile_function(std::vector<double> sample,
                                          const std::vector<double>& p_grid) {
  if (sample.empty()) fail(ErrorCategory::domain, "distribution", "empty sample");
  std::sort(sample.begin(), sample.end());
  QuantileFunction q;
  q.p_grid = p_grid;
  q.sample_size = sample.size();
  q.min_value = sample.front();
  q.max_value = sample.back();
  q.values.reserve(p_grid.size());
  for (double p : p_grid) q.values.push_back(empirical_quantile(sample, p));
  return q;
}

// Equally spaced interior levels i/(n+1), i = 1..n. n = 99 gives the
// default model-fitting grid 0.01..0.99.
inline std::vector<double> quantile_levels(int n) {
  if (n < 1) fail(ErrorCategory::domain, "distribution", "need >= 1 level");
  std::vector<double> g(static_cast<std::size_t>(n));
  for (int i = 1; i <= n; ++i)
    g[static_cast<std::size_t>(i) - 1] = static_cast<double>(i) / (n + 1);
  return g;
}

// ---------------------------------------------------------------------------
// Sample L-moments
// ---------------------------------------------------------------------------

// Unbiased sample L-moments, orders 1..max_order, from a sorted sample.
// Computed through the unbiased probability-weighted moments
//   b_k = n^-1 sum_j [(j-1)...(j-k)] / [(n-1)...(n-k)] X_(j),
// combined with the shifted Legendre coefficients:
//   l_r = sum_{k=0}^{r-1} s_{r-1,k} b_k,
// which is algebraically identical to the U-statistic average over all
// size-r subsamples.
inline std::vector<double> l_moments_sorted(std::span<const double> sorted, int max_order) {
  const std::size_t n = sorted.size();
  if (max_order < 1) fail(ErrorCategory::domain, "distribution", "order must be >= 1");
  if (n < static_cast<std::size_t>(max_order))
    fail(ErrorCategory::domain, "distribution",
         "sample size " + std::to_string(n) + " < order " + std::to_string(max_order));
  std::vector<double> b(static_cast<std::size_t>(max_order), 0.0);
  for (std::size_t j = 1; j <= n; ++j) {
    double prod = 1.0;
    b[0] += sorted[j - 1];
    for (int k = 1; k < max_order; ++k) {
      // (j-1)(j-2)...(j-k) vanishes once j <= k, and stays zero after
      if (j <= static_cast<std::size_t>(k)) break;
      prod *= static_cast<double>(j - static_cast<std::size_t>(k)) /
              static_cast<double>(n - static_cast<std::size_t>(k));
      b[static_cast<std::size_t>(k)] += prod * sorted[j - 1];
    }
  }
  for (double& bk : b) bk /= static_cast<double>(n);
  const auto& coef = legendre_coefficients();
  std::vector<double> l(static_cast<std::size_t>(max_order), 0.0);
  for (int r = 1; r <= max_order; ++r) {
    double s = 0.0;
    for (int k = 0; k < r; ++k)
      s += coef[static_cast<std::size_t>(r) - 1][static_cast<std::size_t>(k)] *
           b[static_cast<std::size_t>(k)];
    l[static_cast<std::size_t>(r) - 1] = s;
  }
  return l;
}

inline double l_moment_direct(std::vector<double> sample, int order) {
  if (order < 1) fail(ErrorCategory::domain, "distribution", "order must be >= 1");
  std::sort(sample.begin(), sample.end());
  return l_moments_sorted(sample, order)[static_cast<std::size_t>(order) - 1];
}

// L-moment through the quantile-function route:
//   l_r = integral over [0,1] of Q(p) P_{r-1}(p) dp,
// trapezoidal rule on the stored levels, extended to the closed interval
// with the sample extremes as endpoint values (the Parzen estimator equals
// them there). Falls back to constant extension when extremes are unknown.
inline double l_moment_via_quantile(const QuantileFunction& q, const LegendreBasis& basis,
                                    int order) {
  if (order < 1 || order > basis.max_order() + 1)
    fail(ErrorCategory::domain, "distribution", "order outside basis range");
  if (q.p_grid.size() < 11)
    fail(ErrorCategory::domain, "distribution",
         "quantile grid too coarse for quadrature (need >= 11 levels)");
  std::vector<double> grid;
  std::vector<double> vals;
  grid.reserve(q.p_grid.size() + 2);
  vals.reserve(q.p_grid.size() + 2);
  if (q.p_grid.front() > 0.0) {
    double lo = std::isnan(q.min_value) ? q.values.front() : q.min_value;
    grid.push_back(0.0);
    vals.push_back(lo * shifted_legendre(order - 1, 0.0));
  }
  for (std::size_t i = 0; i < q.p_grid.size(); ++i) {
    grid.push_back(q.p_grid[i]);
    vals.push_back(q.values[i] * shifted_legendre(order - 1, q.p_grid[i]));
  }
  if (q.p_grid.back() < 1.0) {
    double hi = std::isnan(q.max_value) ? q.values.back() : q.max_value;
    grid.push_back(1.0);
    vals.push_back(hi * shifted_legendre(order - 1, 1.0));
  }
  return trapezoid(grid, vals);
}

}  // namespace tdr
