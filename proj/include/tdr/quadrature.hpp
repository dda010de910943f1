#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "tdr/error.hpp"

namespace tdr {

inline std::vector<double> trapezoid_weights(const std::vector<double>& grid) {
  const std::size_t m = grid.size();
  if (m < 2) fail(ErrorCategory::domain, "quadrature", "grid needs >= 2 points");
  std::vector<double> w(m, 0.0);
  for (std::size_t i = 0; i + 1 < m; ++i) {
    double h = grid[i + 1] - grid[i];
    if (h <= 0.0) fail(ErrorCategory::domain, "quadrature", "grid not strictly increasing");
    w[i] += 0.5 * h;
    w[i + 1] += 0.5 * h;
  }
  return w;
}

inline double trapezoid(const std::vector<double>& grid, const std::vector<double>& values) {
  if (grid.size() != values.size())
    fail(ErrorCategory::domain, "quadrature", "grid/value length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i)
    s += 0.5 * (grid[i + 1] - grid[i]) * (values[i] + values[i + 1]);
  return s;
}

// Gauss-Legendre nodes/weights on [-1, 1], Newton iteration from Chebyshev
// starting points. Cached per order.
struct GaussRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline const GaussRule& gauss_rule(int n) {
  static std::vector<GaussRule> cache(64);
  if (n < 1 || n > 63) fail(ErrorCategory::domain, "quadrature", "gauss order out of range");
  GaussRule& rule = cache[static_cast<std::size_t>(n)];
  if (!rule.nodes.empty()) return rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (x * p0 - p1) / (x * x - 1.0);
      double dx = p0 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    rule.nodes[i] = -x;
    rule.nodes[n - 1 - i] = x;
    double w = 2.0 / ((1.0 - x * x) * pp * pp);
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  return rule;
}

// Precomputed plan for integrals of the form
//   integral over [lo, hi] of  f_grid(x) * basis_j(x) dx,  j = 1..n_basis,
// where f_grid is the piecewise-linear interpolant of values sampled on
// `grid`, held constant beyond the first/last grid point. Integration is
// per-cell Gauss-Legendre, exact for polynomial basis functions up to
// degree 2*points_per_cell - 2 against the linear interpolant, so Legendre
// and B-spline bases integrate without discretization error. The plan
// depends only on the grid and basis and is reused across data vectors.
class QuadPlan {
 public:
  using BasisFn = std::function<void(double x, double* row)>;

  QuadPlan() = default;

  QuadPlan(const std::vector<double>& grid, double lo, double hi, int n_basis,
           const BasisFn& basis, int points_per_cell = 8) {
    if (grid.size() < 2) fail(ErrorCategory::domain, "quadrature", "grid needs >= 2 points");
    if (!(lo <= grid.front() && grid.back() <= hi))
      fail(ErrorCategory::domain, "quadrature", "grid not contained in [lo, hi]");
    n_basis_ = n_basis;
    const GaussRule& rule = gauss_rule(points_per_cell);
    const std::size_t m = grid.size();

    std::vector<double> edges;
    edges.reserve(m + 2);
    if (lo < grid.front()) edges.push_back(lo);
    for (double g : grid) edges.push_back(g);
    if (hi > grid.back()) edges.push_back(hi);

    std::size_t n_nodes = (edges.size() - 1) * static_cast<std::size_t>(points_per_cell);
    idx0_.reserve(n_nodes);
    idx1_.reserve(n_nodes);
    c0_.reserve(n_nodes);
    c1_.reserve(n_nodes);
    w_.reserve(n_nodes);

    std::vector<double> row(static_cast<std::size_t>(n_basis));
    std::vector<double> brows;
    brows.reserve(n_nodes * static_cast<std::size_t>(n_basis));

    std::size_t cell_lo_offset = (lo < grid.front()) ? 1 : 0;
    for (std::size_t c = 0; c + 1 < edges.size(); ++c) {
      double a = edges[c], b = edges[c + 1];
      if (b <= a) continue;
      // data cell index: clamp cells map onto the nearest grid point
      long j;
      if (c < cell_lo_offset)
        j = -1;  // left clamp
      else if (c - cell_lo_offset + 1 >= m)
        j = static_cast<long>(m) - 1;  // right clamp (value held at last point)
      else
        j = static_cast<long>(c - cell_lo_offset);
      for (int q = 0; q < points_per_cell; ++q) {
        double x = 0.5 * (a + b) + 0.5 * (b - a) * rule.nodes[static_cast<std::size_t>(q)];
        double wq = 0.5 * (b - a) * rule.weights[static_cast<std::size_t>(q)];
        if (j < 0) {
          idx0_.push_back(0);
          idx1_.push_back(0);
          c0_.push_back(1.0);
          c1_.push_back(0.0);
        } else if (j >= static_cast<long>(m) - 1) {
          idx0_.push_back(static_cast<int>(m) - 1);
          idx1_.push_back(static_cast<int>(m) - 1);
          c0_.push_back(1.0);
          c1_.push_back(0.0);
        } else {
          double t = (x - grid[static_cast<std::size_t>(j)]) /
                     (grid[static_cast<std::size_t>(j) + 1] - grid[static_cast<std::size_t>(j)]);
          idx0_.push_back(static_cast<int>(j));
          idx1_.push_back(static_cast<int>(j) + 1);
          c0_.push_back(1.0 - t);
          c1_.push_back(t);
        }
        w_.push_back(wq);
        basis(x, row.data());
        for (int k = 0; k < n_basis; ++k) brows.push_back(row[static_cast<std::size_t>(k)]);
      }
    }
    basis_ = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        brows.data(), static_cast<Eigen::Index>(w_.size()), n_basis);
    // fold the quadrature weight into the basis values once
    for (Eigen::Index r = 0; r < basis_.rows(); ++r)
      basis_.row(r) *= w_[static_cast<std::size_t>(r)];
  }

  int n_basis() const { return n_basis_; }

  // Returns the vector of integrals for one data vector (length = grid size).
  Eigen::VectorXd apply(const double* values) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(n_basis_);
    for (std::size_t r = 0; r < w_.size(); ++r) {
      double v = c0_[r] * values[static_cast<std::size_t>(idx0_[r])] +
                 c1_[r] * values[static_cast<std::size_t>(idx1_[r])];
      out.noalias() += v * basis_.row(static_cast<Eigen::Index>(r)).transpose();
    }
    return out;
  }

  Eigen::VectorXd apply(const std::vector<double>& values) const { return apply(values.data()); }

 private:
  int n_basis_ = 0;
  std::vector<int> idx0_, idx1_;
  std::vector<double> c0_, c1_, w_;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> basis_;
};

// Integral of the piecewise-linear interpolant itself over [lo, hi]
// (constant extension beyond the grid).
inline double integrate_pl(const std::vector<double>& grid, const std::vector<double>& values,
                           double lo, double hi) {
  if (grid.size() != values.size())
    fail(ErrorCategory::domain, "quadrature", "grid/value length mismatch");
  double s = trapezoid(grid, values);
  if (lo < grid.front()) s += (grid.front() - lo) * values.front();
  if (hi > grid.back()) s += (hi - grid.back()) * values.back();
  return s;
}

// Product-trapezoid integral of two surfaces sampled on the same grids:
// sum_ij wt_i wp_j A(i,j) B(i,j).
inline double integrate_surface_product(const std::vector<double>& t_grid,
                                        const std::vector<double>& p_grid,
                                        const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != static_cast<Eigen::Index>(t_grid.size()) ||
      a.cols() != static_cast<Eigen::Index>(p_grid.size()) || a.rows() != b.rows() ||
      a.cols() != b.cols())
    fail(ErrorCategory::domain, "quadrature", "surface dimensions mismatch");
  auto wt = trapezoid_weights(t_grid);
  auto wp = trapezoid_weights(p_grid);
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      s += wt[static_cast<std::size_t>(i)] * wp[static_cast<std::size_t>(j)] * a(i, j) * b(i, j);
  return s;
}

inline double integrate_curve_product(const std::vector<double>& grid,
                                      const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != static_cast<Eigen::Index>(grid.size()) || a.size() != b.size())
    fail(ErrorCategory::domain, "quadrature", "curve dimensions mismatch");
  auto w = trapezoid_weights(grid);
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    s += w[static_cast<std::size_t>(i)] * a(i) * b(i);
  return s;
}

}  // namespace tdr
