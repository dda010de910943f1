#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tdr/distribution.hpp"
#include "tdr/error.hpp"
#include "tdr/quadrature.hpp"
#include "tdr/tdobject.hpp"

namespace tdr {

enum class BasisKind { bspline_cubic, legendre };

struct BasisSpec {
  BasisKind kind = BasisKind::bspline_cubic;
  int size = 12;
  double lo = 0.0;
  double hi = 1.0;

  static BasisSpec bspline(int size, double lo, double hi) {
    return BasisSpec{BasisKind::bspline_cubic, size, lo, hi};
  }
  static BasisSpec legendre_basis(int size, double lo, double hi) {
    return BasisSpec{BasisKind::legendre, size, lo, hi};
  }
  void validate() const {
    if (hi <= lo) fail(ErrorCategory::domain, "basis", "degenerate domain");
    if (kind == BasisKind::bspline_cubic && size < 4)
      fail(ErrorCategory::domain, "basis", "cubic B-spline basis needs size >= 4");
    if (kind == BasisKind::legendre && (size < 1 || size > kMaxLegendreOrder))
      fail(ErrorCategory::domain, "basis", "legendre basis size out of range");
  }
};

namespace detail {

// Clamped uniform knot vector for `size` cubic B-splines on [lo, hi].
inline std::vector<double> bspline_knots(int size, double lo, double hi) {
  const int degree = 3;
  std::vector<double> knots;
  knots.reserve(static_cast<std::size_t>(size + degree + 1));
  const int spans = size - degree;
  for (int i = 0; i <= degree; ++i) knots.push_back(lo);
  for (int i = 1; i < spans; ++i)
    knots.push_back(lo + (hi - lo) * static_cast<double>(i) / spans);
  for (int i = 0; i <= degree; ++i) knots.push_back(hi);
  return knots;
}

// Cox-de Boor: all nonzero cubic basis values at x, written into row[0..size).
inline void bspline_row(const std::vector<double>& knots, int size, double x, double* row) {
  const int degree = 3;
  std::fill(row, row + size, 0.0);
  double lo = knots.front(), hi = knots.back();
  if (x < lo || x > hi) fail(ErrorCategory::domain, "basis", "point outside basis domain");
  // span index m: knots[m] <= x < knots[m+1], right-clamped at hi
  int m = degree;
  int hi_span = size - 1;
  if (x >= hi) {
    m = hi_span;
  } else {
    while (m < hi_span && x >= knots[static_cast<std::size_t>(m) + 1]) ++m;
  }
  double nvals[4];
  nvals[0] = 1.0;
  double left[4], right[4];
  for (int j = 1; j <= degree; ++j) {
    left[j] = x - knots[static_cast<std::size_t>(m + 1 - j)];
    right[j] = knots[static_cast<std::size_t>(m + j)] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      double denom = right[r + 1] + left[j - r];
      double temp = denom != 0.0 ? nvals[r] / denom : 0.0;
      nvals[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    nvals[j] = saved;
  }
  for (int j = 0; j <= degree; ++j) {
    int idx = m - degree + j;
    if (idx >= 0 && idx < size) row[idx] = nvals[j];
  }
}

}  // namespace detail

// Evaluator closure usable with QuadPlan.
inline QuadPlan::BasisFn basis_evaluator(const BasisSpec& spec) {
  spec.validate();
  if (spec.kind == BasisKind::bspline_cubic) {
    auto knots = detail::bspline_knots(spec.size, spec.lo, spec.hi);
    int size = spec.size;
    return [knots, size](double x, double* row) { detail::bspline_row(knots, size, x, row); };
  }
  // Legendre scaled to [lo, hi]; column j is P_j of the mapped coordinate.
  double lo = spec.lo, hi = spec.hi;
  int size = spec.size;
  return [lo, hi, size](double x, double* row) {
    double p = (x - lo) / (hi - lo);
    if (p < 0.0 || p > 1.0) fail(ErrorCategory::domain, "basis", "point outside basis domain");
    for (int j = 0; j < size; ++j) row[j] = shifted_legendre(j, p);
  };
}

inline Eigen::MatrixXd eval_basis(const BasisSpec& spec, const std::vector<double>& grid) {
  auto fn = basis_evaluator(spec);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(grid.size()), spec.size);
  std::vector<double> row(static_cast<std::size_t>(spec.size));
  for (std::size_t i = 0; i < grid.size(); ++i) {
    fn(grid[i], row.data());
    for (int j = 0; j < spec.size; ++j) out(static_cast<Eigen::Index>(i), j) = row[static_cast<std::size_t>(j)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tensor-product design features
//
//   W_i[(k-1)*L0 + (l-1)] = integral of Q_i(t,p) B_T,k(t) B_P,l(p) dt dp,
//
// stacking l-major within k. The surface is treated as piecewise bilinear on
// its grids (constant beyond them) and each direction is integrated with
// per-cell Gauss rules, so basis polynomials integrate exactly and the
// feature map is exactly linear in the surface values.
// ---------------------------------------------------------------------------
class TensorDesigner {
 public:
  TensorDesigner(const std::vector<double>& t_grid, const std::vector<double>& p_grid,
                 const BasisSpec& basis_t, const BasisSpec& basis_p)
      : basis_t_(basis_t), basis_p_(basis_p), n_t_(t_grid.size()) {
    basis_t.validate();
    basis_p.validate();
    if (t_grid.front() < basis_t.lo || t_grid.back() > basis_t.hi)
      fail(ErrorCategory::domain, "basis", "t grid outside temporal basis domain");
    if (p_grid.front() < basis_p.lo || p_grid.back() > basis_p.hi)
      fail(ErrorCategory::domain, "basis", "p grid outside quantile basis domain");
    plan_p_ = QuadPlan(p_grid, basis_p.lo, basis_p.hi, basis_p.size, basis_evaluator(basis_p));
    plan_t_ = QuadPlan(t_grid, basis_t.lo, basis_t.hi, basis_t.size, basis_evaluator(basis_t));
  }

  int n_features() const { return basis_t_.size * basis_p_.size; }

  Eigen::VectorXd row(const Eigen::MatrixXd& surface) const {
    if (surface.rows() != static_cast<Eigen::Index>(n_t_))
      fail(ErrorCategory::domain, "basis", "surface/grid mismatch");
    const int k0 = basis_t_.size, l0 = basis_p_.size;
    // stage 1: per t, integrate over p against each P-basis function
    Eigen::MatrixXd a(static_cast<Eigen::Index>(n_t_), l0);
    std::vector<double> rowbuf(static_cast<std::size_t>(surface.cols()));
    for (std::size_t i = 0; i < n_t_; ++i) {
      for (Eigen::Index j = 0; j < surface.cols(); ++j)
        rowbuf[static_cast<std::size_t>(j)] = surface(static_cast<Eigen::Index>(i), j);
      a.row(static_cast<Eigen::Index>(i)) = plan_p_.apply(rowbuf.data()).transpose();
    }
    // stage 2: per P-basis column, integrate over t against each T-basis fn
    Eigen::VectorXd w(k0 * l0);
    std::vector<double> col(n_t_);
    for (int l = 0; l < l0; ++l) {
      for (std::size_t i = 0; i < n_t_; ++i) col[i] = a(static_cast<Eigen::Index>(i), l);
      Eigen::VectorXd wt = plan_t_.apply(col.data());
      for (int k = 0; k < k0; ++k) w(k * l0 + l) = wt(k);
    }
    return w;
  }

  Eigen::VectorXd row(const TDSurface& surface) const { return row(surface.values); }

  // Curve features: integral of x(t) basis_t,k(t) dt.
  Eigen::VectorXd curve_row(const std::vector<double>& values) const {
    return plan_t_.apply(values.data());
  }

  const BasisSpec& basis_t() const { return basis_t_; }
  const BasisSpec& basis_p() const { return basis_p_; }

 private:
  BasisSpec basis_t_, basis_p_;
  std::size_t n_t_;
  QuadPlan plan_t_, plan_p_;
};

inline Eigen::VectorXd tensor_design_row(const TDSurface& surface, const BasisSpec& basis_t,
                                         const BasisSpec& basis_p) {
  TensorDesigner d(surface.t_grid, surface.p_grid, basis_t, basis_p);
  return d.row(surface);
}

struct DesignBlock {
  std::string name;
  int offset = 0;
  int size = 0;
};

struct DesignMatrix {
  Eigen::MatrixXd x;
  std::vector<DesignBlock> blocks;

  const DesignBlock& block(const std::string& name) const {
    for (const auto& b : blocks)
      if (b.name == name) return b;
    fail(ErrorCategory::domain, "basis", "unknown design block '" + name + "'");
  }
};

// ---------------------------------------------------------------------------
// Functional PCA on a grid with trapezoid quadrature weights
// ---------------------------------------------------------------------------
struct FpcaResult {
  std::vector<double> t_grid;
  std::vector<double> quad_weights;
  Eigen::VectorXd mean;            // grid mean curve
  Eigen::MatrixXd eigenfunctions;  // |grid| x retained, orthonormal in L2(w)
  Eigen::VectorXd eigenvalues;     // retained, nonincreasing
  Eigen::MatrixXd scores;          // n x retained
  double pve_threshold = 0.99;
  int retained = 0;
  bool degenerate = false;
};

inline Eigen::MatrixXd fpca_project(const FpcaResult& f, const Eigen::MatrixXd& curves) {
  Eigen::MatrixXd centered = curves.rowwise() - f.mean.transpose();
  Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(
      f.quad_weights.data(), static_cast<Eigen::Index>(f.quad_weights.size()));
  return centered * w.asDiagonal() * f.eigenfunctions;
}

// Eigendecomposition of the quadrature-weighted sample covariance operator.
// Retains the smallest count reaching `pve` of total variance; eigenvector
// signs are fixed so the largest-magnitude coordinate is positive.
inline FpcaResult fpca(const Eigen::MatrixXd& curves, const std::vector<double>& t_grid,
                       double pve = 0.99) {
  const Eigen::Index n = curves.rows();
  const Eigen::Index m = curves.cols();
  if (n < 2) fail(ErrorCategory::domain, "basis", "fpca needs >= 2 subjects");
  if (!(pve > 0.0 && pve <= 1.0)) fail(ErrorCategory::domain, "basis", "pve must be in (0,1]");
  if (m != static_cast<Eigen::Index>(t_grid.size()))
    fail(ErrorCategory::domain, "basis", "curve/grid mismatch");

  FpcaResult out;
  out.t_grid = t_grid;
  out.quad_weights = trapezoid_weights(t_grid);
  out.pve_threshold = pve;
  out.mean = curves.colwise().mean();

  Eigen::MatrixXd centered = curves.rowwise() - out.mean.transpose();
  Eigen::VectorXd sqw(m);
  for (Eigen::Index j = 0; j < m; ++j) sqw(j) = std::sqrt(out.quad_weights[static_cast<std::size_t>(j)]);
  Eigen::MatrixXd b = centered * sqw.asDiagonal();
  Eigen::MatrixXd s = (b.transpose() * b) / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  if (eig.info() != Eigen::Success) fail(ErrorCategory::numeric, "basis", "fpca eigensolver failed");
  Eigen::VectorXd evals = eig.eigenvalues().reverse();
  Eigen::MatrixXd evecs = eig.eigenvectors().rowwise().reverse();
  for (Eigen::Index i = 0; i < evals.size(); ++i) evals(i) = std::max(0.0, evals(i));

  double total = evals.sum();
  if (total <= 1e-14 * static_cast<double>(m)) {
    out.degenerate = true;
    out.retained = 0;
    out.eigenvalues = Eigen::VectorXd::Zero(1);
    out.eigenfunctions = Eigen::MatrixXd::Zero(m, 0);
    out.scores = Eigen::MatrixXd::Zero(n, 0);
    return out;
  }
  int keep = 0;
  double cum = 0.0;
  for (Eigen::Index i = 0; i < evals.size(); ++i) {
    cum += evals(i);
    ++keep;
    if (cum >= pve * total) break;
  }
  out.retained = keep;
  out.eigenvalues = evals.head(keep);
  out.eigenfunctions.resize(m, keep);
  for (int k = 0; k < keep; ++k) {
    Eigen::VectorXd psi = evecs.col(k).cwiseQuotient(sqw);
    Eigen::Index imax = 0;
    psi.cwiseAbs().maxCoeff(&imax);
    if (psi(imax) < 0.0) psi = -psi;
    out.eigenfunctions.col(k) = psi;
  }
  out.scores = fpca_project(out, curves);
  return out;
}

}  // namespace tdr
