#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "tdr/activity.hpp"
#include "tdr/basis.hpp"
#include "tdr/distribution.hpp"
#include "tdr/gel.hpp"
#include "tdr/glm.hpp"
#include "tdr/lasso.hpp"
#include "tdr/tdobject.hpp"

namespace tdr {

// Model family:
//   m1       scalar GLM on the subject mean
//   m2       scalar-on-function regression on diurnal curves, beta(t)
//   m3       scalar-on-function regression on quantile functions, beta(p)
//   m4       scalar-on-time-by-distribution regression (SOTDR), beta(t,p)
//   sotdr_l  additive SOFR on time-varying L-moment curves, beta*_r(t)
enum class ModelKind { m1, m2, m3, m4, sotdr_l };

inline std::string model_name(ModelKind k) {
  switch (k) {
    case ModelKind::m1: return "m1";
    case ModelKind::m2: return "m2";
    case ModelKind::m3: return "m3";
    case ModelKind::m4: return "m4";
    case ModelKind::sotdr_l: return "sotdr_l";
  }
  return "?";
}

inline ModelKind parse_model(const std::string& s) {
  if (s == "m1") return ModelKind::m1;
  if (s == "m2") return ModelKind::m2;
  if (s == "m3") return ModelKind::m3;
  if (s == "m4") return ModelKind::m4;
  if (s == "sotdr_l") return ModelKind::sotdr_l;
  fail(ErrorCategory::config, "fit", "unknown model '" + s + "'");
}

struct FitConfig {
  Family family = Family::logit;
  int k0 = 12;  // temporal basis size
  int l0 = 12;  // quantile basis size
  BasisKind m4_t_kind = BasisKind::bspline_cubic;
  BasisKind m4_p_kind = BasisKind::bspline_cubic;
  int lmoment_orders = 4;
  double pve = 0.99;
  LambdaRule lambda_rule = LambdaRule::cv_1se;
  double lambda_fixed = 0.0;
  int lambda_folds = 10;
  int lambda_path_len = 50;
  double lambda_min_ratio = 1e-3;
  double gel_tau = 1.0 / 3.0;
  int gcv_points = 20;
  bool m3_legendre = false;
  std::uint64_t seed = 20260810;
};

// Per-subject functional summaries. All entries depend only on the
// subject's own data, so they can be computed once and reused across
// cross-validation folds without leakage.
struct FeatureBundle {
  std::vector<std::string> ids;
  Eigen::VectorXd means;               // n
  Eigen::MatrixXd mean_curves;         // n x T (windowed means; order-1 L-moments)
  Eigen::MatrixXd qfun;                // n x P (whole-sample quantile functions)
  std::vector<Eigen::MatrixXd> surfaces;  // n of (T x P)
  std::vector<Eigen::MatrixXd> lmom;      // n of (R x T)
  std::vector<double> t_grid;
  std::vector<double> p_grid;
  int max_order = 4;
  double window_half_width = 5.0;

  int n() const { return static_cast<int>(ids.size()); }
};

inline FeatureBundle build_features(const ActivityPanel& panel,
                                    const std::vector<double>& t_grid,
                                    const std::vector<double>& p_grid, double h, int max_order,
                                    Boundary boundary = Boundary::truncate) {
  FeatureBundle fb;
  fb.t_grid = t_grid;
  fb.p_grid = p_grid;
  fb.max_order = max_order;
  fb.window_half_width = h;
  const int n = static_cast<int>(panel.subjects.size());
  fb.means.resize(n);
  fb.mean_curves.resize(n, static_cast<Eigen::Index>(t_grid.size()));
  fb.qfun.resize(n, static_cast<Eigen::Index>(p_grid.size()));
  fb.surfaces.reserve(static_cast<std::size_t>(n));
  fb.lmom.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const SubjectSeries& s = panel.subjects[static_cast<std::size_t>(i)];
    fb.ids.push_back(s.subject_id);
    fb.means(i) = subject_mean(s);
    TDSurface surf = td_surface(s, t_grid, p_grid, h, boundary);
    LMomentCurveSet lm = time_varying_l_moments(s, t_grid, h, max_order, boundary);
    fb.mean_curves.row(i) = lm.curves.row(0);
    fb.surfaces.push_back(surf.values);
    fb.lmom.push_back(lm.curves);
    std::vector<double> pooled;
    for (const auto& day : s.days) {
      if (!day.valid) continue;
      for (std::size_t k = 0; k < day.values.size(); ++k)
        if (day.observed[k]) pooled.push_back(day.values[k]);
    }
    QuantileFunction q = quantile_function(std::move(pooled), p_grid);
    for (std::size_t j = 0; j < q.values.size(); ++j)
      fb.qfun(i, static_cast<Eigen::Index>(j)) = q.values[j];
  }
  return fb;
}

// Quadrature-projected design features, built once per configuration and
// shared across folds (each row uses only that subject's data).
struct ModelDesigns {
  BasisSpec basis_t;   // m2 / m4 temporal basis on [0, 1440]
  BasisSpec basis_p;   // m4 quantile basis on [0, 1]
  BasisSpec basis_q;   // m3 quantile basis on [0, 1]
  Eigen::MatrixXd w_tensor;     // n x k0*l0
  Eigen::MatrixXd f_temporal;   // n x k0
  Eigen::MatrixXd f_quant;      // n x l0 (spline route)
  Eigen::MatrixXd f_quant_leg;  // n x l0 (Legendre route; col r-1 ~ r-th L-moment)
};

inline ModelDesigns build_designs(const FeatureBundle& fb, const FitConfig& cfg) {
  ModelDesigns d;
  d.basis_t = BasisSpec{cfg.m4_t_kind, cfg.k0, 0.0, static_cast<double>(kMinutesPerDay)};
  d.basis_p = BasisSpec{cfg.m4_p_kind, cfg.l0, 0.0, 1.0};
  // m2/m3 keep cubic splines of at least the minimum size even when the
  // tensor bases are overridden (nesting configurations use size-1 bases)
  const int k_sofr = std::max(cfg.k0, 4);
  const int l_sofr = std::max(cfg.l0, 4);
  const int l_leg = std::max(cfg.l0, 1);
  d.basis_q = BasisSpec{BasisKind::bspline_cubic, l_sofr, 0.0, 1.0};
  const int n = fb.n();

  TensorDesigner tensor(fb.t_grid, fb.p_grid, d.basis_t, d.basis_p);
  d.w_tensor.resize(n, tensor.n_features());
  for (int i = 0; i < n; ++i)
    d.w_tensor.row(i) = tensor.row(fb.surfaces[static_cast<std::size_t>(i)]).transpose();

  QuadPlan plan_t(fb.t_grid, 0.0, static_cast<double>(kMinutesPerDay), k_sofr,
                  basis_evaluator(BasisSpec::bspline(k_sofr, 0.0, kMinutesPerDay)));
  d.f_temporal.resize(n, k_sofr);
  std::vector<double> buf(fb.t_grid.size());
  for (int i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < fb.t_grid.size(); ++j) buf[j] = fb.mean_curves(i, static_cast<Eigen::Index>(j));
    d.f_temporal.row(i) = plan_t.apply(buf.data()).transpose();
  }

  QuadPlan plan_q(fb.p_grid, 0.0, 1.0, d.basis_q.size, basis_evaluator(d.basis_q));
  QuadPlan plan_leg(fb.p_grid, 0.0, 1.0, l_leg,
                    basis_evaluator(BasisSpec::legendre_basis(l_leg, 0.0, 1.0)));
  d.f_quant.resize(n, d.basis_q.size);
  d.f_quant_leg.resize(n, l_leg);
  std::vector<double> qbuf(fb.p_grid.size());
  for (int i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < fb.p_grid.size(); ++j) qbuf[j] = fb.qfun(i, static_cast<Eigen::Index>(j));
    d.f_quant.row(i) = plan_q.apply(qbuf.data()).transpose();
    d.f_quant_leg.row(i) = plan_leg.apply(qbuf.data()).transpose();
  }
  return d;
}

struct ModelFit {
  ModelKind kind = ModelKind::m1;
  Family family = Family::logit;
  double alpha = 0.0;
  Eigen::VectorXd gamma;

  struct Coef {
    std::string term;
    double estimate = 0.0, se = 0.0, z = 0.0, p = 1.0;
  };
  std::vector<Coef> coefficients;

  // functional coefficients; meaning depends on kind (see beta_* grids)
  Eigen::VectorXd theta;
  std::vector<int> selected;

  double beta_scalar = 0.0, beta_scalar_se = 0.0;
  std::vector<double> t_grid, p_grid;
  Eigen::VectorXd beta_t, beta_t_se;
  Eigen::VectorXd beta_p, beta_p_se;
  Eigen::MatrixXd beta_surface;  // T x P
  Eigen::MatrixXd beta_star;     // R x T
  bool legendre_route = false;

  // sotdr_l internals (needed to score new subjects)
  std::vector<FpcaResult> order_fpca;
  std::vector<Eigen::VectorXd> order_coefs;
  std::vector<int> selected_groups;

  double lambda = 0.0;
  double joint_functional_p = 1.0;
  double loglik = 0.0, deviance = 0.0;
  int n = 0;
  int q = 0;  // 1 + |Z| + number of (selected) functional coefficients
  bool degenerate = false;
  bool converged = true;
  std::vector<std::string> warnings;
};

namespace detail {

inline Eigen::MatrixXd subset_rows(const Eigen::MatrixXd& x, const std::vector<int>& idx) {
  if (idx.empty()) return x;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  return out;
}

inline Eigen::VectorXd subset(const Eigen::VectorXd& v, const std::vector<int>& idx) {
  if (idx.empty()) return v;
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(idx[i]);
  return out;
}

inline void push_coefs(ModelFit& fit, const GlmFit& g, const std::vector<std::string>& names) {
  fit.coefficients.clear();
  for (Eigen::Index j = 0; j < g.coef.size(); ++j) {
    ModelFit::Coef c;
    c.term = names[static_cast<std::size_t>(j)];
    c.estimate = g.coef(j);
    c.se = g.se(j);
    c.z = g.z_stat(static_cast<int>(j));
    c.p = g.p_value(static_cast<int>(j));
    fit.coefficients.push_back(c);
  }
}

inline std::vector<std::string> design_names(int n_z, const std::vector<std::string>& fn) {
  std::vector<std::string> names;
  names.push_back("(intercept)");
  for (int j = 0; j < n_z; ++j) names.push_back("z" + std::to_string(j + 1));
  for (const auto& f : fn) names.push_back(f);
  return names;
}

// Penalized IRLS with a quadratic penalty block and GCV-selected smoothing.
struct PsplineResult {
  Eigen::VectorXd coef;
  Eigen::MatrixXd cov;
  double lambda = 0.0;
  double edf = 0.0;
  double gcv = 0.0;
  double deviance = 0.0;
  bool converged = true;
};

inline PsplineResult fit_pspline_glm(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                     Family family, int pen_offset, int pen_size,
                                     int gcv_points) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  if (!x.allFinite() || !y.allFinite())
    fail(ErrorCategory::domain, "fit", "non-finite entries in design or outcome");
  Eigen::MatrixXd pen = Eigen::MatrixXd::Zero(p, p);
  if (pen_size >= 3) {
    Eigen::MatrixXd d2 = Eigen::MatrixXd::Zero(pen_size - 2, pen_size);
    for (int r = 0; r < pen_size - 2; ++r) {
      d2(r, r) = 1.0;
      d2(r, r + 1) = -2.0;
      d2(r, r + 2) = 1.0;
    }
    pen.block(pen_offset, pen_offset, pen_size, pen_size) = d2.transpose() * d2;
  }
  double xtx_tr = (x.middleCols(pen_offset, pen_size).transpose() *
                   x.middleCols(pen_offset, pen_size))
                      .trace();
  double pen_tr = std::max(pen.trace(), 1e-300);
  double ref = std::max(xtx_tr / pen_tr, 1e-300);

  PsplineResult best;
  best.gcv = std::numeric_limits<double>::infinity();
  Eigen::VectorXd warm = Eigen::VectorXd::Zero(p);
  // tiny ridge keeps the penalized system SPD when features are collinear
  // with the penalty null space (degenerate inputs)
  auto regularized = [&](const Eigen::MatrixXd& xtwx, double lam) {
    Eigen::MatrixXd a = xtwx + lam * pen;
    double jitter = 1e-10 * (xtwx.trace() + lam * pen.trace()) / static_cast<double>(p);
    a.diagonal().array() += jitter;
    return a;
  };
  for (int g = 0; g < gcv_points; ++g) {
    double lam = ref * std::pow(10.0, -6.0 + 13.0 * static_cast<double>(g) /
                                          std::max(1, gcv_points - 1));
    Eigen::VectorXd beta = warm;
    Eigen::MatrixXd xtwx(p, p);
    bool conv = false;
    if (family == Family::identity) {
      xtwx = x.transpose() * x;
      beta = regularized(xtwx, lam).ldlt().solve(x.transpose() * y);
      conv = true;
    } else {
      for (int it = 0; it < 100; ++it) {
        Eigen::VectorXd eta = x * beta;
        Eigen::VectorXd mu = glm_mu(family, eta);
        Eigen::VectorXd w(n);
        for (Eigen::Index i = 0; i < n; ++i) w(i) = std::max(mu(i) * (1.0 - mu(i)), 1e-10);
        Eigen::VectorXd z = eta + (y - mu).cwiseQuotient(w);
        Eigen::MatrixXd xw = x.transpose() * w.asDiagonal();
        xtwx = xw * x;
        Eigen::VectorXd bn = regularized(xtwx, lam).ldlt().solve(xw * z);
        double dmax = (bn - beta).cwiseAbs().maxCoeff();
        beta = bn;
        if (dmax < 1e-8) {
          conv = true;
          break;
        }
        if (beta.cwiseAbs().maxCoeff() > 1e6)
          fail(ErrorCategory::numeric, "fit",
               "diverging coefficients (possible perfect separation)");
      }
      Eigen::VectorXd mu = glm_mu(family, x * beta);
      Eigen::VectorXd w(n);
      for (Eigen::Index i = 0; i < n; ++i) w(i) = std::max(mu(i) * (1.0 - mu(i)), 1e-10);
      xtwx = x.transpose() * w.asDiagonal() * x;
    }
    warm = beta;
    Eigen::MatrixXd a_inv = regularized(xtwx, lam).ldlt().solve(Eigen::MatrixXd::Identity(p, p));
    double edf = (a_inv * xtwx).trace();
    if (edf >= static_cast<double>(n) - 1e-6) continue;
    double dev = glm_deviance(family, y, glm_mu(family, x * beta));
    double gcv = static_cast<double>(n) * dev /
                 ((static_cast<double>(n) - edf) * (static_cast<double>(n) - edf));
    if (gcv < best.gcv) {
      best.coef = beta;
      best.lambda = lam;
      best.edf = edf;
      best.gcv = gcv;
      best.deviance = dev;
      best.converged = conv;
      Eigen::MatrixXd cov = a_inv * xtwx * a_inv;
      if (family == Family::identity) {
        double dof = std::max(1.0, static_cast<double>(n) - edf);
        cov *= dev / dof;
      }
      best.cov = cov;
    }
  }
  if (!best.coef.size()) fail(ErrorCategory::numeric, "fit", "GCV grid produced no usable fit");
  return best;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Model fits. `idx` selects the training subjects (empty = all). Any
// data-dependent choice (lambda paths, GCV, FPCA bases, standardization)
// is recomputed inside, on the training rows only.
// ---------------------------------------------------------------------------

inline ModelFit fit_model(ModelKind kind, const FeatureBundle& fb, const ModelDesigns& des,
                          const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                          const FitConfig& cfg, const std::vector<int>& idx = {});

namespace detail {

inline ModelFit fit_m1(const FeatureBundle& fb, const Eigen::MatrixXd& z,
                       const Eigen::VectorXd& y, const FitConfig& cfg,
                       const std::vector<int>& idx) {
  Eigen::VectorXd means = subset(fb.means, idx);
  Eigen::MatrixXd zz = subset_rows(z, idx);
  Eigen::VectorXd yy = subset(y, idx);
  const Eigen::Index n = yy.size();
  Eigen::MatrixXd x(n, 2 + z.cols());
  x.col(0).setOnes();
  x.middleCols(1, z.cols()) = zz;
  x.col(1 + z.cols()) = means;
  GlmFit g = fit_glm(x, yy, cfg.family);
  ModelFit fit;
  fit.kind = ModelKind::m1;
  fit.family = cfg.family;
  fit.alpha = g.coef(0);
  fit.gamma = g.coef.segment(1, z.cols());
  fit.beta_scalar = g.coef(1 + z.cols());
  fit.beta_scalar_se = g.se(1 + z.cols());
  fit.theta = g.coef.tail(1);
  fit.loglik = g.loglik;
  fit.deviance = g.deviance;
  fit.converged = g.converged;
  fit.n = static_cast<int>(n);
  fit.q = 2 + static_cast<int>(z.cols());
  fit.joint_functional_p = g.p_value(static_cast<int>(1 + z.cols()));
  push_coefs(fit, g, design_names(static_cast<int>(z.cols()), {"mean_activity"}));
  return fit;
}

inline ModelFit fit_sofr(ModelKind kind, const FeatureBundle& fb, const ModelDesigns& des,
                         const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                         const FitConfig& cfg, const std::vector<int>& idx) {
  const bool temporal = kind == ModelKind::m2;
  const Eigen::MatrixXd& feats_full = temporal ? des.f_temporal
                                      : cfg.m3_legendre ? des.f_quant_leg
                                                        : des.f_quant;
  Eigen::MatrixXd f = subset_rows(feats_full, idx);
  Eigen::MatrixXd zz = subset_rows(z, idx);
  Eigen::VectorXd yy = subset(y, idx);
  const Eigen::Index n = yy.size();
  const int nf = static_cast<int>(f.cols());
  Eigen::MatrixXd x(n, 1 + z.cols() + nf);
  x.col(0).setOnes();
  x.middleCols(1, z.cols()) = zz;
  x.rightCols(nf) = f;

  ModelFit fit;
  fit.kind = kind;
  fit.family = cfg.family;
  fit.n = static_cast<int>(n);
  fit.t_grid = fb.t_grid;
  fit.p_grid = fb.p_grid;
  fit.legendre_route = !temporal && cfg.m3_legendre;

  std::vector<std::string> fnames;
  for (int j = 0; j < nf; ++j)
    fnames.push_back((temporal ? "bt" : fit.legendre_route ? "lp" : "bp") + std::to_string(j + 1));

  if (fit.legendre_route) {
    // Legendre features are L-moment projections; fit them unpenalized so
    // coefficients read directly as L-moment effects
    GlmFit g = fit_glm(x, yy, cfg.family);
    fit.alpha = g.coef(0);
    fit.gamma = g.coef.segment(1, z.cols());
    fit.theta = g.coef.tail(nf);
    fit.loglik = g.loglik;
    fit.deviance = g.deviance;
    fit.converged = g.converged;
    std::vector<int> block;
    for (int j = 0; j < nf; ++j) block.push_back(1 + static_cast<int>(z.cols()) + j);
    fit.joint_functional_p = joint_wald_pvalue(g, block);
    push_coefs(fit, g, design_names(static_cast<int>(z.cols()), fnames));
    Eigen::MatrixXd bp = eval_basis(BasisSpec::legendre_basis(nf, 0.0, 1.0), fb.p_grid);
    fit.beta_p = bp * fit.theta;
    Eigen::MatrixXd cov_ff = g.cov.bottomRightCorner(nf, nf);
    fit.beta_p_se.resize(bp.rows());
    for (Eigen::Index i = 0; i < bp.rows(); ++i)
      fit.beta_p_se(i) = std::sqrt(std::max(0.0, (bp.row(i) * cov_ff * bp.row(i).transpose())(0)));
  } else {
    detail::PsplineResult ps =
        detail::fit_pspline_glm(x, yy, cfg.family, 1 + static_cast<int>(z.cols()), nf,
                                cfg.gcv_points);
    fit.alpha = ps.coef(0);
    fit.gamma = ps.coef.segment(1, z.cols());
    fit.theta = ps.coef.tail(nf);
    fit.lambda = ps.lambda;
    fit.deviance = ps.deviance;
    fit.loglik = glm_loglik(cfg.family, yy, glm_mu(cfg.family, x * ps.coef));
    fit.converged = ps.converged;
    const auto names = design_names(static_cast<int>(z.cols()), fnames);
    for (Eigen::Index j = 0; j < ps.coef.size(); ++j) {
      ModelFit::Coef c;
      c.term = names[static_cast<std::size_t>(j)];
      c.estimate = ps.coef(j);
      c.se = std::sqrt(std::max(0.0, ps.cov(j, j)));
      c.z = c.se > 0 ? c.estimate / c.se : 0.0;
      c.p = c.se > 0 ? normal_two_sided_p(c.z) : 1.0;
      fit.coefficients.push_back(c);
    }
    Eigen::MatrixXd cov_ff = ps.cov.bottomRightCorner(nf, nf);
    if (temporal) {
      Eigen::MatrixXd bt = eval_basis(BasisSpec::bspline(nf, 0.0, kMinutesPerDay), fb.t_grid);
      fit.beta_t = bt * fit.theta;
      fit.beta_t_se.resize(bt.rows());
      for (Eigen::Index i = 0; i < bt.rows(); ++i)
        fit.beta_t_se(i) =
            std::sqrt(std::max(0.0, (bt.row(i) * cov_ff * bt.row(i).transpose())(0)));
    } else {
      Eigen::MatrixXd bp = eval_basis(des.basis_q, fb.p_grid);
      fit.beta_p = bp * fit.theta;
      fit.beta_p_se.resize(bp.rows());
      for (Eigen::Index i = 0; i < bp.rows(); ++i)
        fit.beta_p_se(i) =
            std::sqrt(std::max(0.0, (bp.row(i) * cov_ff * bp.row(i).transpose())(0)));
    }
    // approximate joint test from the sandwich covariance
    Eigen::VectorXd th = fit.theta;
    Eigen::VectorXd sol = cov_ff.ldlt().solve(th);
    fit.joint_functional_p = chi2_sf(th.dot(sol), static_cast<double>(nf));
  }
  fit.q = 1 + static_cast<int>(z.cols()) + nf;
  return fit;
}

inline ModelFit fit_m4(const FeatureBundle& fb, const ModelDesigns& des, const Eigen::MatrixXd& z,
                       const Eigen::VectorXd& y, const FitConfig& cfg,
                       const std::vector<int>& idx) {
  Eigen::MatrixXd w = subset_rows(des.w_tensor, idx);
  Eigen::MatrixXd zz = subset_rows(z, idx);
  Eigen::VectorXd yy = subset(y, idx);
  const Eigen::Index n = yy.size();
  const int nw = static_cast<int>(w.cols());
  const int nz = static_cast<int>(z.cols());

  ModelFit fit;
  fit.kind = ModelKind::m4;
  fit.family = cfg.family;
  fit.n = static_cast<int>(n);
  fit.t_grid = fb.t_grid;
  fit.p_grid = fb.p_grid;
  fit.theta = Eigen::VectorXd::Zero(nw);

  // step 1: lasso on standardized W features, covariates unpenalized
  Eigen::VectorXd mean = w.colwise().mean();
  Eigen::VectorXd sd(nw);
  for (int j = 0; j < nw; ++j) {
    double v = (w.col(j).array() - mean(j)).square().sum() / std::max<double>(1.0, n - 1.0);
    sd(j) = std::sqrt(v);
  }
  std::vector<int> usable;
  for (int j = 0; j < nw; ++j)
    if (sd(j) > 1e-12) usable.push_back(j);
  if (static_cast<int>(usable.size()) < nw)
    fit.warnings.push_back("constant tensor features excluded from selection");

  Eigen::MatrixXd x1(n, 1 + nz + static_cast<Eigen::Index>(usable.size()));
  x1.col(0).setOnes();
  x1.middleCols(1, nz) = zz;
  for (std::size_t j = 0; j < usable.size(); ++j)
    x1.col(1 + nz + static_cast<Eigen::Index>(j)) =
        ((w.col(usable[j]).array() - mean(usable[j])) / sd(usable[j])).matrix();
  std::vector<char> penalize(static_cast<std::size_t>(x1.cols()), 0);
  for (std::size_t j = 0; j < usable.size(); ++j) penalize[1 + static_cast<std::size_t>(nz) + j] = 1;

  double lambda;
  if (cfg.lambda_rule == LambdaRule::fixed) {
    lambda = cfg.lambda_fixed;
  } else {
    CvLambdaResult cv = cv_lambda_path(x1, yy, cfg.family, penalize, cfg.lambda_folds,
                                       mix_seed(cfg.seed, 0xA4), cfg.lambda_path_len,
                                       cfg.lambda_min_ratio);
    lambda = cv.choose(cfg.lambda_rule);
  }
  fit.lambda = lambda;
  LassoFit l1 = fit_lasso_glm(x1, yy, cfg.family, lambda, penalize);

  for (std::size_t j = 0; j < usable.size(); ++j)
    if (l1.coef(1 + nz + static_cast<Eigen::Index>(j)) != 0.0) fit.selected.push_back(usable[j]);

  std::vector<std::string> fnames;
  const int l0 = des.basis_p.size;
  for (int s : fit.selected)
    fnames.push_back("w_" + std::to_string(s / l0 + 1) + "_" + std::to_string(s % l0 + 1));

  if (fit.selected.empty()) {
    // no informative tensor features: fall back to covariates only
    fit.degenerate = true;
    fit.warnings.push_back("no tensor features selected; covariates-only fit");
    Eigen::MatrixXd x2(n, 1 + nz);
    x2.col(0).setOnes();
    x2.middleCols(1, nz) = zz;
    GlmFit g = fit_glm(x2, yy, cfg.family);
    fit.alpha = g.coef(0);
    fit.gamma = g.coef.segment(1, nz);
    fit.loglik = g.loglik;
    fit.deviance = g.deviance;
    fit.converged = g.converged;
    fit.q = 1 + nz;
    push_coefs(fit, g, design_names(nz, {}));
  } else {
    // step 2: unpenalized refit on the selected raw features
    Eigen::MatrixXd x2(n, 1 + nz + static_cast<Eigen::Index>(fit.selected.size()));
    x2.col(0).setOnes();
    x2.middleCols(1, nz) = zz;
    for (std::size_t j = 0; j < fit.selected.size(); ++j)
      x2.col(1 + nz + static_cast<Eigen::Index>(j)) = w.col(fit.selected[j]);
    GlmOptions go;
    go.rank_policy = RankPolicy::drop;
    GlmFit g = fit_glm(x2, yy, cfg.family, go);
    if (!g.dropped.empty())
      fit.warnings.push_back("rank-deficient refit; redundant selected features dropped");
    fit.alpha = g.coef(0);
    fit.gamma = g.coef.segment(1, nz);
    for (std::size_t j = 0; j < fit.selected.size(); ++j)
      fit.theta(fit.selected[j]) = g.coef(1 + nz + static_cast<Eigen::Index>(j));
    fit.loglik = g.loglik;
    fit.deviance = g.deviance;
    fit.converged = g.converged;
    std::vector<int> block;
    for (std::size_t j = 0; j < fit.selected.size(); ++j)
      block.push_back(1 + nz + static_cast<int>(j));
    fit.joint_functional_p = joint_wald_pvalue(g, block);
    fit.q = 1 + nz + static_cast<int>(fit.selected.size());
    push_coefs(fit, g, design_names(nz, fnames));
  }

  // assemble beta(t,p) = sum theta_kl B_T,k(t) B_P,l(p) on the stored grids
  Eigen::MatrixXd bt = eval_basis(des.basis_t, fb.t_grid);
  Eigen::MatrixXd bp = eval_basis(des.basis_p, fb.p_grid);
  Eigen::MatrixXd theta_mat(des.basis_t.size, des.basis_p.size);
  for (int k = 0; k < des.basis_t.size; ++k)
    for (int l = 0; l < des.basis_p.size; ++l) theta_mat(k, l) = fit.theta(k * l0 + l);
  fit.beta_surface = bt * theta_mat * bp.transpose();
  return fit;
}

inline ModelFit fit_sotdr_l(const FeatureBundle& fb, const Eigen::MatrixXd& z,
                            const Eigen::VectorXd& y, const FitConfig& cfg,
                            const std::vector<int>& idx) {
  Eigen::MatrixXd zz = subset_rows(z, idx);
  Eigen::VectorXd yy = subset(y, idx);
  const Eigen::Index n = yy.size();
  const int nz = static_cast<int>(z.cols());
  const int orders = std::min(cfg.lmoment_orders, fb.max_order);
  const std::size_t tlen = fb.t_grid.size();

  ModelFit fit;
  fit.kind = ModelKind::sotdr_l;
  fit.family = cfg.family;
  fit.n = static_cast<int>(n);
  fit.t_grid = fb.t_grid;
  fit.p_grid = fb.p_grid;

  // per-order FPCA of the training curves
  std::vector<int> rows = idx;
  if (rows.empty())
    for (int i = 0; i < fb.n(); ++i) rows.push_back(i);
  std::vector<Eigen::MatrixXd> score_cols;
  std::vector<Group> groups;
  int total_scores = 0;
  for (int r = 0; r < orders; ++r) {
    Eigen::MatrixXd curves(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(tlen));
    for (std::size_t i = 0; i < rows.size(); ++i)
      curves.row(static_cast<Eigen::Index>(i)) = fb.lmom[static_cast<std::size_t>(rows[i])].row(r);
    FpcaResult f = fpca(curves, fb.t_grid, cfg.pve);
    fit.order_fpca.push_back(f);
    if (f.degenerate || f.retained == 0) {
      fit.warnings.push_back("order " + std::to_string(r + 1) +
                             " L-moment curves carry no variation; order skipped");
      score_cols.emplace_back(static_cast<Eigen::Index>(rows.size()), 0);
      continue;
    }
    score_cols.push_back(f.scores);
    Group g;
    g.name = "L" + std::to_string(r + 1);
    for (int s = 0; s < f.retained; ++s) g.cols.push_back(1 + nz + total_scores + s);
    groups.push_back(g);
    total_scores += f.retained;
  }

  Eigen::MatrixXd x1(n, 1 + nz + total_scores);
  x1.col(0).setOnes();
  x1.middleCols(1, nz) = zz;
  std::vector<double> col_sd(static_cast<std::size_t>(total_scores), 1.0);
  {
    int c = 0;
    for (const auto& sc : score_cols)
      for (Eigen::Index j = 0; j < sc.cols(); ++j) {
        Eigen::VectorXd col = sc.col(j);
        double m = col.mean();
        double sdv = std::sqrt((col.array() - m).square().sum() / std::max<double>(1.0, n - 1.0));
        col_sd[static_cast<std::size_t>(c)] = sdv > 1e-12 ? sdv : 1.0;
        x1.col(1 + nz + c) = col / col_sd[static_cast<std::size_t>(c)];
        ++c;
      }
  }

  GelOptions gopts;
  gopts.tau = cfg.gel_tau;
  double lambda;
  if (cfg.lambda_rule == LambdaRule::fixed) {
    lambda = cfg.lambda_fixed;
  } else if (total_scores == 0) {
    lambda = 0.0;
  } else {
    CvLambdaResult cv = cv_gel_path(x1, yy, cfg.family, groups, cfg.lambda_folds,
                                    mix_seed(cfg.seed, 0xA5), cfg.lambda_path_len,
                                    cfg.lambda_min_ratio, gopts);
    lambda = cv.choose(cfg.lambda_rule);
  }
  fit.lambda = lambda;

  std::vector<int> sel_cols;
  if (total_scores > 0) {
    GelFit gf = fit_gel_glm(x1, yy, cfg.family, lambda, groups, gopts);
    for (int c = 0; c < total_scores; ++c)
      if (gf.coef(1 + nz + c) != 0.0) sel_cols.push_back(c);
  }

  // map selected score columns back to (order, component)
  std::vector<std::pair<int, int>> col_to_rs;
  for (int r = 0; r < orders; ++r) {
    int nr = fit.order_fpca[static_cast<std::size_t>(r)].retained;
    for (int s = 0; s < nr; ++s) col_to_rs.emplace_back(r, s);
  }

  fit.order_coefs.assign(static_cast<std::size_t>(orders), Eigen::VectorXd());
  for (int r = 0; r < orders; ++r)
    fit.order_coefs[static_cast<std::size_t>(r)] =
        Eigen::VectorXd::Zero(fit.order_fpca[static_cast<std::size_t>(r)].retained);

  if (sel_cols.empty()) {
    fit.degenerate = true;
    fit.warnings.push_back("no L-moment score selected; covariates-only fit");
    Eigen::MatrixXd x2(n, 1 + nz);
    x2.col(0).setOnes();
    x2.middleCols(1, nz) = zz;
    GlmFit g = fit_glm(x2, yy, cfg.family);
    fit.alpha = g.coef(0);
    fit.gamma = g.coef.segment(1, nz);
    fit.loglik = g.loglik;
    fit.deviance = g.deviance;
    fit.converged = g.converged;
    fit.q = 1 + nz;
    push_coefs(fit, g, design_names(nz, {}));
  } else {
    Eigen::MatrixXd x2(n, 1 + nz + static_cast<Eigen::Index>(sel_cols.size()));
    x2.col(0).setOnes();
    x2.middleCols(1, nz) = zz;
    std::vector<std::string> fnames;
    for (std::size_t j = 0; j < sel_cols.size(); ++j) {
      // raw (unstandardized) scores in the refit
      x2.col(1 + nz + static_cast<Eigen::Index>(j)) =
          x1.col(1 + nz + sel_cols[j]) * col_sd[static_cast<std::size_t>(sel_cols[j])];
      auto [r, s] = col_to_rs[static_cast<std::size_t>(sel_cols[j])];
      fnames.push_back("xi_" + std::to_string(r + 1) + "_" + std::to_string(s + 1));
    }
    GlmOptions go;
    go.rank_policy = RankPolicy::drop;
    GlmFit g = fit_glm(x2, yy, cfg.family, go);
    fit.alpha = g.coef(0);
    fit.gamma = g.coef.segment(1, nz);
    for (std::size_t j = 0; j < sel_cols.size(); ++j) {
      auto [r, s] = col_to_rs[static_cast<std::size_t>(sel_cols[j])];
      fit.order_coefs[static_cast<std::size_t>(r)](s) = g.coef(1 + nz + static_cast<Eigen::Index>(j));
    }
    fit.loglik = g.loglik;
    fit.deviance = g.deviance;
    fit.converged = g.converged;
    std::vector<int> block;
    for (std::size_t j = 0; j < sel_cols.size(); ++j) block.push_back(1 + nz + static_cast<int>(j));
    fit.joint_functional_p = joint_wald_pvalue(g, block);
    fit.q = 1 + nz + static_cast<int>(sel_cols.size());
    push_coefs(fit, g, design_names(nz, fnames));
    for (std::size_t j = 0; j < sel_cols.size(); ++j) {
      int r = col_to_rs[static_cast<std::size_t>(sel_cols[j])].first;
      if (std::find(fit.selected_groups.begin(), fit.selected_groups.end(), r) ==
          fit.selected_groups.end())
        fit.selected_groups.push_back(r);
    }
  }

  // beta*_r(t) = sum_s coef_rs psi_rs(t)
  fit.beta_star = Eigen::MatrixXd::Zero(orders, static_cast<Eigen::Index>(tlen));
  for (int r = 0; r < orders; ++r) {
    const FpcaResult& f = fit.order_fpca[static_cast<std::size_t>(r)];
    if (f.retained > 0)
      fit.beta_star.row(r) =
          (f.eigenfunctions * fit.order_coefs[static_cast<std::size_t>(r)]).transpose();
  }
  return fit;
}

}  // namespace detail

inline ModelFit fit_model(ModelKind kind, const FeatureBundle& fb, const ModelDesigns& des,
                          const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                          const FitConfig& cfg, const std::vector<int>& idx) {
  switch (kind) {
    case ModelKind::m1: return detail::fit_m1(fb, z, y, cfg, idx);
    case ModelKind::m2:
    case ModelKind::m3: return detail::fit_sofr(kind, fb, des, z, y, cfg, idx);
    case ModelKind::m4: return detail::fit_m4(fb, des, z, y, cfg, idx);
    case ModelKind::sotdr_l: return detail::fit_sotdr_l(fb, z, y, cfg, idx);
  }
  fail(ErrorCategory::domain, "fit", "unknown model kind");
}

// Linear predictor for subject i of the bundle (any subject, not only
// training rows; SOTDR-L scores are projections on the fit's own bases).
inline double model_eta(const ModelFit& fit, const FeatureBundle& fb, const ModelDesigns& des,
                        const Eigen::MatrixXd& z, int i) {
  double eta = fit.alpha + z.row(i).dot(fit.gamma);
  switch (fit.kind) {
    case ModelKind::m1:
      eta += fb.means(i) * fit.beta_scalar;
      break;
    case ModelKind::m2:
      eta += des.f_temporal.row(i).dot(fit.theta);
      break;
    case ModelKind::m3:
      eta += (fit.legendre_route ? des.f_quant_leg : des.f_quant).row(i).dot(fit.theta);
      break;
    case ModelKind::m4:
      eta += des.w_tensor.row(i).dot(fit.theta);
      break;
    case ModelKind::sotdr_l:
      for (std::size_t r = 0; r < fit.order_fpca.size(); ++r) {
        const FpcaResult& f = fit.order_fpca[r];
        if (f.retained == 0) continue;
        Eigen::MatrixXd curve = fb.lmom[static_cast<std::size_t>(i)].row(static_cast<Eigen::Index>(r));
        Eigen::MatrixXd sc = fpca_project(f, curve);
        eta += sc.row(0).dot(fit.order_coefs[r]);
      }
      break;
  }
  return eta;
}

// Functional contribution only (no intercept, no covariates); these are the
// model-based biomarker scores.
inline double model_functional_score(const ModelFit& fit, const FeatureBundle& fb,
                                     const ModelDesigns& des, int i) {
  switch (fit.kind) {
    case ModelKind::m1: return fb.means(i) * fit.beta_scalar;
    case ModelKind::m2: return des.f_temporal.row(i).dot(fit.theta);
    case ModelKind::m3:
      return (fit.legendre_route ? des.f_quant_leg : des.f_quant).row(i).dot(fit.theta);
    case ModelKind::m4: return des.w_tensor.row(i).dot(fit.theta);
    case ModelKind::sotdr_l: {
      double v = 0.0;
      for (std::size_t r = 0; r < fit.order_fpca.size(); ++r) {
        const FpcaResult& f = fit.order_fpca[r];
        if (f.retained == 0) continue;
        Eigen::MatrixXd curve = fb.lmom[static_cast<std::size_t>(i)].row(static_cast<Eigen::Index>(r));
        v += fpca_project(f, curve).row(0).dot(fit.order_coefs[r]);
      }
      return v;
    }
  }
  return 0.0;
}

}  // namespace tdr
