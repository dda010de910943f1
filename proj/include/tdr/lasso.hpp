#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "tdr/error.hpp"
#include "tdr/glm.hpp"
#include "tdr/rng.hpp"

namespace tdr {

// ---------------------------------------------------------------------------
// L1-penalized GLM by coordinate descent
//
// Objective: deviance(beta) + lambda * sum_j s_j |beta_j| over penalized j,
// where deviance is RSS (identity) or -2 log L (logit) and s_j is an
// optional per-coefficient penalty multiplier (1 by default; used by the
// group exponential lasso reweighting). Unpenalized coordinates (intercept,
// covariates) are updated by exact least-squares steps inside the same
// sweeps.
//
// KKT conditions at a solution, with score_j = 2 x_j' (y - mu):
//   |score_j| <= lambda s_j            for beta_j = 0
//   score_j == lambda s_j sign(beta_j) for beta_j != 0
// Sweeps continue until the coefficients are stable AND the certificate
// holds to an internal tolerance tighter than the reported one.
// ---------------------------------------------------------------------------

struct LassoOptions {
  double tol = 1e-7;
  double kkt_tol = 1e-8;
  int max_sweeps = 10000;
  int max_outer = 100;
  bool record_objective = false;
};

struct LassoFit {
  Eigen::VectorXd coef;
  double lambda = 0.0;
  int sweeps = 0;
  bool converged = false;
  double deviance = 0.0;
  double objective = 0.0;
  std::vector<double> objective_trace;  // when record_objective
};

struct KktReport {
  double max_violation_zero = 0.0;    // max(|score_j| - lambda s_j, 0) over zeros
  double max_violation_active = 0.0;  // max |score_j - lambda s_j sign(beta_j)| over actives
};

inline Eigen::VectorXd lasso_scores(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                    Family family, const Eigen::VectorXd& beta) {
  Eigen::VectorXd mu = glm_mu(family, x * beta);
  return 2.0 * (x.transpose() * (y - mu));
}

inline KktReport kkt_check(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family,
                           const Eigen::VectorXd& beta, double lambda,
                           const std::vector<char>& penalize,
                           const Eigen::VectorXd* scale = nullptr) {
  Eigen::VectorXd score = lasso_scores(x, y, family, beta);
  KktReport rep;
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    double s = scale ? (*scale)(j) : 1.0;
    if (!penalize[static_cast<std::size_t>(j)]) {
      rep.max_violation_active = std::max(rep.max_violation_active, std::abs(score(j)));
    } else if (beta(j) == 0.0) {
      rep.max_violation_zero =
          std::max(rep.max_violation_zero, std::abs(score(j)) - lambda * s);
    } else {
      rep.max_violation_active = std::max(
          rep.max_violation_active, std::abs(score(j) - lambda * s * (beta(j) > 0 ? 1.0 : -1.0)));
    }
  }
  rep.max_violation_zero = std::max(rep.max_violation_zero, 0.0);
  return rep;
}

inline bool kkt_ok(const KktReport& rep, double tol) {
  return rep.max_violation_zero <= tol && rep.max_violation_active <= tol;
}

namespace detail {

inline double soft_threshold(double z, double g) {
  if (z > g) return z - g;
  if (z < -g) return z + g;
  return 0.0;
}

// One pass of cyclic coordinate descent on the weighted quadratic
// sum_i w_i (z_i - x_i' beta)^2 + lambda sum s_j |beta_j|.
// Returns the largest coefficient change. `r` holds w-residuals z - X beta.
inline double cd_sweep(const Eigen::MatrixXd& x, const Eigen::VectorXd& w, Eigen::VectorXd& r,
                       Eigen::VectorXd& beta, double lambda, const std::vector<char>& penalize,
                       const Eigen::VectorXd& scale, const Eigen::VectorXd& col_sq,
                       const std::vector<int>& order) {
  double max_delta = 0.0;
  for (int j : order) {
    double cs = col_sq(j);
    if (cs <= 0.0) continue;
    double u = x.col(j).cwiseProduct(w).dot(r) + cs * beta(j);
    double bn;
    if (penalize[static_cast<std::size_t>(j)])
      bn = soft_threshold(u, 0.5 * lambda * scale(j)) / cs;
    else
      bn = u / cs;
    double d = bn - beta(j);
    if (d != 0.0) {
      r -= d * x.col(j);
      beta(j) = bn;
      max_delta = std::max(max_delta, std::abs(d));
    }
  }
  return max_delta;
}

}  // namespace detail

inline LassoFit fit_lasso_glm(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family,
                              double lambda, const std::vector<char>& penalize,
                              const LassoOptions& opts = {},
                              const Eigen::VectorXd* warm = nullptr,
                              const Eigen::VectorXd* penalty_scale = nullptr) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  if (lambda < 0.0) fail(ErrorCategory::domain, "fit", "lambda must be >= 0");
  if (penalize.size() != static_cast<std::size_t>(p))
    fail(ErrorCategory::domain, "fit", "penalize mask size mismatch");
  if (!x.allFinite() || !y.allFinite())
    fail(ErrorCategory::domain, "fit", "non-finite entries in design or outcome");

  Eigen::VectorXd scale = penalty_scale ? *penalty_scale : Eigen::VectorXd::Ones(p);
  Eigen::VectorXd beta = warm ? *warm : Eigen::VectorXd::Zero(p);
  std::vector<int> order(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j) order[static_cast<std::size_t>(j)] = static_cast<int>(j);

  LassoFit fit;
  fit.lambda = lambda;
  int sweeps = 0;
  bool saturated = false;

  auto objective = [&](const Eigen::VectorXd& b) {
    double pen = 0.0;
    for (Eigen::Index j = 0; j < p; ++j)
      if (penalize[static_cast<std::size_t>(j)]) pen += scale(j) * std::abs(b(j));
    return glm_deviance(family, y, glm_mu(family, x * b)) + lambda * pen;
  };

  if (family == Family::identity) {
    Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
    Eigen::VectorXd col_sq(p);
    for (Eigen::Index j = 0; j < p; ++j) col_sq(j) = x.col(j).squaredNorm();
    Eigen::VectorXd r = y - x * beta;
    while (sweeps < opts.max_sweeps) {
      double d = detail::cd_sweep(x, w, r, beta, lambda, penalize, scale, col_sq, order);
      ++sweeps;
      if (opts.record_objective) fit.objective_trace.push_back(objective(beta));
      if (d < opts.tol) {
        KktReport rep = kkt_check(x, y, family, beta, lambda, penalize, &scale);
        if (kkt_ok(rep, opts.kkt_tol * (1.0 + lambda))) {
          fit.converged = true;
          break;
        }
      }
    }
  } else {
    double prev_obj = objective(beta);
    if (opts.record_objective) fit.objective_trace.push_back(prev_obj);
    for (int outer = 0; outer < opts.max_outer; ++outer) {
      Eigen::VectorXd beta_old = beta;
      Eigen::VectorXd eta = x * beta;
      Eigen::VectorXd mu = glm_mu(family, eta);
      Eigen::VectorXd w(n);
      for (Eigen::Index i = 0; i < n; ++i) w(i) = std::max(mu(i) * (1.0 - mu(i)), 1e-10);
      Eigen::VectorXd z = eta + (y - mu).cwiseQuotient(w);
      Eigen::VectorXd col_sq(p);
      for (Eigen::Index j = 0; j < p; ++j) col_sq(j) = x.col(j).cwiseProduct(w).dot(x.col(j));
      Eigen::VectorXd r = z - eta;
      int inner = 0;
      while (inner < 1000 && sweeps < opts.max_sweeps) {
        double d = detail::cd_sweep(x, w, r, beta, lambda, penalize, scale, col_sq, order);
        ++sweeps;
        ++inner;
        if (d < 0.1 * opts.tol) break;
      }
      // backtracking keeps the true penalized deviance nonincreasing
      double obj = objective(beta);
      int halvings = 0;
      while (obj > prev_obj + 1e-12 && halvings < 40) {
        beta = 0.5 * (beta + beta_old);
        obj = objective(beta);
        ++halvings;
      }
      if (opts.record_objective) fit.objective_trace.push_back(obj);
      double step = (beta - beta_old).cwiseAbs().maxCoeff();
      prev_obj = obj;
      // saturated fit (possible separation at tiny lambda): stop here, the
      // objective is flat and predictions are already degenerate
      if (beta.cwiseAbs().maxCoeff() > 1e3) {
        saturated = true;
        break;
      }
      if (step < opts.tol) {
        KktReport rep = kkt_check(x, y, family, beta, lambda, penalize, &scale);
        if (kkt_ok(rep, opts.kkt_tol * (1.0 + lambda))) {
          fit.converged = true;
          break;
        }
      }
      if (sweeps >= opts.max_sweeps) break;
    }
  }

  if (!fit.converged && !saturated && sweeps >= opts.max_sweeps)
    fail(ErrorCategory::numeric, "fit",
         "lasso did not converge within " + std::to_string(opts.max_sweeps) + " sweeps");

  fit.sweeps = sweeps;
  fit.coef = beta;
  fit.deviance = glm_deviance(family, y, glm_mu(family, x * beta));
  fit.objective = objective(beta);
  return fit;
}

// Smallest lambda at which every penalized coefficient is zero: the
// unpenalized block is fit alone and scores of the penalized columns are
// taken at that partial solution.
inline double lasso_lambda_max(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family,
                               const std::vector<char>& penalize,
                               const Eigen::VectorXd* penalty_scale = nullptr) {
  const Eigen::Index p = x.cols();
  std::vector<int> unpen;
  for (Eigen::Index j = 0; j < p; ++j)
    if (!penalize[static_cast<std::size_t>(j)]) unpen.push_back(static_cast<int>(j));
  Eigen::VectorXd beta0 = Eigen::VectorXd::Zero(p);
  if (!unpen.empty()) {
    Eigen::MatrixXd xu(x.rows(), static_cast<Eigen::Index>(unpen.size()));
    for (std::size_t j = 0; j < unpen.size(); ++j) xu.col(static_cast<Eigen::Index>(j)) = x.col(unpen[j]);
    GlmOptions go;
    go.rank_policy = RankPolicy::drop;
    GlmFit f = fit_glm(xu, y, family, go);
    for (std::size_t j = 0; j < unpen.size(); ++j)
      beta0(unpen[j]) = f.coef(static_cast<Eigen::Index>(j));
  }
  Eigen::VectorXd score = lasso_scores(x, y, family, beta0);
  double lmax = 0.0;
  for (Eigen::Index j = 0; j < p; ++j) {
    if (!penalize[static_cast<std::size_t>(j)]) continue;
    double s = penalty_scale ? (*penalty_scale)(j) : 1.0;
    if (s <= 0.0) continue;
    lmax = std::max(lmax, std::abs(score(j)) / s);
  }
  return lmax;
}

inline std::vector<double> lambda_path(double lambda_max, int length = 50,
                                       double min_ratio = 1e-3) {
  if (length < 1) fail(ErrorCategory::domain, "fit", "path length must be >= 1");
  std::vector<double> path(static_cast<std::size_t>(length));
  if (lambda_max <= 0.0) {
    std::fill(path.begin(), path.end(), 0.0);
    return path;
  }
  if (length == 1) {
    path[0] = lambda_max;
    return path;
  }
  double loghi = std::log(lambda_max);
  double loglo = std::log(lambda_max * min_ratio);
  for (int i = 0; i < length; ++i)
    path[static_cast<std::size_t>(i)] =
        std::exp(loghi + (loglo - loghi) * static_cast<double>(i) / (length - 1));
  return path;
}

enum class LambdaRule { cv_min, cv_1se, fixed };

struct CvLambdaResult {
  std::vector<double> lambdas;
  std::vector<double> mean_deviance;
  std::vector<double> se_deviance;
  double lambda_min = 0.0;
  double lambda_1se = 0.0;

  double choose(LambdaRule rule) const {
    return rule == LambdaRule::cv_1se ? lambda_1se : lambda_min;
  }
};

// Fold labels 0..folds-1; stratified by class when requested.
inline std::vector<int> cv_fold_assignment(const Eigen::VectorXd& y, bool stratified, int folds,
                                           std::uint64_t seed, std::uint64_t stream) {
  const Eigen::Index n = y.size();
  std::vector<int> fold(static_cast<std::size_t>(n), 0);
  Rng rng(seed, stream);
  if (stratified) {
    std::vector<int> pos, neg;
    for (Eigen::Index i = 0; i < n; ++i) (y(i) > 0.5 ? pos : neg).push_back(static_cast<int>(i));
    rng.shuffle(pos);
    rng.shuffle(neg);
    int k = 0;
    for (int i : pos) fold[static_cast<std::size_t>(i)] = k++ % folds;
    for (int i : neg) fold[static_cast<std::size_t>(i)] = k++ % folds;
  } else {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = static_cast<int>(i);
    rng.shuffle(idx);
    for (std::size_t r = 0; r < idx.size(); ++r)
      fold[static_cast<std::size_t>(idx[r])] = static_cast<int>(r) % folds;
  }
  return fold;
}

inline void cv_pick_lambda(CvLambdaResult& out, const Eigen::MatrixXd& dev, int folds) {
  const std::size_t L = out.lambdas.size();
  out.mean_deviance.resize(L);
  out.se_deviance.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    double m = dev.col(static_cast<Eigen::Index>(l)).mean();
    double v = (dev.col(static_cast<Eigen::Index>(l)).array() - m).square().sum() /
               std::max(1, folds - 1);
    out.mean_deviance[l] = m;
    out.se_deviance[l] = std::sqrt(v / folds);
  }
  std::size_t best = 0;
  for (std::size_t l = 1; l < L; ++l)
    if (out.mean_deviance[l] < out.mean_deviance[best]) best = l;
  out.lambda_min = out.lambdas[best];
  double cutoff = out.mean_deviance[best] + out.se_deviance[best];
  std::size_t pick = best;
  for (std::size_t l = 0; l <= best; ++l) {
    if (out.mean_deviance[l] <= cutoff) {
      pick = l;
      break;
    }
  }
  out.lambda_1se = out.lambdas[pick];
}

// K-fold cross-validated held-out deviance along a warm-started path.
// `refit` fits at one lambda given (x, y, warm) and returns coefficients.
template <typename PathFitter>
inline CvLambdaResult cv_path_generic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                      Family family, std::vector<double> lambdas, int folds,
                                      std::uint64_t seed, PathFitter&& fit_one) {
  const Eigen::Index n = x.rows();
  if (folds < 2 || folds > n) fail(ErrorCategory::domain, "fit", "bad fold count");
  CvLambdaResult out;
  out.lambdas = std::move(lambdas);
  std::vector<int> fold = cv_fold_assignment(y, family == Family::logit, folds, seed, 0x11);
  const std::size_t L = out.lambdas.size();
  Eigen::MatrixXd dev(folds, static_cast<Eigen::Index>(L));
  for (int f = 0; f < folds; ++f) {
    std::vector<int> tr, te;
    for (Eigen::Index i = 0; i < n; ++i)
      (fold[static_cast<std::size_t>(i)] == f ? te : tr).push_back(static_cast<int>(i));
    Eigen::MatrixXd xtr(static_cast<Eigen::Index>(tr.size()), x.cols());
    Eigen::VectorXd ytr(static_cast<Eigen::Index>(tr.size()));
    Eigen::MatrixXd xte(static_cast<Eigen::Index>(te.size()), x.cols());
    Eigen::VectorXd yte(static_cast<Eigen::Index>(te.size()));
    for (std::size_t i = 0; i < tr.size(); ++i) {
      xtr.row(static_cast<Eigen::Index>(i)) = x.row(tr[i]);
      ytr(static_cast<Eigen::Index>(i)) = y(tr[i]);
    }
    for (std::size_t i = 0; i < te.size(); ++i) {
      xte.row(static_cast<Eigen::Index>(i)) = x.row(te[i]);
      yte(static_cast<Eigen::Index>(i)) = y(te[i]);
    }
    Eigen::VectorXd warm = Eigen::VectorXd::Zero(x.cols());
    for (std::size_t l = 0; l < L; ++l) {
      warm = fit_one(xtr, ytr, out.lambdas[l], warm);
      dev(f, static_cast<Eigen::Index>(l)) =
          glm_deviance(family, yte, glm_mu(family, xte * warm)) /
          static_cast<double>(te.size());
    }
  }
  cv_pick_lambda(out, dev, folds);
  return out;
}

inline CvLambdaResult cv_lambda_path(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                     Family family, const std::vector<char>& penalize,
                                     int folds, std::uint64_t seed, int path_len = 50,
                                     double min_ratio = 1e-3,
                                     const Eigen::VectorXd* penalty_scale = nullptr,
                                     const LassoOptions& opts = {}) {
  double lmax = lasso_lambda_max(x, y, family, penalize, penalty_scale);
  auto lambdas = lambda_path(lmax, path_len, min_ratio);
  return cv_path_generic(
      x, y, family, std::move(lambdas), folds, seed,
      [&](const Eigen::MatrixXd& xtr, const Eigen::VectorXd& ytr, double lambda,
          const Eigen::VectorXd& warm) {
        return fit_lasso_glm(xtr, ytr, family, lambda, penalize, opts, &warm, penalty_scale)
            .coef;
      });
}

}  // namespace tdr
