#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "tdr/error.hpp"
#include "tdr/special.hpp"

namespace tdr {

enum class Family { identity, logit };

inline double logit_inv(double eta) {
  if (eta > 30.0) return 1.0 - 1e-13;
  if (eta < -30.0) return 1e-13;
  return 1.0 / (1.0 + std::exp(-eta));
}

inline Eigen::VectorXd glm_mu(Family family, const Eigen::VectorXd& eta) {
  if (family == Family::identity) return eta;
  Eigen::VectorXd mu(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) mu(i) = logit_inv(eta(i));
  return mu;
}

// Deviance used as the optimization objective throughout: RSS for the
// identity family, -2 log-likelihood (up to constant) for logit.
inline double glm_deviance(Family family, const Eigen::VectorXd& y, const Eigen::VectorXd& mu) {
  if (family == Family::identity) return (y - mu).squaredNorm();
  double d = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    double m = std::min(1.0 - 1e-13, std::max(1e-13, mu(i)));
    d += -2.0 * (y(i) * std::log(m) + (1.0 - y(i)) * std::log(1.0 - m));
  }
  return d;
}

inline double glm_loglik(Family family, const Eigen::VectorXd& y, const Eigen::VectorXd& mu) {
  if (family == Family::logit) return -0.5 * glm_deviance(family, y, mu);
  double rss = (y - mu).squaredNorm();
  double n = static_cast<double>(y.size());
  double sigma2 = std::max(rss / n, 1e-300);
  return -0.5 * n * (std::log(2.0 * M_PI * sigma2) + 1.0);
}

enum class RankPolicy { raise, drop };

struct GlmOptions {
  int max_iter = 100;
  double tol = 1e-8;
  RankPolicy rank_policy = RankPolicy::raise;
  double separation_norm = 1e6;
};

struct GlmFit {
  Eigen::VectorXd coef;  // dropped columns carry exactly 0
  Eigen::VectorXd se;
  Eigen::MatrixXd cov;
  double loglik = 0.0;
  double deviance = 0.0;
  double dispersion = 1.0;
  int iterations = 0;
  bool converged = false;
  int rank = 0;
  std::vector<int> dropped;

  double z_stat(int j) const { return se(j) > 0.0 ? coef(j) / se(j) : 0.0; }
  double p_value(int j) const { return se(j) > 0.0 ? normal_two_sided_p(z_stat(j)) : 1.0; }
};

// Maximum likelihood by iteratively reweighted least squares. The design
// must include the intercept column explicitly. Convergence: max absolute
// coefficient change below tol. Rank-deficient designs either raise (with
// the offending columns named) or drop the redundant columns to zero.
inline GlmFit fit_glm(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family,
                      const GlmOptions& opts = {}) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  if (n != y.size()) fail(ErrorCategory::domain, "fit", "design/outcome size mismatch");
  if (n <= p)
    fail(ErrorCategory::domain, "fit",
         "need more observations than columns (n=" + std::to_string(n) +
             ", p=" + std::to_string(p) + ")");
  if (!x.allFinite() || !y.allFinite())
    fail(ErrorCategory::domain, "fit", "non-finite entries in design or outcome");
  if (family == Family::logit)
    for (Eigen::Index i = 0; i < n; ++i)
      if (y(i) != 0.0 && y(i) != 1.0)
        fail(ErrorCategory::domain, "fit", "logit outcomes must be coded {0,1}");

  // detect rank deficiency on the column-scaled design
  Eigen::VectorXd scale(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    double s = x.col(j).norm();
    scale(j) = s > 0.0 ? s : 1.0;
  }
  Eigen::MatrixXd xs = x * scale.cwiseInverse().asDiagonal();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xs);
  qr.setThreshold(1e-10);
  std::vector<int> keep, dropped;
  if (qr.rank() < p) {
    std::vector<char> pivoted(static_cast<std::size_t>(p), 0);
    for (Eigen::Index k = 0; k < qr.rank(); ++k)
      pivoted[static_cast<std::size_t>(qr.colsPermutation().indices()(k))] = 1;
    for (Eigen::Index j = 0; j < p; ++j)
      (pivoted[static_cast<std::size_t>(j)] ? keep : dropped).push_back(static_cast<int>(j));
    if (opts.rank_policy == RankPolicy::raise) {
      std::string cols;
      for (int j : dropped) cols += (cols.empty() ? "" : ", ") + std::to_string(j);
      fail(ErrorCategory::model, "fit", "rank-deficient design; redundant columns: " + cols);
    }
  } else {
    for (Eigen::Index j = 0; j < p; ++j) keep.push_back(static_cast<int>(j));
  }

  Eigen::MatrixXd xk(n, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) xk.col(static_cast<Eigen::Index>(j)) = x.col(keep[j]);
  const Eigen::Index pk = xk.cols();

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(pk);
  Eigen::MatrixXd info(pk, pk);
  int iter = 0;
  bool converged = false;

  if (family == Family::identity) {
    info = xk.transpose() * xk;
    beta = info.ldlt().solve(xk.transpose() * y);
    iter = 1;
    converged = true;
  } else {
    for (iter = 1; iter <= opts.max_iter; ++iter) {
      Eigen::VectorXd eta = xk * beta;
      Eigen::VectorXd mu = glm_mu(family, eta);
      Eigen::VectorXd w(n);
      for (Eigen::Index i = 0; i < n; ++i) w(i) = std::max(mu(i) * (1.0 - mu(i)), 1e-10);
      Eigen::VectorXd z = eta + (y - mu).cwiseQuotient(w);
      Eigen::MatrixXd xw = xk.transpose() * w.asDiagonal();
      info = xw * xk;
      Eigen::VectorXd beta_new = info.ldlt().solve(xw * z);
      double delta = (beta_new - beta).cwiseAbs().maxCoeff();
      beta = beta_new;
      if (beta.cwiseAbs().maxCoeff() > opts.separation_norm)
        fail(ErrorCategory::numeric, "fit",
             "diverging coefficients (possible perfect separation)");
      if (delta < opts.tol) {
        converged = true;
        break;
      }
    }
    // final information at the solution
    Eigen::VectorXd mu = glm_mu(family, xk * beta);
    Eigen::VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i) w(i) = std::max(mu(i) * (1.0 - mu(i)), 1e-10);
    info = xk.transpose() * w.asDiagonal() * xk;
  }

  GlmFit fit;
  fit.iterations = iter;
  fit.converged = converged;
  fit.rank = static_cast<int>(pk);
  fit.dropped = dropped;
  Eigen::VectorXd mu = glm_mu(family, xk * beta);
  fit.deviance = glm_deviance(family, y, mu);
  fit.loglik = glm_loglik(family, y, mu);

  Eigen::MatrixXd cov_k = info.ldlt().solve(Eigen::MatrixXd::Identity(pk, pk));
  if (family == Family::identity) {
    double dof = static_cast<double>(n - pk);
    fit.dispersion = dof > 0 ? fit.deviance / dof : 0.0;
    cov_k *= fit.dispersion;
  }

  fit.coef = Eigen::VectorXd::Zero(p);
  fit.se = Eigen::VectorXd::Zero(p);
  fit.cov = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t a = 0; a < keep.size(); ++a) {
    fit.coef(keep[a]) = beta(static_cast<Eigen::Index>(a));
    fit.se(keep[a]) = std::sqrt(std::max(0.0, cov_k(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a))));
    for (std::size_t b = 0; b < keep.size(); ++b)
      fit.cov(keep[a], keep[b]) = cov_k(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
  }
  return fit;
}

// Wald test that a block of coefficients is jointly zero.
inline double joint_wald_pvalue(const GlmFit& fit, const std::vector<int>& idx) {
  if (idx.empty()) return 1.0;
  Eigen::VectorXd b(static_cast<Eigen::Index>(idx.size()));
  Eigen::MatrixXd v(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t a = 0; a < idx.size(); ++a) {
    b(static_cast<Eigen::Index>(a)) = fit.coef(idx[a]);
    for (std::size_t c = 0; c < idx.size(); ++c)
      v(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c)) = fit.cov(idx[a], idx[c]);
  }
  Eigen::VectorXd sol = v.ldlt().solve(b);
  double stat = b.dot(sol);
  return chi2_sf(stat, static_cast<double>(idx.size()));
}

}  // namespace tdr
