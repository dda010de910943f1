#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "tdr/lasso.hpp"

namespace tdr {

// ---------------------------------------------------------------------------
// Group exponential lasso (GEL)
//
// Penalty per group g with l1 norm s_g = sum_{j in g} |beta_j|:
//   P_g = lambda^2 tau_g (1 - exp(-s_g / (lambda tau_g))),  tau_g = tau |g|.
//
// The penalty is concave in s_g: empty groups face the full rate lambda and
// can be removed entirely, while groups carrying mass face a reduced
// within-group rate lambda exp(-s_g / (lambda tau_g)); individual
// coefficients inside a retained group can still be zero (bi-level
// selection). As tau -> infinity the rate tends to lambda everywhere and the
// penalty reduces to an ordinary lasso on the individual coefficients.
//
// Fitting is majorize-minimize: linearize each group penalty at the current
// norm (an upper bound, by concavity) and solve the resulting weighted
// lasso; iterate to a stationary point.
// ---------------------------------------------------------------------------

struct Group {
  std::string name;
  std::vector<int> cols;
};

struct GelOptions {
  double tau = 1.0 / 3.0;
  int max_lla = 60;
  double tol = 1e-7;
  LassoOptions inner;
};

struct GelFit {
  Eigen::VectorXd coef;
  double lambda = 0.0;
  bool converged = false;
  std::vector<int> selected_groups;  // groups with any nonzero coefficient
};

inline double gel_penalty_value(const Eigen::VectorXd& beta, double lambda,
                                const std::vector<Group>& groups, double tau) {
  if (lambda <= 0.0) return 0.0;
  double v = 0.0;
  for (const auto& g : groups) {
    double s = 0.0;
    for (int j : g.cols) s += std::abs(beta(j));
    double tg = tau * static_cast<double>(g.cols.size());
    v += lambda * lambda * tg * (1.0 - std::exp(-s / (lambda * tg)));
  }
  return v;
}

inline GelFit fit_gel_glm(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, Family family,
                          double lambda, const std::vector<Group>& groups,
                          const GelOptions& opts = {}, const Eigen::VectorXd* warm = nullptr) {
  const Eigen::Index p = x.cols();
  std::vector<char> penalize(static_cast<std::size_t>(p), 0);
  for (const auto& g : groups)
    for (int j : g.cols) penalize[static_cast<std::size_t>(j)] = 1;

  Eigen::VectorXd beta = warm ? *warm : Eigen::VectorXd::Zero(p);
  GelFit out;
  out.lambda = lambda;
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(p);
  for (int it = 0; it < opts.max_lla; ++it) {
    // local rate: d P_g / d s_g at the current group norm
    for (const auto& g : groups) {
      double s = 0.0;
      for (int j : g.cols) s += std::abs(beta(j));
      double tg = opts.tau * static_cast<double>(g.cols.size());
      double rate = lambda > 0.0 ? std::exp(-s / (lambda * tg)) : 0.0;
      for (int j : g.cols) scale(j) = rate;
    }
    LassoFit inner = fit_lasso_glm(x, y, family, lambda, penalize, opts.inner, &beta, &scale);
    double step = (inner.coef - beta).cwiseAbs().maxCoeff();
    beta = inner.coef;
    if (step < opts.tol) {
      out.converged = true;
      break;
    }
  }
  out.coef = beta;
  for (std::size_t gi = 0; gi < groups.size(); ++gi)
    for (int j : groups[gi].cols)
      if (beta(j) != 0.0) {
        out.selected_groups.push_back(static_cast<int>(gi));
        break;
      }
  return out;
}

inline CvLambdaResult cv_gel_path(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                  Family family, const std::vector<Group>& groups, int folds,
                                  std::uint64_t seed, int path_len = 50, double min_ratio = 1e-3,
                                  const GelOptions& opts = {}) {
  std::vector<char> penalize(static_cast<std::size_t>(x.cols()), 0);
  for (const auto& g : groups)
    for (int j : g.cols) penalize[static_cast<std::size_t>(j)] = 1;
  double lmax = lasso_lambda_max(x, y, family, penalize);
  auto lambdas = lambda_path(lmax, path_len, min_ratio);
  return cv_path_generic(
      x, y, family, std::move(lambdas), folds, seed,
      [&](const Eigen::MatrixXd& xtr, const Eigen::VectorXd& ytr, double lambda,
          const Eigen::VectorXd& warm) {
        return fit_gel_glm(xtr, ytr, family, lambda, groups, opts, &warm).coef;
      });
}

}  // namespace tdr
