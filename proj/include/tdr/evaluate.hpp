#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "tdr/error.hpp"
#include "tdr/models.hpp"
#include "tdr/rng.hpp"

namespace tdr {

// Mann-Whitney AUC with ties counted 1/2, via midranks.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) fail(ErrorCategory::domain, "evaluate", "size mismatch");
  const std::size_t n = scores.size();
  std::size_t n1 = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) fail(ErrorCategory::domain, "evaluate", "labels must be 0/1");
    n1 += static_cast<std::size_t>(l);
  }
  std::size_t n0 = n - n1;
  if (n1 == 0 || n0 == 0)
    fail(ErrorCategory::domain, "evaluate", "both classes required for AUC");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    double midrank = 0.5 * static_cast<double>(i + 1 + j);  // average of ranks i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += midrank;
    i = j;
  }
  double u = rank_sum_pos - 0.5 * static_cast<double>(n1) * static_cast<double>(n1 + 1);
  return u / (static_cast<double>(n1) * static_cast<double>(n0));
}

struct CvSpec {
  int folds = 5;
  int repeats = 20;
  std::uint64_t seed = 1;
  bool stratified = true;   // binary outcomes only
  bool pooled_auc = false;  // pool scores across folds instead of averaging fold AUCs
};

struct CvResult {
  double mean = 0.0;
  std::vector<double> per_repeat;
  std::vector<std::string> warnings;
};

// Repeated k-fold cross-validation. Functional summaries are per-subject
// and precomputed; everything data-dependent in the fit (lambda, GCV, FPCA,
// standardization) is re-run inside each training fold. Metric: mean of
// per-fold AUCs (logit; pooled over folds when requested or when folds = n)
// or pooled out-of-fold R^2 (identity).
inline CvResult cv_metric(ModelKind kind, const FeatureBundle& fb, const ModelDesigns& des,
                          const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                          const FitConfig& cfg, const CvSpec& cv) {
  const int n = fb.n();
  if (cv.folds < 2 || cv.folds > n) fail(ErrorCategory::domain, "evaluate", "bad fold count");
  if (cv.repeats < 1) fail(ErrorCategory::domain, "evaluate", "repeats must be >= 1");
  const bool binary = cfg.family == Family::logit;
  // leave-one-out folds hold a single subject, so per-fold AUC is undefined
  // and scores are pooled regardless of the flag
  bool pooled = cv.pooled_auc || cv.folds == n;

  CvResult out;
  out.per_repeat.reserve(static_cast<std::size_t>(cv.repeats));
  for (int rep = 0; rep < cv.repeats; ++rep) {
    // fold assignment; non-stratified splits are redrawn if a fold lacks a class
    std::vector<int> fold;
    bool ok = false;
    for (int attempt = 0; attempt < 20 && !ok; ++attempt) {
      fold = cv_fold_assignment(y, binary && cv.stratified, cv.folds, cv.seed,
                                0x100 + 64 * static_cast<std::uint64_t>(rep) + attempt);
      ok = true;
      if (binary) {
        for (int f = 0; f < cv.folds && ok; ++f) {
          int pos = 0, tot = 0;
          for (int i = 0; i < n; ++i)
            if (fold[static_cast<std::size_t>(i)] == f) {
              ++tot;
              pos += y(i) > 0.5 ? 1 : 0;
            }
          bool trainable = (pos > 0 && pos < tot) || cv.folds == n;
          if (!trainable) ok = false;
        }
        if (!ok && attempt == 0)
          out.warnings.push_back("repeat " + std::to_string(rep) +
                                 ": single-class fold, resampled");
      }
      if (cv.folds == n) ok = true;
    }

    std::vector<double> fold_aucs;
    std::vector<double> pooled_scores;
    std::vector<int> pooled_labels;
    double press = 0.0, tss = 0.0;
    for (int f = 0; f < cv.folds; ++f) {
      std::vector<int> tr, te;
      for (int i = 0; i < n; ++i)
        (fold[static_cast<std::size_t>(i)] == f ? te : tr).push_back(i);
      if (te.empty()) continue;
      FitConfig fold_cfg = cfg;
      fold_cfg.seed = mix_seed(cv.seed, 0x5000 + 1024 * static_cast<std::uint64_t>(rep) + f);
      ModelFit fit = fit_model(kind, fb, des, z, y, fold_cfg, tr);
      double ybar_train = 0.0;
      for (int i : tr) ybar_train += y(i);
      ybar_train /= static_cast<double>(tr.size());
      std::vector<double> sc;
      std::vector<int> lb;
      for (int i : te) {
        double eta = model_eta(fit, fb, des, z, i);
        if (binary) {
          sc.push_back(eta);
          lb.push_back(y(i) > 0.5 ? 1 : 0);
        } else {
          press += (y(i) - eta) * (y(i) - eta);
          tss += (y(i) - ybar_train) * (y(i) - ybar_train);
        }
      }
      if (binary) {
        if (pooled) {
          pooled_scores.insert(pooled_scores.end(), sc.begin(), sc.end());
          pooled_labels.insert(pooled_labels.end(), lb.begin(), lb.end());
        } else {
          fold_aucs.push_back(auc(sc, lb));
        }
      }
    }
    double value;
    if (binary) {
      if (pooled)
        value = auc(pooled_scores, pooled_labels);
      else
        value = std::accumulate(fold_aucs.begin(), fold_aucs.end(), 0.0) /
                static_cast<double>(fold_aucs.size());
    } else {
      value = 1.0 - press / tss;
    }
    out.per_repeat.push_back(value);
  }
  out.mean = std::accumulate(out.per_repeat.begin(), out.per_repeat.end(), 0.0) /
             static_cast<double>(out.per_repeat.size());
  return out;
}

// 1 - [RSS/(n-q)] / [TSS/(n-1)], identity family only; q counts intercept,
// covariates, and the selected functional coefficients.
inline double adjusted_r2(const ModelFit& fit, const FeatureBundle& fb, const ModelDesigns& des,
                          const Eigen::MatrixXd& z, const Eigen::VectorXd& y) {
  if (fit.family != Family::identity)
    fail(ErrorCategory::domain, "evaluate", "adjusted R2 requires the identity family");
  const int n = fb.n();
  if (fit.q >= n) fail(ErrorCategory::domain, "evaluate", "q >= n in adjusted R2");
  double rss = 0.0, tss = 0.0;
  double ybar = y.mean();
  for (int i = 0; i < n; ++i) {
    double eta = model_eta(fit, fb, des, z, i);
    rss += (y(i) - eta) * (y(i) - eta);
    tss += (y(i) - ybar) * (y(i) - ybar);
  }
  return 1.0 - (rss / static_cast<double>(n - fit.q)) / (tss / static_cast<double>(n - 1));
}

struct BiomarkerTable {
  std::vector<std::string> ids;
  Eigen::VectorXd bm_a, bm_t, bm_d, bm_td;
};

// Per-subject weighted scores: the fitted functional term evaluated on each
// subject's own summaries (bm_a from m1, bm_T from m2, bm_D from m3, bm_TD
// from m4). Linear in the fitted coefficient by construction.
inline BiomarkerTable biomarker_scores(const std::map<ModelKind, ModelFit>& fits,
                                       const FeatureBundle& fb, const ModelDesigns& des) {
  for (ModelKind k : {ModelKind::m1, ModelKind::m2, ModelKind::m3, ModelKind::m4})
    if (fits.find(k) == fits.end())
      fail(ErrorCategory::domain, "evaluate", "missing fit for " + model_name(k));
  const int n = fb.n();
  BiomarkerTable t;
  t.ids = fb.ids;
  t.bm_a.resize(n);
  t.bm_t.resize(n);
  t.bm_d.resize(n);
  t.bm_td.resize(n);
  for (int i = 0; i < n; ++i) {
    t.bm_a(i) = model_functional_score(fits.at(ModelKind::m1), fb, des, i);
    t.bm_t(i) = model_functional_score(fits.at(ModelKind::m2), fb, des, i);
    t.bm_d(i) = model_functional_score(fits.at(ModelKind::m3), fb, des, i);
    t.bm_td(i) = model_functional_score(fits.at(ModelKind::m4), fb, des, i);
  }
  return t;
}

}  // namespace tdr
