#pragma once

// Test-only oracles, kept independent of the library implementations they
// check: direct formula transcriptions and brute-force enumerations.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "tdr/activity.hpp"
#include "tdr/rng.hpp"

namespace oracle {

// Parzen quantile by literal transcription: find the bracket by scanning
// integers rather than flooring.
inline double parzen_quantile(const std::vector<double>& sorted, double p) {
  const std::size_t n = sorted.size();
  double g = (static_cast<double>(n) + 1.0) * p;
  long j = 0;
  while (static_cast<double>(j + 1) <= g) ++j;  // j = [(n+1)p]
  double w = g - static_cast<double>(j);
  if (j < 1) return sorted.front();
  if (j >= static_cast<long>(n)) return sorted.back();
  return (1.0 - w) * sorted[static_cast<std::size_t>(j) - 1] + w * sorted[static_cast<std::size_t>(j)];
}

// U-statistic sample L-moment: average over all size-r subsamples of the
// expectation kernel (1/r) sum_k (-1)^k C(r-1,k) X_(r-k:r).
inline double l_moment_bruteforce(std::vector<double> sample, int r) {
  std::sort(sample.begin(), sample.end());
  const int n = static_cast<int>(sample.size());
  std::vector<int> idx(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) idx[static_cast<std::size_t>(i)] = i;
  auto binom = [](int a, int b) {
    double v = 1.0;
    for (int i = 0; i < b; ++i) v = v * (a - i) / (i + 1);
    return v;
  };
  double total = 0.0;
  long count = 0;
  for (;;) {
    double kernel = 0.0;
    for (int k = 0; k < r; ++k) {
      double sign = (k % 2 == 0) ? 1.0 : -1.0;
      kernel += sign * binom(r - 1, k) * sample[static_cast<std::size_t>(idx[static_cast<std::size_t>(r - k - 1)])];
    }
    total += kernel / r;
    ++count;
    int i = r - 1;
    while (i >= 0 && idx[static_cast<std::size_t>(i)] == n - r + i) --i;
    if (i < 0) break;
    ++idx[static_cast<std::size_t>(i)];
    for (int j = i + 1; j < r; ++j) idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j) - 1] + 1;
  }
  return total / static_cast<double>(count);
}

// AUC by brute force over all positive-negative pairs, ties counted 1/2.
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

// Dense uniform panel: every minute observed, values from the callback.
template <typename Fn>
inline tdr::ActivityPanel make_panel(int n_subjects, int n_days, Fn&& value) {
  tdr::ActivityPanel panel;
  for (int i = 0; i < n_subjects; ++i) {
    tdr::SubjectSeries s;
    s.subject_id = "s" + std::to_string(i + 1);
    for (int d = 0; d < n_days; ++d) {
      tdr::DaySeries day;
      day.day_index = d + 1;
      day.values.resize(tdr::kMinutesPerDay);
      day.observed.assign(tdr::kMinutesPerDay, 1);
      for (int m = 0; m < tdr::kMinutesPerDay; ++m)
        day.values[static_cast<std::size_t>(m)] = value(i, d, m);
      s.days.push_back(std::move(day));
    }
    panel.subjects.push_back(std::move(s));
  }
  panel.refresh_validity();
  return panel;
}

inline Eigen::MatrixXd random_design(tdr::Rng& rng, int n, int p, bool intercept = true) {
  Eigen::MatrixXd x(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) x(i, j) = (intercept && j == 0) ? 1.0 : rng.normal();
  return x;
}

}  // namespace oracle
