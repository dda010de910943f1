#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tdr/activity.hpp"
#include "tdr/distribution.hpp"
#include "tdr/error.hpp"

namespace tdr {

enum class Boundary { truncate, wrap };

// Time-by-distribution surface: row t, column p, value = p-th quantile of
// all observations pooled over valid days with slot time in [t-h, t+h).
struct TDSurface {
  std::vector<double> t_grid;
  std::vector<double> p_grid;
  Eigen::MatrixXd values;  // |t_grid| x |p_grid|
  double window_half_width = 5.0;
  std::vector<int> pooled_counts;
};

// Time-varying L-moment curves, orders 1..max_order (row r-1 = order r).
struct LMomentCurveSet {
  std::vector<double> t_grid;
  int max_order = 4;
  Eigen::MatrixXd curves;  // max_order x |t_grid|
  std::vector<int> pooled_counts;
};

// Window centers covering the day at a given stride: stride/2, 3*stride/2, ...
inline std::vector<double> default_t_grid(int stride = 10) {
  if (stride < 1 || kMinutesPerDay % stride != 0)
    fail(ErrorCategory::domain, "tdobject", "stride must divide 1440");
  std::vector<double> g;
  g.reserve(static_cast<std::size_t>(kMinutesPerDay / stride));
  for (int t = 0; t < kMinutesPerDay / stride; ++t) g.push_back(stride * (t + 0.5));
  return g;
}

// Pool observed values across valid days whose slot time falls in
// [t-h, t+h); day boundaries follow the boundary policy.
inline std::vector<double> window_pool(const SubjectSeries& series, double t_center, double h,
                                       Boundary boundary) {
  std::vector<double> pooled;
  const int slots = static_cast<int>(series.days.empty() ? 0 : series.days.front().values.size());
  const double width = static_cast<double>(series.epoch_width);
  const double period = slots * width;
  double lo = t_center - h;
  double hi = t_center + h;
  for (const auto& day : series.days) {
    if (!day.valid) continue;
    for (int s = 0; s < slots; ++s) {
      if (!day.observed[static_cast<std::size_t>(s)]) continue;
      double st = s * width;
      bool in;
      if (boundary == Boundary::truncate) {
        in = st >= lo && st < hi;
      } else {
        double d = std::fmod(st - lo, period);
        if (d < 0) d += period;
        in = d < hi - lo;
      }
      if (in) pooled.push_back(day.values[static_cast<std::size_t>(s)]);
    }
  }
  return pooled;
}

inline TDSurface td_surface(const SubjectSeries& series, const std::vector<double>& t_grid,
                            const std::vector<double>& p_grid, double h,
                            Boundary boundary = Boundary::truncate) {
  if (h < 1.0) fail(ErrorCategory::domain, "tdobject", "window half-width must be >= 1 minute");
  if (series.valid_day_count() < 1)
    fail(ErrorCategory::domain, "tdobject",
         "subject " + series.subject_id + " has no valid days");
  TDSurface surf;
  surf.t_grid = t_grid;
  surf.p_grid = p_grid;
  surf.window_half_width = h;
  surf.values.resize(static_cast<Eigen::Index>(t_grid.size()),
                     static_cast<Eigen::Index>(p_grid.size()));
  surf.pooled_counts.resize(t_grid.size());
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    auto pooled = window_pool(series, t_grid[i], h, boundary);
    if (pooled.empty())
      fail(ErrorCategory::domain, "tdobject",
           "subject " + series.subject_id + ": window at t=" + std::to_string(t_grid[i]) +
               " pools zero observations");
    surf.pooled_counts[i] = static_cast<int>(pooled.size());
    std::sort(pooled.begin(), pooled.end());
    for (std::size_t j = 0; j < p_grid.size(); ++j)
      surf.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          empirical_quantile(pooled, p_grid[j]);
  }
  return surf;
}

inline LMomentCurveSet time_varying_l_moments(const SubjectSeries& series,
                                              const std::vector<double>& t_grid, double h,
                                              int max_order,
                                              Boundary boundary = Boundary::truncate) {
  if (max_order < 1) fail(ErrorCategory::domain, "tdobject", "max_order must be >= 1");
  LMomentCurveSet set;
  set.t_grid = t_grid;
  set.max_order = max_order;
  set.curves.resize(max_order, static_cast<Eigen::Index>(t_grid.size()));
  set.pooled_counts.resize(t_grid.size());
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    auto pooled = window_pool(series, t_grid[i], h, boundary);
    if (static_cast<int>(pooled.size()) < max_order)
      fail(ErrorCategory::domain, "tdobject",
           "subject " + series.subject_id + ": window at t=" + std::to_string(t_grid[i]) +
               " pools " + std::to_string(pooled.size()) + " < order " +
               std::to_string(max_order));
    set.pooled_counts[i] = static_cast<int>(pooled.size());
    std::sort(pooled.begin(), pooled.end());
    auto l = l_moments_sorted(pooled, max_order);
    for (int r = 0; r < max_order; ++r)
      set.curves(r, static_cast<Eigen::Index>(i)) = l[static_cast<std::size_t>(r)];
  }
  return set;
}

struct DiurnalCurve {
  std::vector<double> t_grid;  // slot start times
  std::vector<double> values;
  std::vector<std::uint8_t> interpolated;
};

// Per-slot mean across valid days. Slots observed on no day are linearly
// interpolated from the nearest observed slots and flagged.
inline DiurnalCurve diurnal_curve(const SubjectSeries& series) {
  if (series.valid_day_count() < 1)
    fail(ErrorCategory::domain, "tdobject",
         "subject " + series.subject_id + " has no valid days");
  const int slots = static_cast<int>(series.days.front().values.size());
  DiurnalCurve c;
  c.t_grid.resize(static_cast<std::size_t>(slots));
  c.values.assign(static_cast<std::size_t>(slots), 0.0);
  c.interpolated.assign(static_cast<std::size_t>(slots), 0);
  std::vector<int> counts(static_cast<std::size_t>(slots), 0);
  for (int s = 0; s < slots; ++s) c.t_grid[static_cast<std::size_t>(s)] = s * series.epoch_width;
  for (const auto& day : series.days) {
    if (!day.valid) continue;
    for (int s = 0; s < slots; ++s) {
      if (day.observed[static_cast<std::size_t>(s)]) {
        c.values[static_cast<std::size_t>(s)] += day.values[static_cast<std::size_t>(s)];
        ++counts[static_cast<std::size_t>(s)];
      }
    }
  }
  for (int s = 0; s < slots; ++s) {
    if (counts[static_cast<std::size_t>(s)] > 0)
      c.values[static_cast<std::size_t>(s)] /= counts[static_cast<std::size_t>(s)];
    else
      c.interpolated[static_cast<std::size_t>(s)] = 1;
  }
  // fill gaps linearly; runs touching the ends extend the nearest value
  int s = 0;
  while (s < slots) {
    if (!c.interpolated[static_cast<std::size_t>(s)]) {
      ++s;
      continue;
    }
    int run_start = s;
    while (s < slots && c.interpolated[static_cast<std::size_t>(s)]) ++s;
    int run_end = s;  // exclusive
    if (run_start == 0 && run_end == slots)
      fail(ErrorCategory::domain, "tdobject",
           "subject " + series.subject_id + " has no observed slots");
    if (run_start == 0) {
      for (int k = 0; k < run_end; ++k)
        c.values[static_cast<std::size_t>(k)] = c.values[static_cast<std::size_t>(run_end)];
    } else if (run_end == slots) {
      for (int k = run_start; k < slots; ++k)
        c.values[static_cast<std::size_t>(k)] = c.values[static_cast<std::size_t>(run_start) - 1];
    } else {
      double v0 = c.values[static_cast<std::size_t>(run_start) - 1];
      double v1 = c.values[static_cast<std::size_t>(run_end)];
      int len = run_end - run_start + 1;
      for (int k = run_start; k < run_end; ++k)
        c.values[static_cast<std::size_t>(k)] =
            v0 + (v1 - v0) * static_cast<double>(k - run_start + 1) / len;
    }
  }
  return c;
}

// Grand mean over all observed values in valid days.
inline double subject_mean(const SubjectSeries& series) {
  double sum = 0.0;
  long n = 0;
  for (const auto& day : series.days) {
    if (!day.valid) continue;
    for (std::size_t s = 0; s < day.values.size(); ++s) {
      if (day.observed[s]) {
        sum += day.values[s];
        ++n;
      }
    }
  }
  if (n == 0)
    fail(ErrorCategory::domain, "tdobject",
         "subject " + series.subject_id + " has no observed values");
  return sum / static_cast<double>(n);
}

}  // namespace tdr
