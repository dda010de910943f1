#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "tdr/activity.hpp"
#include "tdr/error.hpp"
#include "tdr/glm.hpp"
#include "tdr/models.hpp"
#include "tdr/rng.hpp"
#include "tdr/tdobject.hpp"

namespace tdr {

enum class DiurnalTemplate { flat, unimodal, bimodal };
enum class PlantedEffect { none, scalar, temporal, distributional, td_surface, lmoment_order_r };

inline std::string to_string(DiurnalTemplate t) {
  switch (t) {
    case DiurnalTemplate::flat: return "flat";
    case DiurnalTemplate::unimodal: return "unimodal";
    case DiurnalTemplate::bimodal: return "bimodal";
  }
  return "?";
}

inline std::string to_string(PlantedEffect e) {
  switch (e) {
    case PlantedEffect::none: return "none";
    case PlantedEffect::scalar: return "scalar";
    case PlantedEffect::temporal: return "temporal";
    case PlantedEffect::distributional: return "distributional";
    case PlantedEffect::td_surface: return "td_surface";
    case PlantedEffect::lmoment_order_r: return "lmoment_order_r";
  }
  return "?";
}

inline DiurnalTemplate parse_template(const std::string& s) {
  if (s == "flat") return DiurnalTemplate::flat;
  if (s == "unimodal") return DiurnalTemplate::unimodal;
  if (s == "bimodal") return DiurnalTemplate::bimodal;
  fail(ErrorCategory::config, "synth", "unknown diurnal template '" + s + "'");
}

inline PlantedEffect parse_effect(const std::string& s) {
  if (s == "none") return PlantedEffect::none;
  if (s == "scalar") return PlantedEffect::scalar;
  if (s == "temporal") return PlantedEffect::temporal;
  if (s == "distributional") return PlantedEffect::distributional;
  if (s == "td_surface") return PlantedEffect::td_surface;
  if (s == "lmoment_order_r") return PlantedEffect::lmoment_order_r;
  fail(ErrorCategory::config, "synth", "unknown planted effect '" + s + "'");
}

struct SynthConfig {
  int n_subjects = 92;
  int n_days = 7;
  DiurnalTemplate pattern = DiurnalTemplate::bimodal;
  double zero_inflation = 0.5;  // probability of a zero minute
  double dispersion = 1.0;      // lognormal sigma
  double subject_sd = 0.4;      // sd of subject-level log activity
  double base_level = 50.0;     // median activity of the template baseline
  PlantedEffect effect = PlantedEffect::none;
  int lmoment_order = 3;
  Family outcome = Family::logit;
  double effect_size = 1.5;  // sd of the planted PA term on the linear predictor
  double noise = 1.0;        // residual sd (identity family)
  double covariate_effect_scale = 1.0;  // 0 makes outcomes independent of Z
  std::uint64_t seed = 1;

  void validate() const {
    if (n_subjects < 2 || n_days < 1) fail(ErrorCategory::config, "synth", "cohort too small");
    if (zero_inflation < 0.0 || zero_inflation > 1.0)
      fail(ErrorCategory::config, "synth", "zero_inflation must be in [0,1]");
    if (dispersion < 0.0) fail(ErrorCategory::config, "synth", "dispersion must be >= 0");
    if (effect == PlantedEffect::none && outcome == Family::identity && noise == 0.0 &&
        dispersion == 0.0 && subject_sd == 0.0)
      fail(ErrorCategory::config, "synth",
           "degenerate configuration: no effect, no noise, no variance");
    if (lmoment_order < 2 || lmoment_order > 4)
      fail(ErrorCategory::config, "synth", "planted L-moment order must be in 2..4");
  }
};

struct GroundTruth {
  PlantedEffect effect = PlantedEffect::none;
  std::vector<double> t_grid, p_grid;
  double beta_scalar = 0.0;
  Eigen::VectorXd beta_t;       // temporal effect on t_grid
  Eigen::VectorXd beta_p;       // distributional effect on p_grid
  Eigen::MatrixXd beta_surface; // T x P
  Eigen::VectorXd beta_lmom_t;  // effect on the planted order's curve
  int lmoment_order = 3;
  Eigen::VectorXd eta_pa;       // planted PA term per subject (post scaling)
  Eigen::VectorXd eta_total;    // full linear predictor per subject
  double scale = 1.0;           // multiplier applied to the raw template
};

struct SynthOutput {
  ActivityPanel panel;
  std::vector<SubjectRecord> records;
  std::vector<std::string> covariate_names;
  GroundTruth truth;
};

namespace detail {

inline double template_value(DiurnalTemplate t, double minute) {
  switch (t) {
    case DiurnalTemplate::flat: return 1.0;
    case DiurnalTemplate::unimodal: {
      double u = (minute - 780.0) / 200.0;
      return 1.0 + 2.0 * std::exp(-u * u);
    }
    case DiurnalTemplate::bimodal: {
      double a = (minute - 600.0) / 120.0;
      double b = (minute - 1020.0) / 130.0;
      return 1.0 + 1.8 * std::exp(-a * a) + 1.4 * std::exp(-b * b);
    }
  }
  return 1.0;
}

// Planted effect shapes (unscaled); the realized scale is chosen so the PA
// term has the configured sd across subjects.
inline double shape_beta_t(double minute) {
  double u = (minute - 540.0) / 150.0;  // morning bump
  return std::exp(-u * u);
}

inline double shape_beta_p(double p) { return p * p; }  // upper-quantile contrast

inline double shape_beta_tp(double minute, double p) {
  double u = (minute - 540.0) / 160.0;
  double v = (p - 0.85) / 0.18;
  return std::exp(-u * u - v * v);
}

// L2 of a unit-scale gamma(shape) variate: Gamma(shape + 1/2) / (sqrt(pi) Gamma(shape)).
inline double gamma_l2(double shape) {
  return std::exp(std::lgamma(shape + 0.5) - std::lgamma(shape)) / std::sqrt(M_PI);
}

}  // namespace detail

// Synthetic cohort with a known planted effect. Activity is zero-inflated
// lognormal around a subject- and time-modulated level; the planted
// L-moment mode instead uses a sign-mixed standardized gamma family whose
// first two L-moments are fixed across subjects while higher orders vary
// with a per-subject mixing weight. Outcomes are generated through the
// matching model equation on the realized functional summaries.
inline SynthOutput generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthOutput out;
  out.panel.epoch_width = 1;
  out.covariate_names = {"age", "female"};

  const int n = cfg.n_subjects;
  std::vector<double> t_grid = default_t_grid(10);
  std::vector<double> p_grid = quantile_levels(99);
  const double h = 5.0;

  std::vector<double> subj_level(static_cast<std::size_t>(n));
  std::vector<double> subj_mix(static_cast<std::size_t>(n));
  std::vector<double> age(static_cast<std::size_t>(n));
  std::vector<double> female(static_cast<std::size_t>(n));

  const double gam_shape = 1.0;  // exponential component
  const double gam_l2 = detail::gamma_l2(gam_shape);

  for (int i = 0; i < n; ++i) {
    Rng rng(cfg.seed, 0x1000 + static_cast<std::uint64_t>(i));
    subj_level[static_cast<std::size_t>(i)] = rng.normal(0.0, cfg.subject_sd);
    subj_mix[static_cast<std::size_t>(i)] = rng.uniform(0.1, 0.9);
    age[static_cast<std::size_t>(i)] = std::round(rng.normal(73.0, 7.0));
    female[static_cast<std::size_t>(i)] = rng.bernoulli(0.5) ? 1.0 : 0.0;

    SubjectSeries s;
    s.subject_id = "s" + std::to_string(i + 1);
    for (int d = 0; d < cfg.n_days; ++d) {
      DaySeries day;
      day.day_index = d + 1;
      day.values.resize(kMinutesPerDay);
      day.observed.assign(kMinutesPerDay, 1);
      for (int m = 0; m < kMinutesPerDay; ++m) {
        double tmpl = detail::template_value(cfg.pattern, m + 0.5);
        double v;
        if (cfg.effect == PlantedEffect::lmoment_order_r) {
          // mean 6, L2 1 on the standardized scale, skewness set by the mix
          double g = (rng.gamma(gam_shape) - gam_shape) / gam_l2;
          double d2 = rng.bernoulli(subj_mix[static_cast<std::size_t>(i)]) ? g : -g;
          v = tmpl * (6.0 + d2) * std::exp(subj_level[static_cast<std::size_t>(i)]);
          if (v < 0.0) v = 0.0;
        } else {
          if (cfg.zero_inflation > 0.0 && rng.bernoulli(cfg.zero_inflation)) {
            v = 0.0;
          } else {
            double mu = std::log(cfg.base_level * tmpl) + subj_level[static_cast<std::size_t>(i)];
            v = cfg.dispersion > 0.0 ? rng.lognormal(mu, cfg.dispersion) : std::exp(mu);
          }
        }
        day.values[static_cast<std::size_t>(m)] = v;
      }
      s.days.push_back(std::move(day));
    }
    out.panel.subjects.push_back(std::move(s));
  }
  out.panel.refresh_validity();

  // realized PA term through the matching model equation
  GroundTruth& gt = out.truth;
  gt.effect = cfg.effect;
  gt.t_grid = t_grid;
  gt.p_grid = p_grid;
  gt.lmoment_order = cfg.lmoment_order;
  Eigen::VectorXd raw = Eigen::VectorXd::Zero(n);

  if (cfg.effect == PlantedEffect::scalar) {
    for (int i = 0; i < n; ++i) raw(i) = subject_mean(out.panel.subjects[static_cast<std::size_t>(i)]);
  } else if (cfg.effect == PlantedEffect::temporal) {
    gt.beta_t.resize(static_cast<Eigen::Index>(t_grid.size()));
    for (std::size_t k = 0; k < t_grid.size(); ++k) gt.beta_t(static_cast<Eigen::Index>(k)) = detail::shape_beta_t(t_grid[k]);
    for (int i = 0; i < n; ++i) {
      LMomentCurveSet lm = time_varying_l_moments(out.panel.subjects[static_cast<std::size_t>(i)], t_grid, h, 1);
      raw(i) = integrate_curve_product(t_grid, lm.curves.row(0).transpose(), gt.beta_t);
    }
  } else if (cfg.effect == PlantedEffect::distributional) {
    gt.beta_p.resize(static_cast<Eigen::Index>(p_grid.size()));
    for (std::size_t k = 0; k < p_grid.size(); ++k) gt.beta_p(static_cast<Eigen::Index>(k)) = detail::shape_beta_p(p_grid[k]);
    for (int i = 0; i < n; ++i) {
      const SubjectSeries& s = out.panel.subjects[static_cast<std::size_t>(i)];
      std::vector<double> pooled;
      for (const auto& day : s.days)
        for (std::size_t m = 0; m < day.values.size(); ++m)
          if (day.observed[m]) pooled.push_back(day.values[m]);
      QuantileFunction q = quantile_function(std::move(pooled), p_grid);
      Eigen::VectorXd qv = Eigen::Map<const Eigen::VectorXd>(q.values.data(), static_cast<Eigen::Index>(q.values.size()));
      raw(i) = integrate_curve_product(p_grid, qv, gt.beta_p);
    }
  } else if (cfg.effect == PlantedEffect::td_surface) {
    gt.beta_surface.resize(static_cast<Eigen::Index>(t_grid.size()), static_cast<Eigen::Index>(p_grid.size()));
    for (std::size_t a = 0; a < t_grid.size(); ++a)
      for (std::size_t b = 0; b < p_grid.size(); ++b)
        gt.beta_surface(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
            detail::shape_beta_tp(t_grid[a], p_grid[b]);
    for (int i = 0; i < n; ++i) {
      TDSurface surf = td_surface(out.panel.subjects[static_cast<std::size_t>(i)], t_grid, p_grid, h);
      raw(i) = integrate_surface_product(t_grid, p_grid, surf.values, gt.beta_surface);
    }
  } else if (cfg.effect == PlantedEffect::lmoment_order_r) {
    gt.beta_lmom_t = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(t_grid.size()));
    for (int i = 0; i < n; ++i) {
      LMomentCurveSet lm = time_varying_l_moments(out.panel.subjects[static_cast<std::size_t>(i)],
                                                  t_grid, h, cfg.lmoment_order);
      raw(i) = integrate_curve_product(t_grid, lm.curves.row(cfg.lmoment_order - 1).transpose(),
                                       gt.beta_lmom_t);
    }
  }

  gt.eta_pa = Eigen::VectorXd::Zero(n);
  gt.scale = 0.0;
  if (cfg.effect != PlantedEffect::none) {
    double mean = raw.mean();
    double sd = std::sqrt((raw.array() - mean).square().sum() / std::max(1, n - 1));
    if (sd <= 0.0) fail(ErrorCategory::config, "synth", "planted effect has zero variance");
    gt.scale = cfg.effect_size / sd;
    gt.eta_pa = (raw.array() - mean).matrix() * gt.scale;
    if (cfg.effect == PlantedEffect::scalar) gt.beta_scalar = gt.scale;
    if (cfg.effect == PlantedEffect::temporal) gt.beta_t *= gt.scale;
    if (cfg.effect == PlantedEffect::distributional) gt.beta_p *= gt.scale;
    if (cfg.effect == PlantedEffect::td_surface) gt.beta_surface *= gt.scale;
    if (cfg.effect == PlantedEffect::lmoment_order_r) gt.beta_lmom_t *= gt.scale;
  }

  // covariate effects kept modest; intercept centers the linear predictor
  const double gamma_age = -0.02 * cfg.covariate_effect_scale;
  const double gamma_female = 0.4 * cfg.covariate_effect_scale;
  gt.eta_total.resize(n);
  for (int i = 0; i < n; ++i)
    gt.eta_total(i) = gt.eta_pa(i) + gamma_age * (age[static_cast<std::size_t>(i)] - 73.0) +
                      gamma_female * (female[static_cast<std::size_t>(i)] - 0.5);

  Rng yrng(cfg.seed, 0x2000);
  for (int i = 0; i < n; ++i) {
    SubjectRecord rec;
    rec.subject_id = out.panel.subjects[static_cast<std::size_t>(i)].subject_id;
    rec.covariates = {age[static_cast<std::size_t>(i)], female[static_cast<std::size_t>(i)]};
    if (cfg.outcome == Family::logit)
      rec.outcome = yrng.bernoulli(logit_inv(gt.eta_total(i))) ? 1.0 : 0.0;
    else
      rec.outcome = gt.eta_total(i) + cfg.noise * yrng.normal();
    out.records.push_back(std::move(rec));
  }
  return out;
}

}  // namespace tdr
